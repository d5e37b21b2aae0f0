use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::TangentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Sigmoid,
    Identity,
}

impl Transform {
    /// Value and derivative with respect to the raw coordinate.
    pub fn apply(self, raw: f64) -> (f64, f64) {
        match self {
            Transform::Sigmoid => {
                let v = sigmoid(raw);
                (v, v * (1.0 - v))
            }
            Transform::Identity => (raw, 1.0),
        }
    }

    pub fn inverse(self, value: f64) -> Option<f64> {
        match self {
            Transform::Sigmoid if value > 0.0 && value < 1.0 => Some((value / (1.0 - value)).ln()),
            Transform::Sigmoid => None,
            Transform::Identity => Some(value),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Unconstrained hyperparameters `φ ∈ R^q` with per-entry output transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    raw: Vec<f64>,
    transforms: Vec<Transform>,
    names: Vec<String>,
}

/// Transformed values and the diagonal of `d value / d raw`.
#[derive(Debug, Clone, PartialEq)]
pub struct HpEval {
    pub values: Vec<f64>,
    pub jacobian_diag: Vec<f64>,
}

impl HpEval {
    pub fn q(&self) -> usize {
        self.values.len()
    }
}

impl HyperParams {
    pub fn new(
        raw: Vec<f64>,
        transforms: Vec<Transform>,
        names: Vec<String>,
    ) -> Result<Self, TangentError> {
        if raw.len() != transforms.len() || raw.len() != names.len() {
            return Err(TangentError::HyperParamShape {
                raw: raw.len(),
                transforms: transforms.len(),
                names: names.len(),
            });
        }
        Ok(Self {
            raw,
            transforms,
            names,
        })
    }

    /// Build from transformed (constrained) initial values.
    pub fn from_values<S: Into<String>>(
        entries: impl IntoIterator<Item = (S, Transform, f64)>,
    ) -> Result<Self, TangentError> {
        let mut hp = Self::new(Vec::new(), Vec::new(), Vec::new())?;
        for (name, transform, value) in entries {
            let name = name.into();
            let raw = transform
                .inverse(value)
                .filter(|r| r.is_finite())
                .ok_or_else(|| TangentError::ValueOutOfRange {
                    name: name.clone(),
                    value,
                })?;
            hp.push(name, transform, raw);
        }
        Ok(hp)
    }

    pub fn push(&mut self, name: impl Into<String>, transform: Transform, raw: f64) -> usize {
        self.raw.push(raw);
        self.transforms.push(transform);
        self.names.push(name.into());
        self.raw.len() - 1
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn raw_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.raw)
    }

    pub fn set_raw(&mut self, raw: &[f64]) {
        assert_eq!(raw.len(), self.raw.len(), "raw hyperparameter length");
        self.raw.copy_from_slice(raw);
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn transform(&self) -> HpEval {
        let (values, jacobian_diag) = self
            .raw
            .iter()
            .zip(&self.transforms)
            .map(|(&r, t)| t.apply(r))
            .unzip();
        HpEval {
            values,
            jacobian_diag,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.transform().values
    }
}

/// Where an optimizer hyperparameter comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HpSource {
    /// Index into the hyperparameter vector.
    Learned(usize),
    Fixed(f64),
}

impl HpSource {
    pub fn value(self, hp: &HpEval) -> f64 {
        match self {
            HpSource::Learned(i) => hp.values[i],
            HpSource::Fixed(v) => v,
        }
    }

    /// Derivative of the value with respect to raw entry `i`.
    pub fn partial(self, hp: &HpEval, i: usize) -> f64 {
        match self {
            HpSource::Learned(j) if j == i => hp.jacobian_diag[i],
            _ => 0.0,
        }
    }

    pub fn index(self) -> Option<usize> {
        match self {
            HpSource::Learned(i) => Some(i),
            HpSource::Fixed(_) => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero() {
        assert_eq!(Transform::Sigmoid.apply(0.0), (0.5, 0.25));
    }

    #[test]
    fn sigmoid_logit_of_tenth() {
        let (v, _) = Transform::Sigmoid.apply(-2.1972);
        assert!((v - 0.1).abs() < 1e-5);
        let raw = Transform::Sigmoid.inverse(0.1).unwrap();
        assert!((raw + 2.197_224_577).abs() < 1e-8);
    }

    #[test]
    fn identity_passes_through() {
        assert_eq!(Transform::Identity.apply(-3.5), (-3.5, 1.0));
    }

    #[test]
    fn sigmoid_extremes_stay_open_interval() {
        let (lo, _) = Transform::Sigmoid.apply(-30.0);
        let (hi, _) = Transform::Sigmoid.apply(30.0);
        assert!(lo > 0.0 && hi < 1.0);
    }

    #[test]
    fn from_values_round_trips() {
        let hp = HyperParams::from_values([
            ("lr", Transform::Sigmoid, 0.05),
            ("wd", Transform::Identity, 1e-4),
        ])
        .unwrap();
        let v = hp.values();
        assert!((v[0] - 0.05).abs() < 1e-15 && v[1] == 1e-4);
        assert_eq!(hp.index_of("wd"), Some(1));
    }

    #[test]
    fn from_values_rejects_out_of_range() {
        let err = HyperParams::from_values([("momentum", Transform::Sigmoid, 1.0)]).unwrap_err();
        assert!(err.to_string().contains("momentum"));
    }

    #[test]
    fn source_partials() {
        let hp = HyperParams::new(vec![0.0, 1.0], vec![Transform::Sigmoid; 2], vec!["a".into(), "b".into()])
            .unwrap()
            .transform();
        assert_eq!(HpSource::Learned(0).partial(&hp, 0), 0.25);
        assert_eq!(HpSource::Learned(0).partial(&hp, 1), 0.0);
        assert_eq!(HpSource::Fixed(0.3).partial(&hp, 0), 0.0);
        assert_eq!(HpSource::Fixed(0.3).value(&hp), 0.3);
    }
}
