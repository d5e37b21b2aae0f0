use serde::{Deserialize, Serialize};

use crate::dmd::GlocalFit;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Local,
    #[serde(alias = "global-greedy")]
    Global,
    Glocal,
    /// Non-greedy reference: every outer step retrains from scratch for `T` steps.
    GlobalFull,
    /// Fixed hyperparameters, no tangent propagation.
    NoHpo,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Local => "local",
            Strategy::Global => "global",
            Strategy::Glocal => "glocal",
            Strategy::GlobalFull => "global-full",
            Strategy::NoHpo => "no-hpo",
        }
    }

    pub fn parse(s: &str) -> Option<Strategy> {
        match s {
            "local" => Some(Strategy::Local),
            "global" | "global-greedy" => Some(Strategy::Global),
            "glocal" => Some(Strategy::Glocal),
            "global-full" => Some(Strategy::GlobalFull),
            "no-hpo" => Some(Strategy::NoHpo),
            _ => None,
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which hypergradient drove an outer update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Local,
    GlobalPlayout,
    Glocal,
    FallbackLocal,
    GlobalFull,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Local => "local",
            Source::GlobalPlayout => "global-playout",
            Source::Glocal => "glocal",
            Source::FallbackLocal => "fallback-local",
            Source::GlobalFull => "global-full",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerRecord {
    pub step: u64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypergradRecord {
    pub step: u64,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub mode_index: usize,
    pub re_lambda: f64,
    pub im_lambda: f64,
    pub modulus: f64,
    pub amplitude_modulus: f64,
    pub kept: bool,
}

/// DMD fit summary for one outer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmdSummary {
    pub rank: usize,
    pub spectral_radius: f64,
    pub kept_mode_count: usize,
    pub diverging: bool,
    pub fit_residual: f64,
    pub e_tau_norm: f64,
    pub tail_bound: f64,
    pub discarded_energy: f64,
    pub imaginary_residue: f64,
    /// `|λ − 1|` of the eigenvalue closest to 1.
    pub nearest_unit_distance: f64,
    pub spectrum: Vec<SpectrumRow>,
    pub mode_magnitudes: Vec<Vec<f64>>,
}

impl From<&GlocalFit> for DmdSummary {
    fn from(fit: &GlocalFit) -> Self {
        let d = &fit.diagnostics;
        let nearest_unit_distance = fit
            .model
            .eigenvalues
            .iter()
            .map(|l| (l - nalgebra::Complex::new(1.0, 0.0)).norm())
            .fold(f64::INFINITY, f64::min);
        DmdSummary {
            rank: fit.model.rank(),
            spectral_radius: fit.model.spectral_radius,
            kept_mode_count: fit.estimate.kept_mode_count,
            diverging: fit.estimate.diverging,
            fit_residual: fit.model.fit_residual,
            e_tau_norm: d.e_tau_norm,
            tail_bound: d.tail_bound,
            discarded_energy: fit.estimate.discarded_energy,
            imaginary_residue: fit.estimate.imaginary_residue,
            nearest_unit_distance,
            spectrum: d
                .spectrum
                .iter()
                .map(|e| SpectrumRow {
                    mode_index: e.mode_index,
                    re_lambda: e.lambda.re,
                    im_lambda: e.lambda.im,
                    modulus: e.modulus,
                    amplitude_modulus: e.amplitude_modulus,
                    kept: e.kept,
                })
                .collect(),
            mode_magnitudes: d.mode_magnitudes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    /// 1-based outer step.
    pub s: u64,
    /// Inner step at which the update happened.
    pub step: u64,
    pub phi_raw_before: Vec<f64>,
    pub phi_raw_after: Vec<f64>,
    pub phi_after: Vec<f64>,
    pub hypergrad: Vec<f64>,
    pub source: Source,
    /// False when the update was skipped (non-finite hypergradient).
    pub applied: bool,
    pub val_loss: f64,
    pub dmd: Option<DmdSummary>,
    pub note: Option<String>,
    pub theta_hash: u64,
    pub checkpoint_hash: Option<u64>,
    pub restored_hash: Option<u64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Diverged { step: u64, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub strategy: Strategy,
    pub hp_names: Vec<String>,
    pub status: RunStatus,
    pub inner: Vec<InnerRecord>,
    pub outer: Vec<OuterRecord>,
    pub hypergrads: Vec<HypergradRecord>,
    pub final_metrics: Vec<(String, f64)>,
    pub final_phi_raw: Vec<f64>,
    pub final_phi: Vec<f64>,
    pub final_theta_hash: u64,
    /// Inner steps executed, including playouts and restarts.
    pub inner_steps_executed: u64,
    pub wall_time_s: f64,
}

impl RunLog {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.final_metrics
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| *v)
    }

    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}
