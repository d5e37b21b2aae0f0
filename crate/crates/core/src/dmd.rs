//! Exact DMD over Hankel-embedded hypergradient trajectories.
//!
//! A trajectory `h_1..h_σ ∈ R^q` is lifted to `g_t = [h_t; …; h_{t+m−1}]`,
//! a reduced linear operator is fitted on consecutive snapshot pairs, and the
//! modes whose eigenvalue sits at 1 give the steady state the trajectory is
//! heading to.

use std::io::{self, Write};

use nalgebra::{Complex, DVector};

use crate::numerics::{
    eig_nonsymmetric, least_squares_solve, thin_svd, to_complex, ComplexMatrix, ComplexVector,
    LeastSquares, LinalgError, RealMatrix, DEFAULT_RANK_RTOL,
};

pub const DEFAULT_UNIT_CIRCLE_TOL: f64 = 0.05;
pub const DEFAULT_DIVERGENCE_TOL: f64 = 0.05;
pub const DEFAULT_MODE_HORIZON: usize = 100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DmdError {
    #[error("trajectory too short: need at least {required} snapshots for delay {delay_m}, got {got}")]
    TooShort {
        required: usize,
        got: usize,
        delay_m: usize,
    },
    #[error("delay must be at least 1")]
    ZeroDelay,
    #[error("hypergradient has length {got}, trajectory expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite entry in hypergradient at step {step}")]
    NonFinite { step: usize },
    #[error("snapshot matrices differ in shape: X is {x_rows}x{x_cols}, Xp is {xp_rows}x{xp_cols}")]
    ShapeMismatch {
        x_rows: usize,
        x_cols: usize,
        xp_rows: usize,
        xp_cols: usize,
    },
    #[error("lifted dimension {rows} is not a multiple of q = {dim_q}")]
    BadLiftedDimension { rows: usize, dim_q: usize },
    #[error("Hankel shift structure violated at column {column}, block {block}")]
    ShiftStructure { column: usize, block: usize },
    #[error("degenerate trajectory: snapshot matrix has numerical rank 0")]
    Degenerate,
    #[error("anchor has length {got}, model lifts to {expected}")]
    AnchorMismatch { expected: usize, got: usize },
    #[error("amplitudes have not been fitted")]
    Unfitted,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Local hypergradients collected within one outer interval, in inner-step order.
#[derive(Debug, Clone, PartialEq)]
pub struct HypergradTrajectory {
    dim_q: usize,
    steps: Vec<DVector<f64>>,
}

impl HypergradTrajectory {
    pub fn new(dim_q: usize) -> Self {
        Self {
            dim_q,
            steps: Vec::new(),
        }
    }

    pub fn from_steps(dim_q: usize, steps: Vec<DVector<f64>>) -> Result<Self, DmdError> {
        let mut traj = Self::new(dim_q);
        for h in steps {
            traj.push(h)?;
        }
        Ok(traj)
    }

    /// Scalar trajectory convenience (q = 1).
    pub fn from_scalars(values: &[f64]) -> Result<Self, DmdError> {
        Self::from_steps(1, values.iter().map(|&v| DVector::from_element(1, v)).collect())
    }

    pub fn push(&mut self, h: DVector<f64>) -> Result<(), DmdError> {
        if h.len() != self.dim_q {
            return Err(DmdError::LengthMismatch {
                expected: self.dim_q,
                got: h.len(),
            });
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(DmdError::NonFinite {
                step: self.steps.len(),
            });
        }
        self.steps.push(h);
        Ok(())
    }

    pub fn dim_q(&self) -> usize {
        self.dim_q
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[DVector<f64>] {
        &self.steps
    }

    pub fn last(&self) -> Option<&DVector<f64>> {
        self.steps.last()
    }

    /// The last `sigma` snapshots (all of them if fewer were collected).
    pub fn trailing(&self, sigma: usize) -> HypergradTrajectory {
        let start = self.steps.len().saturating_sub(sigma);
        HypergradTrajectory {
            dim_q: self.dim_q,
            steps: self.steps[start..].to_vec(),
        }
    }

    pub fn clear(&mut self) {
        self.steps.clear();
    }
}

/// Snapshot pair `(X, Xp)` with the embedding it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshots {
    pub x: RealMatrix,
    pub xp: RealMatrix,
    pub dim_q: usize,
    pub delay_m: usize,
}

impl Snapshots {
    /// Plain snapshot pair for vanilla DMD (no delay).
    pub fn plain(x: RealMatrix, xp: RealMatrix) -> Result<Self, DmdError> {
        check_shapes(&x, &xp)?;
        let dim_q = x.nrows();
        Ok(Self {
            x,
            xp,
            dim_q,
            delay_m: 1,
        })
    }

    pub fn lifted_dim(&self) -> usize {
        self.x.nrows()
    }

    /// Last embedded snapshot, i.e. the final column of `Xp`.
    pub fn last_snapshot(&self) -> DVector<f64> {
        self.xp.column(self.xp.ncols() - 1).into_owned()
    }

    /// Check that block `r` of column `t` equals block `r−1` of column `t+1`,
    /// for `X` and across the `X`/`Xp` boundary.
    pub fn verify_shift_structure(&self) -> Result<(), DmdError> {
        let q = self.dim_q;
        let cols = self.x.ncols();
        for t in 0..cols {
            for r in 1..self.delay_m {
                let next = if t + 1 < cols {
                    self.x.column(t + 1)
                } else {
                    self.xp.column(t)
                };
                let here = self.x.column(t);
                if here.rows(r * q, q) != next.rows((r - 1) * q, q) {
                    return Err(DmdError::ShiftStructure { column: t, block: r });
                }
            }
            if self.x.column(t).rows(q, (self.delay_m - 1) * q)
                != self.xp.column(t).rows(0, (self.delay_m - 1) * q)
            {
                return Err(DmdError::ShiftStructure { column: t, block: 0 });
            }
        }
        Ok(())
    }
}

fn check_shapes(x: &RealMatrix, xp: &RealMatrix) -> Result<(), DmdError> {
    if x.shape() != xp.shape() {
        return Err(DmdError::ShapeMismatch {
            x_rows: x.nrows(),
            x_cols: x.ncols(),
            xp_rows: xp.nrows(),
            xp_cols: xp.ncols(),
        });
    }
    if x.ncols() == 0 || x.nrows() == 0 {
        return Err(DmdError::Degenerate);
    }
    Ok(())
}

/// Stack `m` consecutive snapshots into each column: `X[:, t] = [h_t; …; h_{t+m−1}]`
/// and `Xp[:, t] = X[:, t+1]`, for `σ − m` columns.
pub fn hankel_embed(traj: &HypergradTrajectory, m: usize) -> Result<Snapshots, DmdError> {
    if m == 0 {
        return Err(DmdError::ZeroDelay);
    }
    let sigma = traj.len();
    if sigma < m + 1 {
        return Err(DmdError::TooShort {
            required: m + 1,
            got: sigma,
            delay_m: m,
        });
    }
    let q = traj.dim_q();
    let cols = sigma - m;
    let lifted = RealMatrix::from_fn(m * q, cols + 1, |row, col| {
        traj.steps()[col + row / q][row % q]
    });
    Ok(Snapshots {
        x: lifted.columns(0, cols).into_owned(),
        xp: lifted.columns(1, cols).into_owned(),
        dim_q: q,
        delay_m: m,
    })
}

/// Finite-dimensional Koopman approximation fitted by exact DMD.
#[derive(Debug, Clone)]
pub struct KoopmanModel {
    pub delay_m: usize,
    pub dim_q: usize,
    pub eigenvalues: Vec<Complex<f64>>,
    /// Unit-norm lifted modes as columns (`mq × r`).
    pub modes: ComplexMatrix,
    pub amplitudes: Option<ComplexVector>,
    /// `‖Xp − U K̃ Uᵀ X‖_F`.
    pub fit_residual: f64,
    pub spectral_radius: f64,
    /// `‖anchor − modes·b‖₂` from the last amplitude fit.
    pub amplitude_residual: Option<f64>,
    pub eigenvector_condition: f64,
    /// POD basis `U` (`mq × r`) and reduced operator `K̃` (`r × r`).
    pub basis: RealMatrix,
    pub reduced_operator: RealMatrix,
}

impl KoopmanModel {
    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn lifted_dim(&self) -> usize {
        self.modes.nrows()
    }

    /// One step of the fitted operator in the lifted space: `U K̃ Uᵀ g`.
    pub fn advance(&self, g: &DVector<f64>) -> DVector<f64> {
        &self.basis * (&self.reduced_operator * (self.basis.transpose() * g))
    }

    fn fitted_amplitudes(&self) -> Result<&ComplexVector, DmdError> {
        self.amplitudes.as_ref().ok_or(DmdError::Unfitted)
    }
}

pub fn fit_dmd(snapshots: &Snapshots, rank_rtol: f64) -> Result<KoopmanModel, DmdError> {
    let Snapshots {
        x,
        xp,
        dim_q,
        delay_m,
    } = snapshots;
    check_shapes(x, xp)?;
    if x.nrows() % dim_q != 0 || x.nrows() / dim_q != *delay_m {
        return Err(DmdError::BadLiftedDimension {
            rows: x.nrows(),
            dim_q: *dim_q,
        });
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(DmdError::Degenerate);
    }
    let svd = thin_svd(x)?;
    let rank = svd.rank(rank_rtol);
    if rank == 0 {
        return Err(DmdError::Degenerate);
    }
    let svd = svd.truncate(rank);
    let u = svd.u;
    let mut v_sinv = svd.v;
    for (j, s) in svd.singular_values.iter().enumerate() {
        v_sinv.column_mut(j).unscale_mut(*s);
    }
    let k_tilde = u.transpose() * xp * v_sinv;
    let eig = eig_nonsymmetric(&k_tilde)?;

    let mut modes = to_complex(&u) * &eig.eigenvectors;
    for mut col in modes.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col.unscale_mut(norm);
        }
    }
    let fit_residual = (xp - &u * (&k_tilde * (u.transpose() * x))).norm();
    let spectral_radius = eig
        .eigenvalues
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max);

    Ok(KoopmanModel {
        delay_m: *delay_m,
        dim_q: *dim_q,
        eigenvalues: eig.eigenvalues,
        modes,
        amplitudes: None,
        fit_residual,
        spectral_radius,
        amplitude_residual: None,
        eigenvector_condition: eig.condition_estimate,
        basis: u,
        reduced_operator: k_tilde,
    })
}

/// Least-squares amplitudes `b = argmin ‖modes·b − anchor‖₂`.
pub fn fit_amplitudes(model: &KoopmanModel, anchor: &DVector<f64>) -> Result<KoopmanModel, DmdError> {
    if anchor.len() != model.lifted_dim() {
        return Err(DmdError::AnchorMismatch {
            expected: model.lifted_dim(),
            got: anchor.len(),
        });
    }
    let target = anchor.map(|v| Complex::new(v, 0.0));
    let b = least_squares_solve(&model.modes, &target, LeastSquares::default())?;
    let residual = (&model.modes * &b - &target).norm();
    let mut fitted = model.clone();
    fitted.amplitudes = Some(b);
    fitted.amplitude_residual = Some(residual);
    Ok(fitted)
}

fn mode_sum(
    model: &KoopmanModel,
    b: &ComplexVector,
    rows: usize,
    steps: u32,
    include: impl Fn(usize) -> bool,
) -> ComplexVector {
    let mut acc = ComplexVector::zeros(rows);
    for (j, lambda) in model.eigenvalues.iter().enumerate() {
        if include(j) {
            let coeff = b[j] * lambda.powu(steps);
            acc.axpy(coeff, &model.modes.column(j).rows(0, rows), Complex::new(1.0, 0.0));
        }
    }
    acc
}

/// Real part of `Σ_j b_j λ_j^steps u_j` in the lifted space.
pub fn predict(model: &KoopmanModel, steps: u32) -> Result<DVector<f64>, DmdError> {
    let b = model.fitted_amplitudes()?;
    Ok(mode_sum(model, b, model.lifted_dim(), steps, |_| true).map(|c| c.re))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateEstimate {
    /// First q-block of the real part of the kept-mode sum.
    pub value: DVector<f64>,
    pub kept_mode_count: usize,
    pub kept: Vec<bool>,
    /// `‖Σ_excluded b_j u_j‖₂` on the first block.
    pub discarded_energy: f64,
    /// Norm of the imaginary part dropped from the kept-mode sum.
    pub imaginary_residue: f64,
    pub diverging: bool,
}

pub fn is_kept(lambda: Complex<f64>, unit_circle_tol: f64) -> bool {
    (lambda - Complex::new(1.0, 0.0)).norm() <= unit_circle_tol
}

pub fn steady_state(
    model: &KoopmanModel,
    unit_circle_tol: f64,
    divergence_tol: f64,
) -> Result<SteadyStateEstimate, DmdError> {
    let b = model.fitted_amplitudes()?;
    let kept: Vec<bool> = model
        .eigenvalues
        .iter()
        .map(|&l| is_kept(l, unit_circle_tol))
        .collect();
    let q = model.dim_q;
    let kept_sum = mode_sum(model, b, q, 0, |j| kept[j]);
    let excluded_sum = mode_sum(model, b, q, 0, |j| !kept[j]);
    Ok(SteadyStateEstimate {
        value: kept_sum.map(|c| c.re),
        kept_mode_count: kept.iter().filter(|&&k| k).count(),
        discarded_energy: excluded_sum.norm(),
        imaginary_residue: kept_sum.map(|c| c.im).norm(),
        diverging: model.spectral_radius > 1.0 + divergence_tol,
        kept,
    })
}

/// One row of the spectrum report.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumEntry {
    pub mode_index: usize,
    pub lambda: Complex<f64>,
    pub modulus: f64,
    pub amplitude_modulus: f64,
    pub kept: bool,
}

pub const SPECTRUM_CSV_HEADER: &str =
    "mode_index,re_lambda,im_lambda,modulus,amplitude_modulus,kept_flag";

impl SpectrumEntry {
    /// Comma-separated fields in [`SPECTRUM_CSV_HEADER`] order.
    pub fn csv_fields(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{}",
            self.mode_index,
            self.lambda.re,
            self.lambda.im,
            self.modulus,
            self.amplitude_modulus,
            u8::from(self.kept)
        )
    }
}

pub fn write_spectrum_csv<W: Write>(mut out: W, spectrum: &[SpectrumEntry]) -> io::Result<()> {
    writeln!(out, "{SPECTRUM_CSV_HEADER}")?;
    for entry in spectrum {
        writeln!(out, "{}", entry.csv_fields())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics {
    /// First block of the one-step residual `Xp_last − K X_last`.
    pub e_tau_norm: f64,
    pub spectrum: Vec<SpectrumEntry>,
    /// `mode_magnitudes[j][t] = |b_j λ_j^t|·‖u_j‖₂` for `t = 0..=horizon`.
    pub mode_magnitudes: Vec<Vec<f64>>,
    /// `Σ |b_j| |λ_j|^σ ‖u_j‖₂` over decaying modes outside the kept set.
    pub tail_bound: f64,
}

pub fn fit_diagnostics(
    model: &KoopmanModel,
    traj: &HypergradTrajectory,
    unit_circle_tol: f64,
    horizon: usize,
) -> Result<FitDiagnostics, DmdError> {
    let b = model.fitted_amplitudes()?;
    let snaps = hankel_embed(traj, model.delay_m)?;
    let last = snaps.x.ncols() - 1;
    let predicted = model.advance(&snaps.x.column(last).into_owned());
    let q = model.dim_q;
    let e_tau_norm = (snaps.xp.column(last).rows(0, q) - predicted.rows(0, q)).norm();

    let sigma = traj.len() as f64;
    let mut spectrum = Vec::with_capacity(model.rank());
    let mut mode_magnitudes = Vec::with_capacity(model.rank());
    let mut tail_bound = 0.0;
    for (j, &lambda) in model.eigenvalues.iter().enumerate() {
        let modulus = lambda.norm();
        let amp = b[j].norm();
        let mode_norm = model.modes.column(j).norm();
        let kept = is_kept(lambda, unit_circle_tol);
        spectrum.push(SpectrumEntry {
            mode_index: j,
            lambda,
            modulus,
            amplitude_modulus: amp,
            kept,
        });
        mode_magnitudes.push(
            (0..=horizon)
                .map(|t| amp * modulus.powi(t as i32) * mode_norm)
                .collect(),
        );
        if modulus < 1.0 && !kept {
            tail_bound += amp * modulus.powf(sigma) * mode_norm;
        }
    }
    Ok(FitDiagnostics {
        e_tau_norm,
        spectrum,
        mode_magnitudes,
        tail_bound,
    })
}

/// Settings for the full window-to-estimate pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlocalSettings {
    pub delay_m: usize,
    pub rank_rtol: f64,
    pub unit_circle_tol: f64,
    pub divergence_tol: f64,
    pub horizon: usize,
}

impl Default for GlocalSettings {
    fn default() -> Self {
        Self {
            delay_m: 10,
            rank_rtol: DEFAULT_RANK_RTOL,
            unit_circle_tol: DEFAULT_UNIT_CIRCLE_TOL,
            divergence_tol: DEFAULT_DIVERGENCE_TOL,
            horizon: DEFAULT_MODE_HORIZON,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GlocalFit {
    pub model: KoopmanModel,
    pub estimate: SteadyStateEstimate,
    pub diagnostics: FitDiagnostics,
}

/// Embed, fit, anchor amplitudes at the last embedded snapshot, and extract the steady state.
pub fn glocal_estimate(
    traj: &HypergradTrajectory,
    settings: &GlocalSettings,
) -> Result<GlocalFit, DmdError> {
    let snaps = hankel_embed(traj, settings.delay_m)?;
    snaps.verify_shift_structure()?;
    let model = fit_dmd(&snaps, settings.rank_rtol)?;
    let model = fit_amplitudes(&model, &snaps.last_snapshot())?;
    let estimate = steady_state(&model, settings.unit_circle_tol, settings.divergence_tol)?;
    let diagnostics = fit_diagnostics(&model, traj, settings.unit_circle_tol, settings.horizon)?;
    Ok(GlocalFit {
        model,
        estimate,
        diagnostics,
    })
}
