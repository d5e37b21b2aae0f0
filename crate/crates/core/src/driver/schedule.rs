use serde::{Deserialize, Serialize};

use crate::dmd::{GlocalSettings, DEFAULT_DIVERGENCE_TOL, DEFAULT_MODE_HORIZON, DEFAULT_UNIT_CIRCLE_TOL};
use crate::numerics::DEFAULT_RANK_RTOL;

use super::DriverError;

/// Inner/outer step layout and DMD settings for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    /// Total inner steps `T`.
    pub total_steps: u64,
    /// Inner steps per outer step `τ`.
    pub tau: u64,
    /// Trailing hypergradients fed to DMD `σ`.
    pub sigma: u64,
    /// Hankel delay `m`.
    pub delay_m: usize,
    pub unit_circle_tol: f64,
    pub divergence_tol: f64,
    pub rank_rtol: f64,
    /// Horizon of the logged mode-magnitude series.
    pub mode_horizon: usize,
    /// Inner-step logging stride for train/validation loss.
    pub log_stride: u64,
    /// Zero the tangent at every outer-step boundary (ablation).
    pub reset_tangent: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            total_steps: 2000,
            tau: 100,
            sigma: 80,
            delay_m: 10,
            unit_circle_tol: DEFAULT_UNIT_CIRCLE_TOL,
            divergence_tol: DEFAULT_DIVERGENCE_TOL,
            rank_rtol: DEFAULT_RANK_RTOL,
            mode_horizon: DEFAULT_MODE_HORIZON,
            log_stride: 10,
            reset_tangent: false,
        }
    }
}

impl Schedule {
    pub fn outer_steps(&self) -> u64 {
        self.total_steps / self.tau
    }

    pub fn validate(&self) -> Result<(), DriverError> {
        let bad = |msg: String| Err(DriverError::Schedule(msg));
        if self.tau == 0 || self.total_steps == 0 {
            return bad(format!(
                "T and tau must be positive (T = {}, tau = {})",
                self.total_steps, self.tau
            ));
        }
        if self.total_steps % self.tau != 0 {
            return bad(format!(
                "tau = {} must divide T = {}",
                self.tau, self.total_steps
            ));
        }
        if self.delay_m == 0 {
            return bad("delay m must be at least 1".into());
        }
        if (self.delay_m as u64) + 1 > self.sigma || self.sigma > self.tau {
            return bad(format!(
                "need m + 1 <= sigma <= tau (m = {}, sigma = {}, tau = {})",
                self.delay_m, self.sigma, self.tau
            ));
        }
        if self.log_stride == 0 {
            return bad("log_stride must be positive".into());
        }
        if !(self.unit_circle_tol >= 0.0 && self.divergence_tol >= 0.0 && self.rank_rtol > 0.0) {
            return bad("tolerances must be non-negative (rank_rtol positive)".into());
        }
        Ok(())
    }

    pub fn glocal_settings(&self) -> GlocalSettings {
        GlocalSettings {
            delay_m: self.delay_m,
            rank_rtol: self.rank_rtol,
            unit_circle_tol: self.unit_circle_tol,
            divergence_tol: self.divergence_tol,
            horizon: self.mode_horizon,
        }
    }
}
