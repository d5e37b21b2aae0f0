//! Bi-level optimization with forward-mode hypergradients and DMD-based
//! estimation of end-of-training ("global") hypergradients from a short window
//! of per-step ("local") hypergradients.

pub mod dmd;
pub mod driver;
pub mod numerics;
pub mod tangent;
pub mod tasks;
