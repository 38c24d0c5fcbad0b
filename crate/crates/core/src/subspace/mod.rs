//! Dominant/bulk subspace machinery: the `α P_k + γ P_k^⊥` projector, the
//! Lanczos (LPE), PCA (PPE) and block-wise PCA (BPPE) estimators, and
//! diagnostics for subspace tracking and variance separation.

mod estimators;
mod history;
mod partition;
mod projector;

pub use estimators::{
    bppe_estimate, lpe_estimate, ppe_estimate, projection_variance, LanczosEstimate, BREAKDOWN_TOL,
    LANCZOS_EXTRA_ITERS,
};
pub use history::UpdateHistory;
pub use partition::{Block, BlockPartition, Role};
pub use projector::{Projector, BASIS_TOL};

use crate::error::{Error, Result};
use crate::numerics::{sin_theta_distance, DenseMatrix};

/// Time-indexed sinΘ distances between an estimated and a reference subspace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SinThetaTracker {
    records: Vec<(u64, f64)>,
}

impl SinThetaTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records and returns `sinΘ(U_est, U_true)` at step `t`; steps must increase.
    pub fn track(
        &mut self,
        t: u64,
        estimate: &DenseMatrix,
        reference: &DenseMatrix,
    ) -> Result<f64> {
        if self.records.last().is_some_and(|&(last, _)| t <= last) {
            return Err(Error::Validation(format!(
                "step {t} is not after the last record"
            )));
        }
        let s = sin_theta_distance(estimate, reference)?;
        self.records.push((t, s));
        Ok(s)
    }

    pub fn records(&self) -> &[(u64, f64)] {
        &self.records
    }

    /// Least-squares slope of `ln sinΘ` against `t` over records with `t` in
    /// `[from, to]` and positive distance.
    pub fn log_slope(&self, from: u64, to: u64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .records
            .iter()
            .filter(|&&(t, s)| t >= from && t <= to && s > 0.0)
            .map(|&(t, s)| (t as f64, s.ln()))
            .collect();
        least_squares_slope(&pts)
    }
}

/// Slope of the least-squares line through `pts`, if at least two distinct abscissae.
pub fn least_squares_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}
