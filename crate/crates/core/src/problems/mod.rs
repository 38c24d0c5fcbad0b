//! Differentiable test problems with exact gradient and Hessian-vector-product
//! oracles, and the datasets they train on.

mod data;
mod mlp;
mod quadratic;

pub use data::{abridged_indices, load_csv_dataset, make_two_moons, BatchSampler, Dataset};
pub use mlp::{Activation, LossKind, MlpOracle, MlpProblem};
pub use quadratic::{log_spaced, outlier_spectrum, QuadraticProblem};

use crate::error::Result;

/// Default cap on the abridged dataset used for Hessian-vector products.
pub const HESSIAN_BATCH: usize = 512;

/// Value and derivative oracles of a fixed objective.
///
/// Implementations must be pure: the same inputs always give the same outputs,
/// so oracles can be shared across threads.
pub trait HvpOracle: Sync {
    fn dim(&self) -> usize;
    fn loss_at(&self, theta: &[f64]) -> Result<f64>;
    fn grad_at(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)>;
    fn hvp_at(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>>;
}
