//! Weight compression by low-rank plus column-sparse approximation.
//!
//! Each weight matrix `W` is split into `U·V + S` from its truncated SVD.
//! Training then prunes whole columns of `S` on a cubic schedule, ranked by
//! smoothed `|weight × gradient|` sensitivity pooled across all layers.
//!
//! Module map:
//!
//! - [`linalg`]: dense matrices and a Jacobi SVD
//! - [`decomposition`]: the factorized layer and parameter accounting
//! - [`importance`]: sensitivity, smoothing, neuron scores, histograms
//! - [`schedule`]: the cubic remaining-fraction schedule
//! - [`pruner`]: global top-`p` column selection and the dense baseline
//! - [`harness`]: synthetic tasks, a small tanh network and the training loop
//! - [`io`]: checkpoints, run configs, CSV output and the command implementations

pub mod decomposition;
pub mod error;
pub mod harness;
pub mod importance;
pub mod io;
pub mod linalg;
pub mod pruner;
pub mod rng;
pub mod schedule;

pub use decomposition::{rank_from_budget, remaining_ratio, CompressionBudget, FactorizedLayer};
pub use error::{Error, Result};
pub use linalg::{frobenius_norm, matmul, svd, DenseMatrix, SvdResult};
pub use schedule::PruneSchedule;

#[cfg(test)]
pub(crate) mod test_support {
    pub use crate::rng::gaussian_matrix as random_matrix;
}
