//! A weight matrix replaced by a low-rank pair plus a column-sparse residual.
//!
//! `W ≈ U·V + S` with `U: d1×r`, `V: r×d2` and `S: d1×d2`. Inputs are row
//! batches `X: n×d1`, so a layer maps `X ↦ (X·U)·V + X·S`.

use crate::error::{Error, Result};
use crate::linalg::{matmul, svd, DenseMatrix, SvdResult};

#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedLayer {
    u: DenseMatrix,
    v: DenseMatrix,
    s: DenseMatrix,
    live_columns: Vec<bool>,
}

/// Gradients of a scalar loss with respect to every input of
/// [`FactorizedLayer::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGradients {
    pub du: DenseMatrix,
    pub dv: DenseMatrix,
    pub ds: DenseMatrix,
    pub dx: DenseMatrix,
}

impl FactorizedLayer {
    /// Balanced truncated-SVD split of a pretrained matrix.
    ///
    /// Column `i` of `U` is `√σ_i·u_i`, row `i` of `V` is `√σ_i·v_iᵀ`, and `S`
    /// takes whatever the rank-`r` product misses, so `U·V + S` reproduces
    /// `w0` and every column starts live.
    pub fn init_from_pretrained(w0: &DenseMatrix, rank: usize) -> Result<Self> {
        check_rank(w0, rank)?;
        let decomposition = svd(w0)?;
        Self::init_from_svd(w0, &decomposition, rank)
    }

    /// Same as [`init_from_pretrained`](Self::init_from_pretrained) with a
    /// precomputed SVD of `w0`.
    pub fn init_from_svd(w0: &DenseMatrix, decomposition: &SvdResult, rank: usize) -> Result<Self> {
        check_rank(w0, rank)?;
        let (d1, d2) = w0.shape();
        if decomposition.left_vectors.rows() != d1 || decomposition.right_vectors.rows() != d2 {
            return Err(Error::shape(
                "init_from_svd",
                w0.shape(),
                (decomposition.left_vectors.rows(), decomposition.right_vectors.rows()),
            ));
        }
        let roots: Vec<f64> = decomposition.singular_values[..rank].iter().map(|s| s.sqrt()).collect();
        let u = DenseMatrix::from_fn(d1, rank, |i, p| roots[p] * decomposition.left_vectors.get(i, p));
        let v = DenseMatrix::from_fn(rank, d2, |p, j| roots[p] * decomposition.right_vectors.get(j, p));
        let s = w0.sub(&matmul(&u, &v)?)?;
        Ok(Self {
            u,
            v,
            s,
            live_columns: vec![true; d2],
        })
    }

    /// Assembles a layer from parts, checking shapes and that every dead
    /// column of `s` is zero.
    pub fn from_parts(u: DenseMatrix, v: DenseMatrix, s: DenseMatrix, live_columns: Vec<bool>) -> Result<Self> {
        if u.cols() != v.rows() || u.cols() == 0 {
            return Err(Error::shape("FactorizedLayer(u, v)", u.shape(), v.shape()));
        }
        if s.shape() != (u.rows(), v.cols()) {
            return Err(Error::shape("FactorizedLayer(s)", s.shape(), (u.rows(), v.cols())));
        }
        if live_columns.len() != s.cols() {
            return Err(Error::shape(
                "FactorizedLayer(live_columns)",
                (live_columns.len(), 1),
                (s.cols(), 1),
            ));
        }
        for (j, live) in live_columns.iter().enumerate() {
            if !live && !s.column_is_zero(j) {
                return Err(Error::Index(format!("dead column {j} of S is not zero")));
            }
        }
        Ok(Self { u, v, s, live_columns })
    }

    pub fn u(&self) -> &DenseMatrix {
        &self.u
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    pub fn s(&self) -> &DenseMatrix {
        &self.s
    }

    pub fn live_columns(&self) -> &[bool] {
        &self.live_columns
    }

    pub fn rank(&self) -> usize {
        self.u.cols()
    }

    /// `d1`
    pub fn in_dim(&self) -> usize {
        self.u.rows()
    }

    /// `d2`
    pub fn out_dim(&self) -> usize {
        self.v.cols()
    }

    pub fn live_count(&self) -> usize {
        self.live_columns.iter().filter(|&&l| l).count()
    }

    /// Stored parameters: both factors plus the live columns of `S`.
    pub fn param_count(&self) -> usize {
        self.rank() * (self.in_dim() + self.out_dim()) + self.in_dim() * self.live_count()
    }

    /// `(X·U)·V + X·S`, in that association order.
    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape("FactorizedLayer::forward", x.shape(), self.s.shape()));
        }
        let low = matmul(&matmul(x, &self.u)?, &self.v)?;
        low.add(&matmul(x, &self.s)?)
    }

    /// Reverse-mode gradients given the upstream gradient `dy = ∂L/∂Y`.
    pub fn backward(&self, x: &DenseMatrix, dy: &DenseMatrix) -> Result<FactorGradients> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape("FactorizedLayer::backward(x)", x.shape(), self.s.shape()));
        }
        if dy.shape() != (x.rows(), self.out_dim()) {
            return Err(Error::shape(
                "FactorizedLayer::backward(dy)",
                dy.shape(),
                (x.rows(), self.out_dim()),
            ));
        }
        let xt = x.transpose();
        let vt = self.v.transpose();
        let dy_vt = matmul(dy, &vt)?;
        let du = matmul(&xt, &dy_vt)?;
        let dv = matmul(&matmul(x, &self.u)?.transpose(), dy)?;
        let ds = matmul(&xt, dy)?;
        let dx = matmul(&dy_vt, &self.u.transpose())?.add(&matmul(dy, &self.s.transpose())?)?;
        Ok(FactorGradients { du, dv, ds, dx })
    }

    /// `U·V + S`
    pub fn reconstruct(&self) -> DenseMatrix {
        matmul(&self.u, &self.v)
            .and_then(|uv| uv.add(&self.s))
            .expect("factor shapes are checked at construction")
    }

    /// `U -= lr·dU`, `V -= lr·dV`.
    pub(crate) fn step_factors(&mut self, lr: f64, du: &DenseMatrix, dv: &DenseMatrix) -> Result<()> {
        self.u.axpy(-lr, du)?;
        self.v.axpy(-lr, dv)
    }

    /// `S -= lr·dS` on every column, live or not. Dead columns become
    /// nonzero until the next pruning call settles them.
    pub(crate) fn step_sparse(&mut self, lr: f64, ds: &DenseMatrix) -> Result<()> {
        self.s.axpy(-lr, ds)
    }

    /// Keeps columns flagged in `keep` and zeroes the rest.
    pub(crate) fn retain_columns(&mut self, keep: &[bool]) {
        debug_assert_eq!(keep.len(), self.out_dim());
        for (j, &k) in keep.iter().enumerate() {
            if !k {
                self.s.zero_column(j);
            }
            self.live_columns[j] = k;
        }
    }

    /// Zeroes `S` entirely and marks every column dead.
    pub fn drop_sparse(&mut self) {
        let keep = vec![false; self.out_dim()];
        self.retain_columns(&keep);
    }
}

fn check_rank(w0: &DenseMatrix, rank: usize) -> Result<()> {
    let max = w0.rows().min(w0.cols());
    if rank == 0 || rank > max {
        return Err(Error::Budget(format!(
            "rank {rank} outside 1..={max} for a {}x{} matrix",
            w0.rows(),
            w0.cols()
        )));
    }
    Ok(())
}

/// Global parameter budget, both entries as fractions of the pretrained
/// parameter count.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionBudget {
    /// Everything kept: factors plus live sparse columns.
    pub total_ratio: f64,
    /// The factors alone.
    pub lowrank_ratio: f64,
}

impl CompressionBudget {
    pub fn new(total_ratio: f64, lowrank_ratio: f64) -> Result<Self> {
        let b = Self {
            total_ratio,
            lowrank_ratio,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_ratio > 0.0 && self.total_ratio <= 1.0) {
            return Err(Error::Budget(format!(
                "total_ratio {} must lie in (0, 1]",
                self.total_ratio
            )));
        }
        if !(self.lowrank_ratio >= 0.0 && self.lowrank_ratio < self.total_ratio) {
            return Err(Error::Budget(format!(
                "lowrank_ratio {} must lie in [0, total_ratio = {})",
                self.lowrank_ratio, self.total_ratio
            )));
        }
        Ok(())
    }
}

/// Largest rank whose factor parameters `r·(d1 + d2)` fit in
/// `fraction·d1·d2`, never below 1 and never above `min(d1, d2)`.
pub fn rank_from_budget(d1: usize, d2: usize, lowrank_fraction: f64) -> usize {
    let raw = (lowrank_fraction * (d1 * d2) as f64 / (d1 + d2) as f64).floor();
    let r = if raw.is_finite() && raw >= 1.0 { raw as usize } else { 1 };
    r.min(d1.min(d2)).max(1)
}

/// Stored parameters over the original dense parameter count.
pub fn remaining_ratio(layers: &[FactorizedLayer], original_param_count: usize) -> f64 {
    let kept: usize = layers.iter().map(FactorizedLayer::param_count).sum();
    kept as f64 / original_param_count as f64
}
