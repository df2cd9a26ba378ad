//! Sensitivity scores: `|w·∂L/∂w|` per entry, smoothed across steps with an
//! exponential moving average, then averaged down each column into one score
//! per neuron.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Elementwise `|w_ij · g_ij|`.
pub fn instant_sensitivity(w: &DenseMatrix, grad: &DenseMatrix) -> Result<DenseMatrix> {
    if w.shape() != grad.shape() {
        return Err(Error::shape("instant_sensitivity", w.shape(), grad.shape()));
    }
    w.zip_with("instant_sensitivity", grad, |a, b| (a * b).abs())
}

/// Smoothed sensitivity for one tracked matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceState {
    smoothed: DenseMatrix,
    beta: f64,
    step_count: u64,
}

impl ImportanceState {
    pub fn new(rows: usize, cols: usize, beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::Range {
                what: "beta",
                value: beta,
                range: "[0, 1)".into(),
            });
        }
        Ok(Self {
            smoothed: DenseMatrix::zeros(rows, cols),
            beta,
            step_count: 0,
        })
    }

    pub fn smoothed(&self) -> &DenseMatrix {
        &self.smoothed
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Folds one instant score in. The first update copies `instant`
    /// verbatim; later ones compute `β·Ī + (1 − β)·I`.
    pub fn update(&mut self, instant: &DenseMatrix) -> Result<()> {
        if instant.shape() != self.smoothed.shape() {
            return Err(Error::shape("ema_update", self.smoothed.shape(), instant.shape()));
        }
        if self.step_count == 0 {
            self.smoothed = instant.clone();
        } else {
            let beta = self.beta;
            for (s, &i) in self.smoothed.as_mut_slice().iter_mut().zip(instant.as_slice()) {
                *s = beta * *s + (1.0 - beta) * i;
            }
        }
        self.step_count += 1;
        Ok(())
    }

    /// Per-column means of the smoothed scores.
    pub fn neuron_scores(&self) -> Vec<f64> {
        neuron_scores(&self.smoothed)
    }
}

/// Value-style wrapper around [`ImportanceState::update`].
pub fn ema_update(mut state: ImportanceState, instant: &DenseMatrix) -> Result<ImportanceState> {
    state.update(instant)?;
    Ok(state)
}

/// Column means: `Γ_i = (1/d1)·Σ_j Ī_{ji}`.
pub fn neuron_scores(smoothed: &DenseMatrix) -> Vec<f64> {
    let (rows, cols) = smoothed.shape();
    let mut sums = vec![0.0; cols];
    for i in 0..rows {
        for (acc, &x) in sums.iter_mut().zip(smoothed.row(i)) {
            *acc += x;
        }
    }
    if rows > 0 {
        sums.iter_mut().for_each(|s| *s /= rows as f64);
    }
    sums
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub low: f64,
    pub high: f64,
    pub count: usize,
}

/// Uniform histogram over `[min, max]` of `scores`.
///
/// Bins are right-open except the last, which also takes `max`. When every
/// score is equal a single bin holds them all.
pub fn export_histogram(scores: &[f64], bin_count: usize) -> Result<Vec<HistogramBin>> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("histogram scores"));
    }
    if bin_count == 0 {
        return Err(Error::Range {
            what: "bin_count",
            value: 0.0,
            range: ">= 1".into(),
        });
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(vec![HistogramBin {
            low: lo,
            high: hi,
            count: scores.len(),
        }]);
    }
    let width = (hi - lo) / bin_count as f64;
    let mut bins: Vec<HistogramBin> = (0..bin_count)
        .map(|b| HistogramBin {
            low: lo + width * b as f64,
            high: if b + 1 == bin_count {
                hi
            } else {
                lo + width * (b + 1) as f64
            },
            count: 0,
        })
        .collect();
    for &s in scores {
        let mut idx = (((s - lo) / width).floor() as usize).min(bin_count - 1);
        // floating edges: keep the right-open convention exact
        while idx > 0 && s < bins[idx].low {
            idx -= 1;
        }
        while idx + 1 < bin_count && s >= bins[idx + 1].low {
            idx += 1;
        }
        bins[idx].count += 1;
    }
    Ok(bins)
}
