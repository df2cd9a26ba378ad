//! Global top-`p` structured pruning over every sparse matrix at once, and
//! the dense iterative-pruning baseline that uses the same selection.

use std::collections::BTreeSet;

use crate::decomposition::FactorizedLayer;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// One neuron (column) of one tracked matrix, with its score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronRef {
    pub layer_index: usize,
    pub column_index: usize,
    pub score: f64,
}

/// Set of retained `(layer_index, column_index)` pairs.
pub type RetainedSet = BTreeSet<(usize, usize)>;

/// Flattens per-layer score vectors into neuron references.
pub fn neuron_refs(scores_per_layer: &[Vec<f64>]) -> Vec<NeuronRef> {
    scores_per_layer
        .iter()
        .enumerate()
        .flat_map(|(layer_index, scores)| {
            scores.iter().enumerate().map(move |(column_index, &score)| NeuronRef {
                layer_index,
                column_index,
                score,
            })
        })
        .collect()
}

/// Number of neurons kept at fraction `p` out of `n`: `⌈p·n⌉`.
pub fn retained_count(p: f64, n: usize) -> usize {
    ((p * n as f64).ceil() as usize).min(n)
}

/// The `⌈p·N⌉` highest-scoring neurons across all layers.
///
/// Ties are broken towards lower `(layer_index, column_index)`.
pub fn select_retained(all_scores: &[NeuronRef], p: f64) -> Result<RetainedSet> {
    if all_scores.is_empty() {
        return Err(Error::EmptyInput("neuron scores"));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Range {
            what: "retained fraction",
            value: p,
            range: "(0, 1]".into(),
        });
    }
    let k = retained_count(p, all_scores.len());
    let mut order: Vec<&NeuronRef> = all_scores.iter().collect();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.layer_index.cmp(&b.layer_index))
            .then(a.column_index.cmp(&b.column_index))
    });
    let retained: RetainedSet = order[..k].iter().map(|n| (n.layer_index, n.column_index)).collect();
    if retained.len() != k {
        return Err(Error::Index("duplicate (layer, column) in neuron scores".into()));
    }
    Ok(retained)
}

/// Per-layer keep masks for `retained`, validating every reference.
pub fn keep_masks(widths: &[usize], retained: &RetainedSet) -> Result<Vec<Vec<bool>>> {
    let mut masks: Vec<Vec<bool>> = widths.iter().map(|&w| vec![false; w]).collect();
    for &(layer, col) in retained {
        let mask = masks
            .get_mut(layer)
            .ok_or_else(|| Error::Index(format!("layer {layer} of {}", widths.len())))?;
        let slot = mask
            .get_mut(col)
            .ok_or_else(|| Error::Index(format!("column {col} of layer {layer}")))?;
        *slot = true;
    }
    Ok(masks)
}

/// Keeps the retained columns of each layer's (already updated) `S` and
/// zeroes the rest, updating the liveness masks to match.
pub fn apply_prune(layers: &mut [FactorizedLayer], retained: &RetainedSet) -> Result<()> {
    let widths: Vec<usize> = layers.iter().map(FactorizedLayer::out_dim).collect();
    let masks = keep_masks(&widths, retained)?;
    for (layer, mask) in layers.iter_mut().zip(&masks) {
        layer.retain_columns(mask);
    }
    Ok(())
}

/// Single-matrix iterative-pruning step: zero every column of `w` that is
/// not among the top `⌈p·cols⌉` by `scores`.
pub fn itp_step(w: &DenseMatrix, scores: &[f64], p: f64) -> Result<DenseMatrix> {
    if scores.len() != w.cols() {
        return Err(Error::shape("itp_step", w.shape(), (scores.len(), 1)));
    }
    let retained = select_retained(&neuron_refs(&[scores.to_vec()]), p)?;
    let mut out = w.clone();
    zero_unretained(&mut out, 0, &retained);
    Ok(out)
}

/// Zeroes the columns of `w` (tracked as layer `layer_index`) missing from
/// `retained` and returns its keep mask.
pub fn zero_unretained(w: &mut DenseMatrix, layer_index: usize, retained: &RetainedSet) -> Vec<bool> {
    (0..w.cols())
        .map(|j| {
            let keep = retained.contains(&(layer_index, j));
            if !keep {
                w.zero_column(j);
            }
            keep
        })
        .collect()
}
