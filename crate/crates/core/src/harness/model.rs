use crate::decomposition::{rank_from_budget, FactorizedLayer};
use crate::error::{Error, Result};
use crate::linalg::{matmul, svd, DenseMatrix};
use crate::rng::{gaussian_matrix, SeededRng};

use super::task::Dataset;

/// The linear map of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerWeights {
    Factorized(FactorizedLayer),
    /// Dense `d1 × d2` weight; dead columns are exactly zero.
    Dense {
        weight: DenseMatrix,
        live_columns: Vec<bool>,
    },
}

impl LayerWeights {
    pub fn dense(weight: DenseMatrix) -> Self {
        let live_columns = vec![true; weight.cols()];
        LayerWeights::Dense { weight, live_columns }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            LayerWeights::Factorized(f) => f.in_dim(),
            LayerWeights::Dense { weight, .. } => weight.rows(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            LayerWeights::Factorized(f) => f.out_dim(),
            LayerWeights::Dense { weight, .. } => weight.cols(),
        }
    }

    pub fn live_columns(&self) -> &[bool] {
        match self {
            LayerWeights::Factorized(f) => f.live_columns(),
            LayerWeights::Dense { live_columns, .. } => live_columns,
        }
    }

    pub fn live_count(&self) -> usize {
        self.live_columns().iter().filter(|&&l| l).count()
    }

    pub fn param_count(&self) -> usize {
        match self {
            LayerWeights::Factorized(f) => f.param_count(),
            LayerWeights::Dense { weight, .. } => weight.rows() * self.live_count(),
        }
    }

    /// The matrix this layer applies, `U·V + S` for factorized layers.
    pub fn effective_weight(&self) -> DenseMatrix {
        match self {
            LayerWeights::Factorized(f) => f.reconstruct(),
            LayerWeights::Dense { weight, .. } => weight.clone(),
        }
    }

    fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        match self {
            LayerWeights::Factorized(f) => f.forward(x),
            LayerWeights::Dense { weight, .. } => matmul(x, weight),
        }
    }
}

/// One layer: linear map plus a dense bias that is never compressed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelLayer {
    pub weights: LayerWeights,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WeightGradients {
    Factorized {
        du: DenseMatrix,
        dv: DenseMatrix,
        ds: DenseMatrix,
    },
    Dense {
        dw: DenseMatrix,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weights: WeightGradients,
    pub bias: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input of each layer; `inputs[0]` is the batch itself.
    inputs: Vec<DenseMatrix>,
    pub output: DenseMatrix,
}

/// Feed-forward stack with `tanh` between layers and a linear last layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    layers: Vec<ModelLayer>,
}

impl ToyModel {
    pub fn new(layers: Vec<ModelLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("a model needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.out_dim() {
                return Err(Error::shape(
                    "ToyModel bias",
                    (l.bias.len(), 1),
                    (l.weights.out_dim(), 1),
                ));
            }
            if let Some(next) = layers.get(i + 1) {
                if l.weights.out_dim() != next.weights.in_dim() {
                    return Err(Error::shape(
                        "ToyModel layer chain",
                        (l.weights.in_dim(), l.weights.out_dim()),
                        (next.weights.in_dim(), next.weights.out_dim()),
                    ));
                }
            }
        }
        Ok(Self { layers })
    }

    /// Dense layers with `N(0, 1/d1)` weights and zero biases.
    pub fn random_dense(dims: &[usize], rng: &mut SeededRng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!("need at least two widths, got {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| ModelLayer {
                weights: LayerWeights::dense(gaussian_matrix(rng, w[0], w[1]).scaled(1.0 / (w[0] as f64).sqrt())),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[ModelLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ModelLayer] {
        &mut self.layers
    }

    pub fn into_layers(self) -> Vec<ModelLayer> {
        self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weights.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.out_dim()
    }

    /// `[d_in, hidden..., d_out]`
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(|l| l.weights.out_dim()));
        d
    }

    /// Σ d1·d2 over the layers, i.e. the dense weight count.
    pub fn original_param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.in_dim() * l.weights.out_dim())
            .sum()
    }

    /// Stored weight parameters (biases excluded) over the dense count.
    pub fn remaining_ratio(&self) -> f64 {
        let kept: usize = self.layers.iter().map(|l| l.weights.param_count()).sum();
        kept as f64 / self.original_param_count() as f64
    }

    pub fn live_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.weights.live_count()).collect()
    }

    /// Replaces every dense layer with its SVD split at the rank allowed by
    /// `lowrank_fraction`.
    pub fn factorize(&self, lowrank_fraction: f64) -> Result<ToyModel> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let weights = match &l.weights {
                    LayerWeights::Dense { weight, .. } => {
                        let r = rank_from_budget(weight.rows(), weight.cols(), lowrank_fraction);
                        let dec = svd(weight)?;
                        LayerWeights::Factorized(FactorizedLayer::init_from_svd(weight, &dec, r)?)
                    }
                    f @ LayerWeights::Factorized(_) => f.clone(),
                };
                Ok(ModelLayer {
                    weights,
                    bias: l.bias.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ToyModel::new(layers)
    }

    pub fn forward(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_cached(&self, x: &DenseMatrix) -> Result<ForwardCache> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape("ToyModel::forward", x.shape(), (x.rows(), self.in_dim())));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weights.apply(&h)?;
            add_bias(&mut z, &layer.bias);
            inputs.push(h);
            h = if i == last { z } else { z.map(f64::tanh) };
        }
        Ok(ForwardCache { inputs, output: h })
    }

    /// Parameter gradients given `dy = ∂L/∂output` from the cached pass.
    pub fn backward(&self, cache: &ForwardCache, dy: &DenseMatrix) -> Result<Vec<LayerGradients>> {
        if dy.shape() != cache.output.shape() {
            return Err(Error::shape("ToyModel::backward", dy.shape(), cache.output.shape()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut dz = dy.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[i];
            let bias = column_sums(&dz);
            let (weights, dx) = match &layer.weights {
                LayerWeights::Factorized(f) => {
                    let g = f.backward(x, &dz)?;
                    (
                        WeightGradients::Factorized {
                            du: g.du,
                            dv: g.dv,
                            ds: g.ds,
                        },
                        g.dx,
                    )
                }
                LayerWeights::Dense { weight, .. } => {
                    let dw = matmul(&x.transpose(), &dz)?;
                    let dx = matmul(&dz, &weight.transpose())?;
                    (WeightGradients::Dense { dw }, dx)
                }
            };
            grads.push(LayerGradients { weights, bias });
            if i > 0 {
                // x is tanh(previous pre-activation)
                dz = dx.zip_with("tanh'", x, |d, h| d * (1.0 - h * h))?;
            }
        }
        grads.reverse();
        Ok(grads)
    }
}

fn add_bias(z: &mut DenseMatrix, bias: &[f64]) {
    let cols = z.cols();
    for row in z.as_mut_slice().chunks_mut(cols) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn column_sums(m: &DenseMatrix) -> Vec<f64> {
    let mut sums = vec![0.0; m.cols()];
    for i in 0..m.rows() {
        for (s, x) in sums.iter_mut().zip(m.row(i)) {
            *s += x;
        }
    }
    sums
}

/// Halved mean squared error over every entry, and its gradient with
/// respect to `pred`.
pub fn mse_loss(pred: &DenseMatrix, target: &DenseMatrix) -> Result<(f64, DenseMatrix)> {
    let diff = pred.sub(target)?;
    let count = (diff.rows() * diff.cols()) as f64;
    let loss = 0.5 * diff.as_slice().iter().map(|d| d * d).sum::<f64>() / count;
    Ok((loss, diff.scaled(1.0 / count)))
}

/// Mean halved squared error of `model` over `data`.
pub fn evaluate(model: &ToyModel, data: &Dataset) -> Result<f64> {
    if data.y.cols() != model.out_dim() {
        return Err(Error::shape(
            "evaluate",
            data.y.shape(),
            (data.y.rows(), model.out_dim()),
        ));
    }
    let pred = model.forward(&data.x)?;
    Ok(mse_loss(&pred, &data.y)?.0)
}

/// `params -= lr·grads`
pub fn sgd_step(params: &mut DenseMatrix, grads: &DenseMatrix, lr: f64) -> Result<()> {
    params.axpy(-lr, grads)
}

pub(crate) fn sgd_step_vec(params: &mut [f64], grads: &[f64], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::task::{generate_task, TaskSpec};
    use crate::rng::seeded;

    fn planted_model(w: DenseMatrix) -> ToyModel {
        let d = w.cols();
        ToyModel::new(vec![ModelLayer {
            weights: LayerWeights::dense(w),
            bias: vec![0.0; d],
        }])
        .unwrap()
    }

    fn noiseless() -> (crate::harness::task::SyntheticTask, Dataset) {
        let spec = TaskSpec {
            seed: 4,
            dims: vec![8, 6],
            planted_rank: 2,
            planted_columns: 2,
            noise_std: 0.0,
            n_train: 10,
            n_val: 50,
        };
        let (task, _, val) = generate_task(&spec).unwrap();
        (task, val)
    }

    #[test]
    fn perfect_model_has_zero_loss() {
        let (task, val) = noiseless();
        let model = planted_model(task.planted_weight());
        assert!(evaluate(&model, &val).unwrap() <= 1e-12);
    }

    #[test]
    fn constant_target_shift_adds_half_c_squared() {
        let (task, val) = noiseless();
        let model = planted_model(task.planted_weight());
        let base = evaluate(&model, &val).unwrap();
        let c = 0.7;
        let shifted = Dataset {
            x: val.x.clone(),
            y: val.y.map(|v| v + c),
        };
        let pred = model.forward(&val.x).unwrap();
        // exact when residuals vanish
        assert!(pred.sub(&val.y).unwrap().max_abs() < 1e-12);
        let got = evaluate(&model, &shifted).unwrap();
        assert!((got - base - 0.5 * c * c).abs() < 1e-12);
    }

    #[test]
    fn zero_model_matches_direct_average() {
        let (_, val) = noiseless();
        let model = planted_model(DenseMatrix::zeros(8, 6));
        let direct: f64 = val.y.as_slice().iter().map(|y| y * y).sum::<f64>() / (val.y.rows() * 6) as f64;
        assert!((evaluate(&model, &val).unwrap() - 0.5 * direct).abs() < 1e-12);
    }

    #[test]
    fn evaluate_shape_mismatch() {
        let (_, val) = noiseless();
        let model = planted_model(DenseMatrix::zeros(8, 5));
        assert!(matches!(evaluate(&model, &val), Err(Error::Shape { .. })));
    }

    #[test]
    fn sgd_step_cases() {
        let mut p = DenseMatrix::from_rows(&[&[1.0]]);
        sgd_step(&mut p, &DenseMatrix::from_rows(&[&[2.0]]), 0.0).unwrap();
        assert_eq!(p.as_slice(), &[1.0]);
        sgd_step(&mut p, &DenseMatrix::from_rows(&[&[2.0]]), 0.1).unwrap();
        assert!((p.get(0, 0) - 0.8).abs() < 1e-15);
        assert!(sgd_step(&mut p, &DenseMatrix::zeros(1, 2), 0.1).is_err());
    }

    #[test]
    fn sgd_descends_a_quadratic_bowl() {
        // f(p) = 0.5 Σ c_i p_i², curvature max 4, step 0.2 < 2/4
        let curv = DenseMatrix::from_rows(&[&[1.0, 4.0, 0.5]]);
        let mut p = DenseMatrix::from_rows(&[&[3.0, -2.0, 1.0]]);
        let f = |p: &DenseMatrix| {
            0.5 * p
                .as_slice()
                .iter()
                .zip(curv.as_slice())
                .map(|(x, c)| c * x * x)
                .sum::<f64>()
        };
        let mut prev = f(&p);
        for _ in 0..100 {
            let g = p.zip_with("grad", &curv, |x, c| c * x).unwrap();
            sgd_step(&mut p, &g, 0.2).unwrap();
            let now = f(&p);
            assert!(now < prev || now == 0.0);
            prev = now;
        }
    }

    #[test]
    fn layer_chain_is_checked() {
        let bad = ToyModel::new(vec![
            ModelLayer {
                weights: LayerWeights::dense(DenseMatrix::zeros(3, 4)),
                bias: vec![0.0; 4],
            },
            ModelLayer {
                weights: LayerWeights::dense(DenseMatrix::zeros(5, 2)),
                bias: vec![0.0; 2],
            },
        ]);
        assert!(bad.is_err());
    }

    #[test]
    fn factorize_preserves_the_function() {
        let mut rng = seeded(3);
        let dense = ToyModel::random_dense(&[5, 7, 4], &mut rng).unwrap();
        let fact = dense.factorize(0.2).unwrap();
        let x = gaussian_matrix(&mut rng, 6, 5);
        let diff = dense.forward(&x).unwrap().sub(&fact.forward(&x).unwrap()).unwrap();
        assert!(diff.max_abs() < 1e-10);
        assert_eq!(fact.dims(), vec![5, 7, 4]);
    }
}
