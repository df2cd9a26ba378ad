use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decomposition::{rank_from_budget, CompressionBudget};
use crate::error::{Error, Result};
use crate::importance::{instant_sensitivity, ImportanceState};
use crate::linalg::DenseMatrix;
use crate::pruner::{keep_masks, neuron_refs, select_retained, RetainedSet};
use crate::rng::{seeded, SeededRng};
use crate::schedule::PruneSchedule;

use super::model::{mse_loss, sgd_step, sgd_step_vec, LayerWeights, ToyModel, WeightGradients};
use super::task::Dataset;

/// Dense steps run from a random init to produce the "pretrained" weights.
pub const PRETRAIN_STEPS: usize = 300;

const STREAM_INIT: u64 = 1;
const STREAM_PRETRAIN: u64 = 2;
const STREAM_COMPRESS: u64 = 3;

fn stream(seed: u64, id: u64) -> SeededRng {
    let mut rng = seeded(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Low-rank factors plus an iteratively pruned sparse residual.
    Losparse,
    /// Iterative column pruning of the dense weights, no low-rank part.
    Itp,
    /// Keep only `U·V` and fine-tune it.
    LowrankOnlyFinetune,
    /// Start like `Losparse` but prune the residual all the way to zero.
    LowrankOnlyPruneaway,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Losparse,
        Mode::Itp,
        Mode::LowrankOnlyFinetune,
        Mode::LowrankOnlyPruneaway,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Losparse => "losparse",
            Mode::Itp => "itp",
            Mode::LowrankOnlyFinetune => "lowrank_only_finetune",
            Mode::LowrankOnlyPruneaway => "lowrank_only_pruneaway",
        }
    }

    fn tracks_importance(self) -> bool {
        self != Mode::LowrankOnlyFinetune
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub final_steps: usize,
    /// Overrides the final fraction derived from the budget and mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub schedule: ScheduleSpec,
    pub literal_schedule_formula: bool,
    pub beta: f64,
    pub budget: CompressionBudget,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: Mode,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta {} must lie in [0, 1)", self.beta)));
        }
        self.budget.validate()?;
        if self.mode != Mode::Itp && self.budget.lowrank_ratio <= 0.0 {
            return Err(Error::Budget(format!(
                "mode {} needs a positive lowrank_ratio",
                self.mode
            )));
        }
        Ok(())
    }

    /// Final kept fraction of sparse columns for `model`'s shapes.
    ///
    /// For `Losparse` this is the parameter budget left after the factors,
    /// as a share of the dense parameter count; `Itp` keeps `total_ratio` of
    /// its columns; the two low-rank-only modes end at 0.
    pub fn final_fraction(&self, model: &ToyModel) -> Result<f64> {
        if let Some(p) = self.schedule.final_fraction {
            return Ok(p);
        }
        Ok(match self.mode {
            Mode::Itp => self.budget.total_ratio,
            Mode::LowrankOnlyFinetune | Mode::LowrankOnlyPruneaway => 0.0,
            Mode::Losparse => {
                let total = model.original_param_count() as f64;
                let factors: usize = model
                    .layers()
                    .iter()
                    .map(|l| {
                        let (d1, d2) = (l.weights.in_dim(), l.weights.out_dim());
                        rank_from_budget(d1, d2, self.budget.lowrank_ratio) * (d1 + d2)
                    })
                    .sum();
                let sparse = self.budget.total_ratio * total - factors as f64;
                if sparse <= 0.0 {
                    return Err(Error::Budget(format!(
                        "factors use {factors} of {total} parameters, leaving no sparse budget at total_ratio {}",
                        self.budget.total_ratio
                    )));
                }
                (sparse / total).min(1.0)
            }
        })
    }

    pub fn prune_schedule(&self, model: &ToyModel) -> Result<PruneSchedule> {
        Ok(PruneSchedule::new(
            self.schedule.total_steps,
            self.schedule.warmup_steps,
            self.schedule.final_steps,
            self.final_fraction(model)?,
        )?
        .with_literal_formula(self.literal_schedule_formula))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    /// Mini-batch loss before the update of this step.
    pub loss: f64,
    pub p_t: f64,
    /// After this step's pruning.
    pub remaining_ratio: f64,
    pub live_columns: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTrace {
    pub rows: Vec<TraceRow>,
}

impl MetricsTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.loss).collect()
    }

    /// CSV with header `step,loss,p_t,remaining_ratio,live_cols_layer0,...`.
    /// Floats use the shortest representation that parses back exactly.
    pub fn to_csv(&self) -> String {
        let layers = self.rows.first().map_or(0, |r| r.live_columns.len());
        let mut out = String::from("step,loss,p_t,remaining_ratio");
        for l in 0..layers {
            out.push_str(&format!(",live_cols_layer{l}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}", r.step, r.loss, r.p_t, r.remaining_ratio));
            for c in &r.live_columns {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        out
    }

    /// Checks the trace against the schedule that produced it: every `p_t`
    /// reproduces the schedule and the remaining ratio never grows once
    /// warm-up is over.
    pub fn validate(&self, schedule: &PruneSchedule) -> Result<()> {
        let mut prev: Option<f64> = None;
        for r in &self.rows {
            let expect = schedule.remaining_fraction(r.step)?;
            if r.p_t != expect {
                return Err(Error::Index(format!(
                    "step {}: p_t {} differs from schedule {expect}",
                    r.step, r.p_t
                )));
            }
            if r.step >= schedule.warmup_steps() {
                if let Some(p) = prev {
                    if r.remaining_ratio > p {
                        return Err(Error::Index(format!(
                            "step {}: remaining ratio rose from {p} to {}",
                            r.step, r.remaining_ratio
                        )));
                    }
                }
                prev = Some(r.remaining_ratio);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ToyModel,
    pub trace: MetricsTrace,
    pub schedule: PruneSchedule,
    /// Final neuron scores of each tracked matrix; `None` when the mode
    /// tracks nothing.
    pub neuron_scores: Vec<Option<Vec<f64>>>,
}

fn sample_batch(rng: &mut SeededRng, data: &Dataset, batch_size: usize) -> Dataset {
    let idx: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..data.len())).collect();
    data.gather(&idx)
}

/// Plain SGD on a randomly initialised dense model.
pub fn pretrain_dense(dims: &[usize], train: &Dataset, config: &TrainConfig, steps: usize) -> Result<ToyModel> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let mut model = ToyModel::random_dense(dims, &mut stream(config.seed, STREAM_INIT))?;
    let mut rng = stream(config.seed, STREAM_PRETRAIN);
    for step in 1..=steps {
        let batch = sample_batch(&mut rng, train, config.batch_size);
        let cache = model.forward_cached(&batch.x)?;
        let (loss, dy) = mse_loss(&cache.output, &batch.y)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        let grads = model.backward(&cache, &dy)?;
        for (layer, g) in model.layers_mut().iter_mut().zip(&grads) {
            sgd_step_vec(&mut layer.bias, &g.bias, config.learning_rate);
            if let (LayerWeights::Dense { weight, .. }, WeightGradients::Dense { dw }) =
                (&mut layer.weights, &g.weights)
            {
                sgd_step(weight, dw, config.learning_rate)?;
            }
        }
    }
    Ok(model)
}

/// Converts a dense pretrained model for `mode`.
pub fn prepare_model(pretrained: &ToyModel, config: &TrainConfig) -> Result<ToyModel> {
    if pretrained
        .layers()
        .iter()
        .any(|l| matches!(l.weights, LayerWeights::Factorized(_)))
    {
        return Err(Error::Config("train_compress expects dense pretrained layers".into()));
    }
    match config.mode {
        Mode::Itp => Ok(pretrained.clone()),
        Mode::Losparse | Mode::LowrankOnlyPruneaway => pretrained.factorize(config.budget.lowrank_ratio),
        Mode::LowrankOnlyFinetune => {
            let mut model = pretrained.factorize(config.budget.lowrank_ratio)?;
            for layer in model.layers_mut() {
                if let LayerWeights::Factorized(f) = &mut layer.weights {
                    f.drop_sparse();
                }
            }
            Ok(model)
        }
    }
}

/// Compression training loop.
///
/// Each step, in order: forward and backward on a mini-batch; sensitivity of
/// every tracked matrix (`S` for factorized modes, `W` for `Itp`) from its
/// pre-update value and gradient; moving-average and neuron-score update;
/// an SGD step on all parameters; global top-`p_t` pruning of the updated
/// tracked matrices; one trace row.
pub fn train_compress(pretrained: &ToyModel, train: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let mut model = prepare_model(pretrained, config)?;
    let schedule = config.prune_schedule(&model)?;
    let tracks = config.mode.tracks_importance();
    let mut states: Vec<ImportanceState> = if tracks {
        model
            .layers()
            .iter()
            .map(|l| ImportanceState::new(l.weights.in_dim(), l.weights.out_dim(), config.beta))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let widths: Vec<usize> = model.layers().iter().map(|l| l.weights.out_dim()).collect();
    let lr = config.learning_rate;
    let mut rng = stream(config.seed, STREAM_COMPRESS);
    let mut trace = MetricsTrace::default();

    for step in 1..=schedule.total_steps() {
        let batch = sample_batch(&mut rng, train, config.batch_size);
        let cache = model.forward_cached(&batch.x)?;
        let (loss, dy) = mse_loss(&cache.output, &batch.y)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        let grads = model.backward(&cache, &dy)?;

        if tracks {
            for ((layer, g), state) in model.layers().iter().zip(&grads).zip(states.iter_mut()) {
                let inst = match (&layer.weights, &g.weights) {
                    (LayerWeights::Factorized(f), WeightGradients::Factorized { ds, .. }) => {
                        instant_sensitivity(f.s(), ds)?
                    }
                    (LayerWeights::Dense { weight, .. }, WeightGradients::Dense { dw }) => {
                        instant_sensitivity(weight, dw)?
                    }
                    _ => unreachable!("gradients mirror the layer kind"),
                };
                state.update(&inst)?;
            }
        }

        for (layer, g) in model.layers_mut().iter_mut().zip(&grads) {
            sgd_step_vec(&mut layer.bias, &g.bias, lr);
            match (&mut layer.weights, &g.weights) {
                (LayerWeights::Factorized(f), WeightGradients::Factorized { du, dv, ds }) => {
                    f.step_factors(lr, du, dv)?;
                    if tracks {
                        f.step_sparse(lr, ds)?;
                    }
                }
                (LayerWeights::Dense { weight, .. }, WeightGradients::Dense { dw }) => {
                    sgd_step(weight, dw, lr)?;
                }
                _ => unreachable!("gradients mirror the layer kind"),
            }
        }

        let p_t = schedule.remaining_fraction(step)?;
        if tracks {
            let scores: Vec<Vec<f64>> = states.iter().map(ImportanceState::neuron_scores).collect();
            let retained = if p_t > 0.0 {
                select_retained(&neuron_refs(&scores), p_t)?
            } else {
                RetainedSet::new()
            };
            let masks = keep_masks(&widths, &retained)?;
            for (layer, mask) in model.layers_mut().iter_mut().zip(&masks) {
                match &mut layer.weights {
                    LayerWeights::Factorized(f) => f.retain_columns(mask),
                    LayerWeights::Dense { weight, live_columns } => {
                        for (j, &keep) in mask.iter().enumerate() {
                            if !keep {
                                weight.zero_column(j);
                            }
                        }
                        live_columns.copy_from_slice(mask);
                    }
                }
            }
        }

        trace.rows.push(TraceRow {
            step,
            loss,
            p_t,
            remaining_ratio: model.remaining_ratio(),
            live_columns: model.live_counts(),
        });
    }

    let finite = model.layers().iter().all(|l| {
        l.bias.iter().all(|b| b.is_finite())
            && match &l.weights {
                LayerWeights::Factorized(f) => f.u().is_finite() && f.v().is_finite() && f.s().is_finite(),
                LayerWeights::Dense { weight, .. } => weight.is_finite(),
            }
    });
    if !finite {
        return Err(Error::Diverged {
            step: schedule.total_steps(),
            loss: f64::NAN,
        });
    }

    let neuron_scores = if tracks {
        states.iter().map(|s| Some(s.neuron_scores())).collect()
    } else {
        vec![None; model.layers().len()]
    };
    Ok(TrainOutcome {
        model,
        trace,
        schedule,
        neuron_scores,
    })
}

/// Largest deviation from the configured total ratio that whole-column
/// granularity can force: one column of every layer.
pub fn neuron_granularity(model: &ToyModel) -> f64 {
    let one_column_each: usize = model.layers().iter().map(|l| l.weights.in_dim()).sum();
    one_column_each as f64 / model.original_param_count() as f64
}

/// Effective dense weights of every layer, for inspection.
pub fn effective_weights(model: &ToyModel) -> Vec<DenseMatrix> {
    model.layers().iter().map(|l| l.weights.effective_weight()).collect()
}
