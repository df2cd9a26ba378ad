//! Desk-scale end-to-end driver: planted regression tasks, a small tanh
//! network whose linear maps can be factorized, and the compression loop.

mod model;
mod task;
mod train;

pub use model::{
    evaluate, mse_loss, sgd_step, ForwardCache, LayerGradients, LayerWeights, ModelLayer, ToyModel, WeightGradients,
};
pub use task::{generate_task, Dataset, SyntheticTask, TaskSpec};
pub use train::{
    effective_weights, neuron_granularity, prepare_model, pretrain_dense, train_compress, MetricsTrace, Mode,
    ScheduleSpec, TraceRow, TrainConfig, TrainOutcome, PRETRAIN_STEPS,
};
