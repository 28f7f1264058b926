//! Joint training, evaluation and the synthetic benchmark scene.

mod evaluate;
mod loss;
mod metrics;
mod optim;
mod synth;
mod train;

use thiserror::Error;

use crate::hsi_io::HsiError;
use crate::network::{EcdbsModel, NetworkError};
use crate::tensor::TensorError;

pub use evaluate::{evaluate, predict_indices, predict_map, worker_count, Evaluation, THREADS_ENV};
pub use loss::{
    selection_entropy, selection_entropy_var, total_loss, total_loss_var, weighted_bce,
    weighted_bce_mean, LossConfig, PROB_CLAMP,
};
pub use metrics::{metrics, ConfusionMatrix, MetricsReport};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use synth::{synth_generate, SynthConfig, SynthScene};
pub use train::{build_model, epoch_band_weights, train, EpochLog, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("synthetic scene needs at least one informative band")]
    NoInformativeBands,
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("training split must contain both classes (unchanged {unchanged}, changed {changed})")]
    UnusableTrainSplit { unchanged: usize, changed: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        last_good: Box<EcdbsModel<f32>>,
    },
    #[error("evaluation worker panicked")]
    WorkerPanic,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Data(#[from] HsiError),
}
