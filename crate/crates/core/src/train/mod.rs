//! Optimizer, schedule, training loop and learning-rate optimum estimation.

mod akima;
mod optim;
mod run;

use thiserror::Error;

use crate::data::DataError;
use crate::layers::{LayerError, ParamStore};
use crate::model::ModelError;

pub use akima::{akima_interpolate, Akima, MIN_KNOTS};
pub use optim::{adamw_step, adamw_update, lr_schedule, AdamState, OptimConfig};
pub use run::{
    batch_loss_and_grad, evaluate, train_loop, Evaluation, MetricRecord, RunMetrics, TrainData, TrainOptions,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid optimizer or run config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("non-finite value at step {step}: {detail}")]
    NonFinite {
        step: usize,
        detail: String,
        last_good: Option<Box<ParamStore>>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl From<LayerError> for TrainError {
    fn from(e: LayerError) -> Self {
        TrainError::Model(e.into())
    }
}

impl From<crate::tensor::TensorError> for TrainError {
    fn from(e: crate::tensor::TensorError) -> Self {
        TrainError::Model(e.into())
    }
}
