//! Desk-scale experiments built from the library pieces: GP regression
//! comparisons, an LM smoke run, learning-rate sweeps and count tables.

mod count;
mod gp;
mod lm;
mod meta;
mod sweep;

pub use count::{count_table, reference_counterpart, CountRow, CountTable, Ratio};
pub use gp::{
    gp_compare, gp_model_config, paired_wins, run_gp, summarize_gp, GpExperiment, GpRunResult, GpSummaryRow,
    GpVariant,
};
pub use meta::{prepare_run_dir, RunMeta, META_FILE, METRICS_FILE};
pub use lm::{lm_model_config, lm_smoke, LmSmoke, LmSmokeResult};
pub use sweep::{log_spaced, lr_sweep, LrSweepResult, SweepTask};

use thiserror::Error;

use crate::data::DataError;
use crate::model::ModelError;
use crate::train::TrainError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    Spec(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
