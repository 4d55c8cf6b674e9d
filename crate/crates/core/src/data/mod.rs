//! Synthetic GP regression data and byte-level text windows.

mod gp;
mod text;

use std::path::Path;

use thiserror::Error;

use crate::tensor::TensorError;

pub use gp::{
    gp_sample, GpKernelSpec, GpSampler, KernelKind, MaternNu, RegressionBatch, Split, INITIAL_JITTER, INPUT_DIM,
    MAX_JITTER_ESCALATIONS, TRAIN_FRACTION,
};
pub use text::{detokenize, ingest_text, TokenWindows, BUNDLED_CORPUS, BYTE_VOCAB};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("numerical: {0}")]
    Numerical(String),
    #[error("empty data: {0}")]
    Empty(String),
    #[error("invalid data spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Writes `x0..x{d-1}, y, split` rows for each batch.
pub fn write_csv(path: &Path, batches: &[&RegressionBatch]) -> Result<(), DataError> {
    let first = batches.first().ok_or_else(|| DataError::Empty("no batches to export".into()))?;
    let d = first.inputs.cols();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    header.push("y".into());
    header.push("split".into());
    w.write_record(&header)?;
    for b in batches {
        for i in 0..b.len() {
            let mut rec: Vec<String> = b.inputs.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(b.targets.row(i)[0].to_string());
            rec.push(b.split.as_str().into());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}
