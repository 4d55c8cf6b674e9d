use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::KernelKind;

pub const META_FILE: &str = "meta.json";
pub const METRICS_FILE: &str = "metrics.jsonl";

/// Sidecar describing one training run, next to its metrics stream.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub label: String,
    pub seed: u64,
    pub lr: f64,
    /// Recursion steps of the CEM sublayers, when they apply.
    pub steps: Option<usize>,
    pub kernel: Option<KernelKind>,
    pub variant: Option<String>,
    /// Primary metric as `split/metric`.
    pub metric: String,
}

/// Creates `dir`, writes the sidecar and returns the metrics path.
pub fn prepare_run_dir(dir: &Path, meta: &RunMeta) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(META_FILE), serde_json::to_vec_pretty(meta)?)?;
    Ok(dir.join(METRICS_FILE))
}
