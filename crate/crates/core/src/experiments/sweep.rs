use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::GpKernelSpec;
use crate::par::Exec;
use crate::train::{akima_interpolate, MIN_KNOTS};

use super::gp::{run_gp, GpExperiment, GpVariant};
use super::lm::{lm_smoke, LmSmoke};
use super::meta::{prepare_run_dir, RunMeta};
use super::ExperimentError;

/// `n` points log-spaced over `[lo, hi]`, endpoints included.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "task")]
pub enum SweepTask {
    /// Scored by final held-out perplexity.
    LmSmoke { spec: LmSmoke },
    /// Scored by final test RMSE.
    Gp {
        experiment: GpExperiment,
        kernel: GpKernelSpec,
        variant: GpVariant,
    },
}

impl SweepTask {
    fn meta(&self, lr: f64, seed: u64) -> RunMeta {
        match self {
            SweepTask::LmSmoke { spec } => RunMeta {
                label: format!("lm-lr{lr:.3e}"),
                seed,
                lr,
                steps: Some(spec.model.block.attn_steps),
                metric: "test/perplexity".into(),
                ..RunMeta::default()
            },
            SweepTask::Gp { kernel, variant, .. } => RunMeta {
                label: format!("gp-{}-lr{lr:.3e}", variant.name()),
                seed,
                lr,
                steps: variant.steps(),
                kernel: Some(kernel.kind),
                variant: Some(variant.name()),
                metric: "test/rmse".into(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSweepResult {
    pub metric: String,
    pub lrs: Vec<f64>,
    pub values: Vec<f64>,
    /// Minimizer of the interpolant through `(log10 lr, value)`.
    pub argmin_lr: f64,
    pub argmin_value: f64,
}

pub fn lr_sweep(
    task: &SweepTask,
    lrs: &[f64],
    corpus: &[u8],
    seed: u64,
    exec: Exec,
    run_root: Option<&Path>,
) -> Result<LrSweepResult, ExperimentError> {
    if lrs.len() < MIN_KNOTS {
        return Err(ExperimentError::Spec(format!("need at least {MIN_KNOTS} learning rates, got {}", lrs.len())));
    }
    let mut values = Vec::with_capacity(lrs.len());
    for (i, &lr) in lrs.iter().enumerate() {
        let metrics = match run_root {
            Some(root) => Some(prepare_run_dir(&root.join(format!("lr-{i}")), &task.meta(lr, seed))?),
            None => None,
        };
        let metrics = metrics.as_deref();
        let v = match task {
            SweepTask::LmSmoke { spec } => {
                let mut s = spec.clone();
                s.optim.lr = lr;
                lm_smoke(&s, corpus, seed, exec, metrics, None)?.final_test_perplexity
            }
            SweepTask::Gp {
                experiment,
                kernel,
                variant,
            } => {
                let mut e = experiment.clone();
                e.optim.lr = lr;
                run_gp(&e, kernel, *variant, seed, exec, metrics)?.test_rmse
            }
        };
        values.push(v);
    }
    let xs: Vec<f64> = lrs.iter().map(|l| l.log10()).collect();
    let curve = akima_interpolate(&xs, &values)?;
    let (x, y) = curve.argmin();
    Ok(LrSweepResult {
        metric: match task {
            SweepTask::LmSmoke { .. } => "test_perplexity".into(),
            SweepTask::Gp { .. } => "test_rmse".into(),
        },
        lrs: lrs.to_vec(),
        values,
        argmin_lr: 10f64.powf(x),
        argmin_value: y,
    })
}
