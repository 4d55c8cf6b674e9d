use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{AttentionKind, BlockConfig, MlpKind, ModelConfig, TaskHead};
use crate::data::{gp_sample, GpKernelSpec, KernelKind, INPUT_DIM};
use crate::model::{count_flops, Model};
use crate::par::Exec;
use crate::train::{train_loop, OptimConfig, TrainData, TrainOptions};

use super::ExperimentError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum GpVariant {
    /// SiLU MLP widened by 3/2 to match the gated parameter count.
    Plain,
    Gated,
    Cem { steps: usize },
}

impl GpVariant {
    pub fn name(&self) -> String {
        match self {
            GpVariant::Plain => "plain".into(),
            GpVariant::Gated => "gated".into(),
            GpVariant::Cem { steps } => format!("cem-t{steps}"),
        }
    }

    pub fn steps(&self) -> Option<usize> {
        match self {
            GpVariant::Cem { steps } => Some(*steps),
            _ => None,
        }
    }
}

/// Token-free regression stacks on GP draws. CEM variants share the gated
/// widths, so they carry two thirds of its MLP parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpExperiment {
    pub kernels: Vec<GpKernelSpec>,
    /// Points per draw, split 80/20 into train and test.
    pub n_points: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub layers: usize,
    /// Recursion step size of the CEM variants.
    pub step_size: f64,
    pub learnable_step_size: bool,
    pub variants: Vec<GpVariant>,
    pub optim: OptimConfig,
}

impl Default for GpExperiment {
    fn default() -> Self {
        Self {
            kernels: vec![
                GpKernelSpec {
                    lengthscale: 2.0,
                    ..GpKernelSpec::of(KernelKind::Rbf)
                },
                GpKernelSpec {
                    lengthscale: 8.0,
                    ..GpKernelSpec::of(KernelKind::Periodic)
                },
            ],
            n_points: 2560,
            d_model: 16,
            d_ff: 128,
            layers: 2,
            step_size: 1.0,
            learnable_step_size: false,
            variants: vec![GpVariant::Gated, GpVariant::Cem { steps: 1 }, GpVariant::Cem { steps: 2 }],
            optim: OptimConfig {
                lr: 1e-2,
                total_steps: 3000,
                batch_size: 64,
                weight_decay: 0.0,
                ..OptimConfig::default()
            },
        }
    }
}

impl GpExperiment {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.kernels.is_empty() || self.variants.is_empty() {
            return Err(ExperimentError::Spec("at least one kernel and one variant are required".into()));
        }
        for k in &self.kernels {
            k.validate()?;
        }
        for v in &self.variants {
            gp_model_config(self, *v).validate().map_err(crate::model::ModelError::from)?;
        }
        self.optim.validate()?;
        Ok(())
    }
}

pub fn gp_model_config(exp: &GpExperiment, variant: GpVariant) -> ModelConfig {
    let (mlp, steps, d_ff) = match variant {
        GpVariant::Plain => (MlpKind::ReferencePlain, 1, exp.d_ff * 3 / 2),
        GpVariant::Gated => (MlpKind::ReferenceGated, 1, exp.d_ff),
        GpVariant::Cem { steps } => (MlpKind::Cem, steps, exp.d_ff),
    };
    ModelConfig {
        vocab_size: 1,
        layers: exp.layers,
        block: BlockConfig {
            d_model: exp.d_model,
            heads: 1,
            head_dim: exp.d_model,
            d_ff,
            mlp_steps: steps,
            mlp_step_size: exp.step_size,
            learnable_step_size: exp.learnable_step_size,
            attention: AttentionKind::None,
            mlp,
            ..BlockConfig::default()
        },
        task: TaskHead::RegressionScalar { input_dim: INPUT_DIM },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpRunResult {
    pub kernel: KernelKind,
    pub variant: String,
    pub seed: u64,
    pub parameters: usize,
    /// Forward FLOPs for a single point.
    pub flops_per_point: u64,
    pub train_rmse: f64,
    pub test_rmse: f64,
    pub wall_time_s: f64,
}

/// One training run on the draw for `seed`. The same seed gives the same
/// data and initialization stream for every variant.
pub fn run_gp(
    exp: &GpExperiment,
    kernel: &GpKernelSpec,
    variant: GpVariant,
    seed: u64,
    exec: Exec,
    metrics_path: Option<&Path>,
) -> Result<GpRunResult, ExperimentError> {
    let (train, test) = gp_sample(kernel, exp.n_points, seed)?;
    let data = TrainData::Regression { train, test };
    let cfg = gp_model_config(exp, variant);
    let mut model = Model::build(&cfg, seed)?;
    let opts = TrainOptions {
        seed,
        exec,
        log_every: 50,
        metrics_path: metrics_path.map(Path::to_path_buf),
        ..TrainOptions::default()
    };
    let m = train_loop(&mut model, &data, &exp.optim, &opts)?;
    Ok(GpRunResult {
        kernel: kernel.kind,
        variant: variant.name(),
        seed,
        parameters: model.parameter_counts().total,
        flops_per_point: count_flops(&cfg, 1, 1),
        train_rmse: m.last.train_rmse.unwrap_or(f64::NAN),
        test_rmse: m.last.test_rmse.unwrap_or(f64::NAN),
        wall_time_s: m.wall_time_s,
    })
}

/// Every kernel × seed × variant, in that order.
pub fn gp_compare(exp: &GpExperiment, seeds: &[u64], exec: Exec) -> Result<Vec<GpRunResult>, ExperimentError> {
    exp.validate()?;
    let mut out = Vec::new();
    for kernel in &exp.kernels {
        for &seed in seeds {
            for &v in &exp.variants {
                out.push(run_gp(exp, kernel, v, seed, exec, None)?);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpSummaryRow {
    pub kernel: KernelKind,
    pub variant: String,
    pub parameters: usize,
    pub flops_per_point: u64,
    pub runs: usize,
    pub train_rmse_mean: f64,
    pub train_rmse_std: f64,
    pub test_rmse_mean: f64,
    pub test_rmse_std: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Mean and sample std per (kernel, variant), in first-seen order.
pub fn summarize_gp(results: &[GpRunResult]) -> Vec<GpSummaryRow> {
    let mut keys: Vec<(KernelKind, String)> = Vec::new();
    for r in results {
        let k = (r.kernel, r.variant.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(kernel, variant)| {
            let rs: Vec<&GpRunResult> = results.iter().filter(|r| r.kernel == kernel && r.variant == variant).collect();
            let (tr, trs) = mean_std(&rs.iter().map(|r| r.train_rmse).collect::<Vec<_>>());
            let (te, tes) = mean_std(&rs.iter().map(|r| r.test_rmse).collect::<Vec<_>>());
            GpSummaryRow {
                kernel,
                variant,
                parameters: rs[0].parameters,
                flops_per_point: rs[0].flops_per_point,
                runs: rs.len(),
                train_rmse_mean: tr,
                train_rmse_std: trs,
                test_rmse_mean: te,
                test_rmse_std: tes,
            }
        })
        .collect()
}

/// Seeds where `better` has strictly lower test RMSE than `worse`, out of
/// the seeds where both ran.
pub fn paired_wins(results: &[GpRunResult], kernel: KernelKind, better: &str, worse: &str) -> (usize, usize) {
    let mut wins = 0;
    let mut total = 0;
    for a in results.iter().filter(|r| r.kernel == kernel && r.variant == better) {
        if let Some(b) = results.iter().find(|r| r.kernel == kernel && r.variant == worse && r.seed == a.seed) {
            total += 1;
            if a.test_rmse < b.test_rmse {
                wins += 1;
            }
        }
    }
    (wins, total)
}
