use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{BlockConfig, DiagonalMode, ModelConfig, PreconditionerMode, TaskHead};
use crate::data::{TokenWindows, BYTE_VOCAB};
use crate::model::Model;
use crate::par::Exec;
use crate::train::{train_loop, OptimConfig, TrainData, TrainOptions};

use super::ExperimentError;

/// Two-layer stack with both sublayers replaced, two recursion steps,
/// per-head diagonals, diagonal-plus-low-rank preconditioners and Alibi.
pub fn lm_model_config() -> ModelConfig {
    ModelConfig {
        vocab_size: BYTE_VOCAB,
        layers: 2,
        block: BlockConfig {
            d_model: 32,
            heads: 4,
            head_dim: 8,
            d_ff: 64,
            attn_steps: 2,
            mlp_steps: 2,
            diagonal: DiagonalMode::PerHead,
            attn_preconditioner: PreconditionerMode::DiagLowRank,
            mlp_preconditioner: PreconditionerMode::DiagLowRank,
            attn_precond_rank: 4,
            mlp_precond_rank: 8,
            alibi: true,
            ..BlockConfig::default()
        },
        task: TaskHead::LmLogits,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSmoke {
    pub seq_len: usize,
    /// Fraction of windows held out for perplexity.
    pub holdout: f64,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub log_every: usize,
}

impl Default for LmSmoke {
    fn default() -> Self {
        Self {
            seq_len: 32,
            holdout: 0.1,
            model: lm_model_config(),
            optim: OptimConfig {
                lr: 3e-3,
                total_steps: 500,
                batch_size: 8,
                ..OptimConfig::default()
            },
            log_every: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmSmokeResult {
    pub steps: usize,
    pub parameters: usize,
    /// Mean training loss over the first and last logging windows.
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    /// `1 - final / initial`.
    pub reduction: f64,
    pub initial_test_perplexity: f64,
    pub final_test_perplexity: f64,
    pub wall_time_s: f64,
}

pub fn lm_smoke(
    spec: &LmSmoke,
    corpus: &[u8],
    seed: u64,
    exec: Exec,
    metrics_path: Option<&Path>,
    checkpoint_path: Option<&Path>,
) -> Result<LmSmokeResult, ExperimentError> {
    if spec.model.task != TaskHead::LmLogits {
        return Err(ExperimentError::Spec("lm smoke runs need an lm-logits head".into()));
    }
    let windows = TokenWindows::from_bytes(corpus, spec.seq_len)?;
    let (train, test) = windows.split_holdout(spec.holdout)?;
    let data = TrainData::Lm { train, test };
    let mut model = Model::build(&spec.model, seed)?;
    let opts = TrainOptions {
        seed,
        exec,
        log_every: spec.log_every,
        metrics_path: metrics_path.map(Path::to_path_buf),
        checkpoint_path: checkpoint_path.map(Path::to_path_buf),
        ..TrainOptions::default()
    };
    let m = train_loop(&mut model, &data, &spec.optim, &opts)?;
    Ok(LmSmokeResult {
        steps: spec.optim.total_steps,
        parameters: model.parameter_counts().total,
        initial_train_loss: m.initial_train_loss,
        final_train_loss: m.final_train_loss,
        reduction: 1.0 - m.final_train_loss / m.initial_train_loss,
        initial_test_perplexity: m.initial.test_perplexity.unwrap_or(f64::NAN),
        final_test_perplexity: m.last.test_perplexity.unwrap_or(f64::NAN),
        wall_time_s: m.wall_time_s,
    })
}
