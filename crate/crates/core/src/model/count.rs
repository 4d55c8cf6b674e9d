//! Closed-form parameter and FLOP accounting.
//!
//! FLOPs count `2mnk` per matrix product and one per element for diagonal
//! scalings; activations, norms, softmax and elementwise adds are free.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{AttentionKind, BlockConfig, DiagonalMode, MlpKind, ModelConfig, PreconditionerMode, TaskHead};
use crate::layers::{ParamGroup, ParamStore};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCounts {
    pub by_group: BTreeMap<ParamGroup, usize>,
    pub total: usize,
}

impl ParameterCounts {
    fn add(&mut self, group: ParamGroup, n: usize) {
        if n > 0 {
            *self.by_group.entry(group).or_default() += n;
            self.total += n;
        }
    }

    pub fn group(&self, group: ParamGroup) -> usize {
        self.by_group.get(&group).copied().unwrap_or(0)
    }
}

/// Brute-force traversal of every stored tensor.
pub fn count_stored(store: &ParamStore) -> ParameterCounts {
    let mut c = ParameterCounts::default();
    for e in store.entries() {
        c.add(e.group, e.value.numel());
    }
    c
}

fn preconditioner_params(mode: PreconditionerMode, d: usize, rank: usize) -> usize {
    match mode {
        PreconditionerMode::Identity => 0,
        PreconditionerMode::Diagonal => d,
        PreconditionerMode::DiagLowRank => d + 2 * d * rank,
    }
}

/// Analytic counts from the configuration alone.
pub fn count_parameters(cfg: &ModelConfig) -> ParameterCounts {
    let b = &cfg.block;
    let d = b.d_model;
    let mut c = ParameterCounts::default();
    match cfg.task {
        TaskHead::LmLogits => {
            c.add(ParamGroup::Embedding, cfg.vocab_size * d);
            c.add(ParamGroup::Head, cfg.vocab_size * d);
        }
        TaskHead::RegressionScalar { input_dim } => {
            c.add(ParamGroup::Input, input_dim * d + d);
            c.add(ParamGroup::Head, d + 1);
        }
    }
    let step = usize::from(b.learnable_step_size);
    let alibi = if b.alibi { 2 } else { 0 };
    let proj = b.heads * b.head_dim * d;
    for _ in 0..cfg.layers {
        let norms = usize::from(b.attention != AttentionKind::None) + 1;
        if b.block_norm {
            c.add(ParamGroup::Norm, norms * d);
        }
        match b.attention {
            AttentionKind::None => {}
            AttentionKind::Reference => {
                c.add(ParamGroup::Attention, 4 * proj);
                c.add(ParamGroup::Alibi, alibi);
            }
            AttentionKind::Cem => {
                c.add(ParamGroup::Attention, 2 * proj);
                c.add(
                    ParamGroup::AttentionDiagonal,
                    match b.diagonal {
                        DiagonalMode::None => 0,
                        DiagonalMode::Shared => d,
                        DiagonalMode::PerHead => b.heads * d,
                    },
                );
                c.add(
                    ParamGroup::Preconditioner,
                    b.heads * preconditioner_params(b.attn_preconditioner, d, b.attn_precond_rank),
                );
                c.add(ParamGroup::Alibi, alibi);
                c.add(ParamGroup::Norm, if b.inner_norm { d } else { 0 });
                c.add(ParamGroup::StepSize, step);
            }
        }
        match b.mlp {
            MlpKind::ReferenceGated => c.add(ParamGroup::Mlp, 3 * b.d_ff * d),
            MlpKind::ReferencePlain => c.add(ParamGroup::Mlp, 2 * b.d_ff * d),
            MlpKind::Cem => {
                c.add(ParamGroup::Mlp, 2 * b.d_ff * d);
                c.add(
                    ParamGroup::Preconditioner,
                    preconditioner_params(b.mlp_preconditioner, d, b.mlp_precond_rank),
                );
                c.add(ParamGroup::Norm, if b.inner_norm { d } else { 0 });
                c.add(ParamGroup::StepSize, step);
            }
        }
    }
    if b.block_norm {
        c.add(ParamGroup::Norm, d);
    }
    c
}

fn mm(m: usize, n: usize, k: usize) -> u64 {
    2 * (m * n * k) as u64
}

/// Per-head `P·g` on `rows` vectors.
fn preconditioner_flops(mode: PreconditionerMode, rows: usize, d: usize, rank: usize) -> u64 {
    match mode {
        PreconditionerMode::Identity => 0,
        PreconditionerMode::Diagonal => (rows * d) as u64,
        PreconditionerMode::DiagLowRank => (rows * d) as u64 + 4 * mm(rows, rank, d),
    }
}

fn attention_flops(b: &BlockConfig, j: usize) -> u64 {
    let (d, k, r) = (b.d_model, b.heads, b.head_dim);
    let kf = k as u64;
    match b.attention {
        AttentionKind::None => 0,
        AttentionKind::Reference => kf * (3 * mm(j, r, d) + 2 * mm(j, j, r) + mm(j, d, r)),
        AttentionKind::Cem => {
            let keys = kf * mm(j, r, d);
            let diag = |copies: u64| copies * ((j * d) as u64 + mm(j, j, d));
            let per_step = kf * (mm(j, r, d) + 2 * mm(j, j, r) + mm(j, d, r))
                + match b.diagonal {
                    DiagonalMode::None => 0,
                    DiagonalMode::Shared => diag(1),
                    DiagonalMode::PerHead => diag(kf),
                }
                + kf * preconditioner_flops(b.attn_preconditioner, j, d, b.attn_precond_rank);
            keys + b.attn_steps as u64 * per_step
        }
    }
}

fn mlp_flops(b: &BlockConfig, j: usize) -> u64 {
    let (d, m) = (b.d_model, b.d_ff);
    match b.mlp {
        MlpKind::ReferenceGated => 3 * mm(j, m, d),
        MlpKind::ReferencePlain => 2 * mm(j, m, d),
        MlpKind::Cem => {
            let per_step = 2 * mm(j, m, d) + preconditioner_flops(b.mlp_preconditioner, j, d, b.mlp_precond_rank);
            mm(j, m, d) + b.mlp_steps as u64 * per_step
        }
    }
}

/// Forward-pass FLOPs for `batch` sequences of `seq_len` positions (points
/// per batch element for the regression head).
pub fn count_flops(cfg: &ModelConfig, seq_len: usize, batch: usize) -> u64 {
    let b = &cfg.block;
    let j = seq_len;
    let io = match cfg.task {
        TaskHead::LmLogits => mm(j, cfg.vocab_size, b.d_model),
        TaskHead::RegressionScalar { input_dim } => mm(j, b.d_model, input_dim) + mm(j, 1, b.d_model),
    };
    let blocks = (cfg.layers * b.layer_reuse) as u64 * (attention_flops(b, j) + mlp_flops(b, j));
    batch as u64 * (io + blocks)
}
