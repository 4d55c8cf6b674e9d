use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{AttentionKind, BlockConfig, DiagonalMode, MlpKind, ModelConfig, PreconditionerMode};
use crate::model::Model;
use crate::par::{self, Exec};
use crate::tensor::{Tape, Tensor};

use super::VerifyError;

pub const CAUSALITY_TOLERANCE: f64 = 1e-12;

/// Block variants covering every attention, MLP, diagonal, preconditioner
/// and positional-bias option.
pub fn causality_variants() -> Vec<(&'static str, BlockConfig)> {
    let base = BlockConfig {
        d_model: 8,
        heads: 2,
        head_dim: 4,
        d_ff: 12,
        attn_precond_rank: 2,
        mlp_precond_rank: 3,
        ..BlockConfig::default()
    };
    let with = |f: &dyn Fn(&mut BlockConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    vec![
        ("reference-gated", with(&|c| {
            c.attention = AttentionKind::Reference;
            c.mlp = MlpKind::ReferenceGated;
        })),
        ("reference-plain-alibi", with(&|c| {
            c.attention = AttentionKind::Reference;
            c.mlp = MlpKind::ReferencePlain;
            c.alibi = true;
        })),
        ("cem", base.clone()),
        ("cem-no-norms", with(&|c| {
            c.inner_norm = false;
            c.block_norm = false;
        })),
        ("cem-shared-diag-alibi", with(&|c| {
            c.diagonal = DiagonalMode::Shared;
            c.alibi = true;
        })),
        ("cem-per-head-diag-diagonal-precond", with(&|c| {
            c.diagonal = DiagonalMode::PerHead;
            c.attn_preconditioner = PreconditionerMode::Diagonal;
            c.mlp_preconditioner = PreconditionerMode::Diagonal;
        })),
        ("cem-low-rank-precond-learnable-step", with(&|c| {
            c.attn_preconditioner = PreconditionerMode::DiagLowRank;
            c.mlp_preconditioner = PreconditionerMode::DiagLowRank;
            c.learnable_step_size = true;
            c.attn_step_size = 0.7;
        })),
        ("cem-attention-reference-mlp", with(&|c| c.mlp = MlpKind::ReferenceGated)),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalityReport {
    pub variant: String,
    pub steps: usize,
    pub instances: usize,
    /// Largest change in logits at positions `≤ i` after perturbing tokens `> i`.
    pub max_leak: f64,
    pub passed: bool,
}

/// Largest leak for one random model and sequence: for each cut `i`, all
/// tokens after `i` are redrawn and rows `0..=i` of the logits compared.
pub fn causality_leak(block: &BlockConfig, steps: usize, seed: u64) -> Result<f64, VerifyError> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let cfg = ModelConfig {
        vocab_size: 11,
        layers: 2,
        block: BlockConfig {
            attn_steps: steps,
            mlp_steps: steps,
            ..block.clone()
        },
        ..ModelConfig::default()
    };
    let mut model = Model::build(&cfg, seed)?;
    // Non-zero diagonals and biases so every term can leak.
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let t = model.store.get(id).clone();
        if t.data().iter().all(|&v| v == 0.0) {
            let noise = Tensor::randn(t.shape(), 0.3, &mut r);
            model.store.set(id, noise)?;
        }
    }
    let len = r.gen_range(2..=9);
    let tokens: Vec<usize> = (0..len).map(|_| r.gen_range(0..cfg.vocab_size)).collect();
    let tape = Tape::new();
    let b = model.store.bind_frozen(&tape);
    let base = model.logits(&b, &tokens)?.value();
    let mut worst = 0.0_f64;
    for cut in 0..len - 1 {
        let mut perturbed = tokens.clone();
        for tok in perturbed.iter_mut().skip(cut + 1) {
            *tok = (*tok + r.gen_range(1..cfg.vocab_size)) % cfg.vocab_size;
        }
        let tape = Tape::new();
        let b = model.store.bind_frozen(&tape);
        let other = model.logits(&b, &perturbed)?.value();
        let lhs = base.slice_rows(0, cut + 1)?;
        let rhs = other.slice_rows(0, cut + 1)?;
        worst = worst.max(lhs.max_abs_diff(&rhs)?);
    }
    Ok(worst)
}

pub fn causality_check(
    name: &str,
    block: &BlockConfig,
    steps: usize,
    instances: usize,
    base_seed: u64,
    exec: Exec,
) -> Result<CausalityReport, VerifyError> {
    let leaks = par::map_range(exec, instances, |i| causality_leak(block, steps, base_seed + i as u64));
    let max_leak = leaks.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().fold(0.0, f64::max);
    Ok(CausalityReport {
        variant: name.to_string(),
        steps,
        instances,
        max_leak,
        passed: max_leak <= CAUSALITY_TOLERANCE,
    })
}
