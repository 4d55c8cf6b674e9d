use serde::{Deserialize, Serialize};

use crate::config::{AttentionKind, DiagonalMode, MlpKind, ModelConfig, PreconditionerMode};
use crate::layers::ParamGroup;
use crate::model::{count_flops, count_parameters};

/// Exact reduced fraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: usize,
    pub den: usize,
}

impl Ratio {
    pub fn new(num: usize, den: usize) -> Self {
        let g = gcd(num, den).max(1);
        Self {
            num: num / g,
            den: den / g,
        }
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl std::fmt::Display for Ratio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub name: String,
    pub attention_core: usize,
    pub mlp_core: usize,
    pub total: usize,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountTable {
    pub seq_len: usize,
    pub rows: Vec<CountRow>,
    /// CEM over reference, for the first two rows.
    pub attention_ratio: Option<Ratio>,
    pub mlp_ratio: Option<Ratio>,
    pub total_ratio: f64,
}

/// Same widths with reference attention and gated MLP, no recursion,
/// diagonals or preconditioners.
pub fn reference_counterpart(cfg: &ModelConfig) -> ModelConfig {
    let mut r = cfg.clone();
    let b = &mut r.block;
    if b.attention == AttentionKind::Cem {
        b.attention = AttentionKind::Reference;
    }
    if b.mlp == MlpKind::Cem {
        b.mlp = MlpKind::ReferenceGated;
    }
    b.attn_steps = 1;
    b.mlp_steps = 1;
    b.diagonal = DiagonalMode::None;
    b.attn_preconditioner = PreconditionerMode::Identity;
    b.mlp_preconditioner = PreconditionerMode::Identity;
    b.learnable_step_size = false;
    r
}

fn row(name: &str, cfg: &ModelConfig, seq_len: usize) -> CountRow {
    let c = count_parameters(cfg);
    CountRow {
        name: name.into(),
        attention_core: c.group(ParamGroup::Attention),
        mlp_core: c.group(ParamGroup::Mlp),
        total: c.total,
        flops: count_flops(cfg, seq_len, 1),
    }
}

/// Counts for a CEM config and its reference counterpart.
pub fn count_table(cfg: &ModelConfig, seq_len: usize) -> CountTable {
    let cem = row("cem", cfg, seq_len);
    let reference = row("reference", &reference_counterpart(cfg), seq_len);
    let ratio = |a: usize, b: usize| (b > 0).then(|| Ratio::new(a, b));
    CountTable {
        seq_len,
        attention_ratio: ratio(cem.attention_core, reference.attention_core),
        mlp_ratio: ratio(cem.mlp_core, reference.mlp_core),
        total_ratio: cem.total as f64 / reference.total as f64,
        rows: vec![cem, reference],
    }
}
