//! Block and model hyperparameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("invalid config: {field}: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttentionKind {
    /// No token mixing; used by the token-free regression stack.
    None,
    Reference,
    #[default]
    Cem,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MlpKind {
    ReferenceGated,
    ReferencePlain,
    #[default]
    Cem,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagonalMode {
    #[default]
    None,
    Shared,
    PerHead,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreconditionerMode {
    #[default]
    Identity,
    Diagonal,
    DiagLowRank,
}

/// Hyperparameters of one residual block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockConfig {
    /// Model width `D_h`.
    pub d_model: usize,
    /// Number of heads `K`.
    pub heads: usize,
    /// Per-head width `D_r`.
    pub head_dim: usize,
    /// MLP intermediate width `D_m`.
    pub d_ff: usize,
    /// Softmax temperature; `None` means `sqrt(head_dim)`.
    pub tau: Option<f64>,
    pub attn_steps: usize,
    pub mlp_steps: usize,
    pub attn_step_size: f64,
    pub mlp_step_size: f64,
    /// Train the step sizes as scalars (initialized from the fixed values).
    pub learnable_step_size: bool,
    pub attention: AttentionKind,
    pub mlp: MlpKind,
    pub diagonal: DiagonalMode,
    pub attn_preconditioner: PreconditionerMode,
    pub mlp_preconditioner: PreconditionerMode,
    pub attn_precond_rank: usize,
    pub mlp_precond_rank: usize,
    pub alibi: bool,
    /// RMSNorm inside the recursion, with its own gain.
    pub inner_norm: bool,
    /// Pre-norms in front of each sublayer.
    pub block_norm: bool,
    /// Times each block is applied with the same weights.
    pub layer_reuse: usize,
    pub norm_eps: f64,
    /// Projection init std; `None` means `1/sqrt(fan_in)`.
    pub init_std: Option<f64>,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            heads: 4,
            head_dim: 8,
            d_ff: 64,
            tau: None,
            attn_steps: 1,
            mlp_steps: 1,
            attn_step_size: 1.0,
            mlp_step_size: 1.0,
            learnable_step_size: false,
            attention: AttentionKind::Cem,
            mlp: MlpKind::Cem,
            diagonal: DiagonalMode::None,
            attn_preconditioner: PreconditionerMode::Identity,
            mlp_preconditioner: PreconditionerMode::Identity,
            attn_precond_rank: 4,
            mlp_precond_rank: 16,
            alibi: false,
            inner_norm: true,
            block_norm: true,
            layer_reuse: 1,
            norm_eps: 1e-6,
            init_std: None,
        }
    }
}

impl BlockConfig {
    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or((self.head_dim as f64).sqrt())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("head_dim", self.head_dim),
            ("d_ff", self.d_ff),
            ("attn_steps", self.attn_steps),
            ("mlp_steps", self.mlp_steps),
            ("layer_reuse", self.layer_reuse),
        ] {
            if v == 0 {
                return Err(ConfigError::new(name, "must be >= 1"));
            }
        }
        if !(self.tau() > 0.0) || !self.tau().is_finite() {
            return Err(ConfigError::new("tau", "must be a positive finite number"));
        }
        if !(self.norm_eps > 0.0) {
            return Err(ConfigError::new("norm_eps", "must be > 0"));
        }
        if self.attn_preconditioner == PreconditionerMode::DiagLowRank && self.attn_precond_rank == 0 {
            return Err(ConfigError::new("attn_precond_rank", "must be >= 1"));
        }
        if self.mlp_preconditioner == PreconditionerMode::DiagLowRank && self.mlp_precond_rank == 0 {
            return Err(ConfigError::new("mlp_precond_rank", "must be >= 1"));
        }
        if let Some(s) = self.init_std {
            if !(s > 0.0) {
                return Err(ConfigError::new("init_std", "must be > 0"));
            }
        }
        for (name, v) in [("attn_step_size", self.attn_step_size), ("mlp_step_size", self.mlp_step_size)] {
            if !v.is_finite() {
                return Err(ConfigError::new(name, "must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TaskHead {
    LmLogits,
    RegressionScalar { input_dim: usize },
}

impl Default for TaskHead {
    fn default() -> Self {
        TaskHead::LmLogits
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub layers: usize,
    pub block: BlockConfig,
    pub task: TaskHead,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 256,
            layers: 2,
            block: BlockConfig::default(),
            task: TaskHead::LmLogits,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.layers == 0 {
            return Err(ConfigError::new("layers", "must be >= 1"));
        }
        self.block.validate().map_err(|e| ConfigError::new(format!("block.{}", e.field), e.reason))?;
        match self.task {
            TaskHead::LmLogits => {
                if self.vocab_size == 0 {
                    return Err(ConfigError::new("vocab_size", "must be >= 1"));
                }
            }
            TaskHead::RegressionScalar { input_dim } => {
                if input_dim == 0 {
                    return Err(ConfigError::new("task.input_dim", "must be >= 1"));
                }
                if self.block.attention != AttentionKind::None {
                    return Err(ConfigError::new(
                        "block.attention",
                        "regression rows are independent points; attention must be \"none\"",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Llama-style baselines at the four published sizes (vocab 32000,
    /// context 2048). They build but are far too large to train here.
    pub fn preset(name: &str) -> Option<Self> {
        let (d, layers, heads, d_ff) = match name {
            "86m" => (672, 8, 8, 1792),
            "108m" => (672, 12, 12, 1792),
            "134m" => (768, 12, 12, 2048),
            "162m" => (864, 12, 12, 2304),
            _ => return None,
        };
        Some(Self {
            vocab_size: 32_000,
            layers,
            block: BlockConfig {
                d_model: d,
                heads,
                head_dim: d / heads,
                d_ff,
                attention: AttentionKind::Reference,
                mlp: MlpKind::ReferenceGated,
                init_std: Some(0.02),
                ..BlockConfig::default()
            },
            task: TaskHead::LmLogits,
        })
    }

    pub const PRESETS: [&'static str; 4] = ["86m", "108m", "134m", "162m"];
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_temperature_is_sqrt_head_dim() {
        let c = BlockConfig {
            head_dim: 16,
            ..BlockConfig::default()
        };
        assert_eq!(c.tau(), 4.0);
    }

    #[test]
    fn zero_layers_rejected() {
        let c = ModelConfig {
            layers: 0,
            ..ModelConfig::default()
        };
        assert_eq!(c.validate().unwrap_err().field, "layers");
    }

    #[test]
    fn regression_requires_token_free_blocks() {
        let mut c = ModelConfig {
            task: TaskHead::RegressionScalar { input_dim: 10 },
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        c.block.attention = AttentionKind::None;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn json_round_trip_with_defaults() {
        let c: ModelConfig = serde_json::from_str(r#"{"layers": 3, "block": {"mlp_steps": 2}}"#).unwrap();
        assert_eq!(c.layers, 3);
        assert_eq!(c.block.mlp_steps, 2);
        let back: ModelConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<BlockConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
