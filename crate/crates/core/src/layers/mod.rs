//! Reference and weight-tied layers on the tape.
//!
//! All layers act on a `[J, D_h]` matrix of positions at once. Parameters
//! live in a [`ParamStore`]; layer structs hold [`ParamId`]s, so tying two
//! layers means sharing ids.

mod alibi;
mod cem;
pub mod checkpoint;
mod norm;
mod params;
mod precond;
mod reference;

use thiserror::Error;

use crate::config::ConfigError;
use crate::tensor::TensorError;

pub use alibi::AlibiIds;
pub use cem::{cem_attention, cem_mlp, CemAttentionParams, CemMlpParams, DiagonalIds, Observer, StepSize, TiedHead};
pub use norm::{rmsnorm, rmsnorm_tensor, RmsNormParams};
pub use params::{Bound, ParamEntry, ParamGroup, ParamId, ParamStore};
pub use precond::{apply_preconditioner, PreconditionerParams, LOW_RANK_INIT_STD};
pub use reference::{
    gated_mlp_naive, reference_gated_mlp, reference_mha, reference_mha_concat, reference_plain_mlp, GatedMlpParams,
    MhaHead, PlainMlpParams, ReferenceMhaParams,
};

pub(crate) use params::projection_std;

#[derive(Debug, Error)]
pub enum LayerError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl ReferenceMhaParams {
    /// Reference attention sharing the tied layer's storage: values use the
    /// key matrices and outputs the query matrices.
    pub fn tied_to(cem: &CemAttentionParams) -> Self {
        Self {
            heads: cem
                .heads
                .iter()
                .map(|h| MhaHead {
                    w_q: h.w_q,
                    w_k: h.w_k,
                    w_v: h.w_k,
                    w_o: h.w_q,
                })
                .collect(),
            alibi: cem.alibi.clone(),
            tau: cem.tau,
        }
    }
}

impl GatedMlpParams {
    /// Gate `W`, up `V`, down `Vᵀ`.
    pub fn tied_to(cem: &CemMlpParams) -> Self {
        Self {
            w_gate: cem.w,
            w_up: cem.v,
            w_down_t: cem.v,
        }
    }
}

#[cfg(test)]
mod tests;
