//! Full stacks: input map, residual blocks, final norm and task head.

mod count;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AttentionKind, ConfigError, MlpKind, ModelConfig, TaskHead};
use crate::layers::{
    cem_attention, cem_mlp, projection_std, reference_gated_mlp, reference_mha, reference_plain_mlp, rmsnorm, Bound,
    CemAttentionParams, CemMlpParams, GatedMlpParams, LayerError, ParamGroup, ParamId, ParamStore, PlainMlpParams,
    ReferenceMhaParams, RmsNormParams,
};
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub use count::{count_flops, count_parameters, count_stored, ParameterCounts};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("input: {0}")]
    Input(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

impl From<std::io::Error> for ModelError {
    fn from(e: std::io::Error) -> Self {
        ModelError::Layer(LayerError::Io(e))
    }
}

type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Debug, PartialEq)]
pub enum AttentionLayer {
    None,
    Reference(ReferenceMhaParams),
    Cem(CemAttentionParams),
}

#[derive(Clone, Debug, PartialEq)]
pub enum MlpLayer {
    Gated(GatedMlpParams),
    Plain(PlainMlpParams),
    Cem(CemMlpParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub attn_norm: Option<RmsNormParams>,
    pub attention: AttentionLayer,
    pub mlp_norm: Option<RmsNormParams>,
    pub mlp: MlpLayer,
}

#[derive(Clone, Debug, PartialEq)]
pub enum InputMap {
    Embedding(ParamId),
    Lift { w: ParamId, b: ParamId },
}

#[derive(Clone, Debug, PartialEq)]
pub enum OutputHead {
    Logits(ParamId),
    Scalar { w: ParamId, b: ParamId },
}

/// One training or evaluation example.
#[derive(Clone, Copy, Debug)]
pub enum Example<'a> {
    /// A window of `J+1` tokens; position `i` predicts token `i+1`.
    Tokens(&'a [usize]),
    /// Independent points `[n, d_in]` with targets `[n, 1]`.
    Points { inputs: &'a Tensor, targets: &'a Tensor },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub input: InputMap,
    pub blocks: Vec<Block>,
    pub final_norm: Option<RmsNormParams>,
    pub head: OutputHead,
}

impl Model {
    /// Deterministic initialization from `seed`.
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let bc = &cfg.block;
        let d = bc.d_model;
        let input = match cfg.task {
            TaskHead::LmLogits => InputMap::Embedding(store.add_randn(
                "embed",
                &[cfg.vocab_size, d],
                bc.init_std.unwrap_or(1.0),
                ParamGroup::Embedding,
                &mut rng,
            )),
            TaskHead::RegressionScalar { input_dim } => InputMap::Lift {
                w: store.add_randn("lift.w", &[d, input_dim], projection_std(bc.init_std, input_dim), ParamGroup::Input, &mut rng),
                b: store.add("lift.b", Tensor::zeros(&[d]), ParamGroup::Input, false),
            },
        };
        let mut blocks = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = format!("block{l}");
            let norm = |store: &mut ParamStore, name: &str| {
                bc.block_norm
                    .then(|| RmsNormParams::init(store, &format!("{p}.{name}"), d, bc.norm_eps))
            };
            let (attn_norm, attention) = match bc.attention {
                AttentionKind::None => (None, AttentionLayer::None),
                AttentionKind::Reference => (
                    norm(&mut store, "attn_norm"),
                    AttentionLayer::Reference(ReferenceMhaParams::init(&mut store, &format!("{p}.attn"), bc, &mut rng)),
                ),
                AttentionKind::Cem => (
                    norm(&mut store, "attn_norm"),
                    AttentionLayer::Cem(CemAttentionParams::init(&mut store, &format!("{p}.attn"), bc, &mut rng)),
                ),
            };
            let mlp_norm = norm(&mut store, "mlp_norm");
            let mlp = match bc.mlp {
                MlpKind::ReferenceGated => MlpLayer::Gated(GatedMlpParams::init(&mut store, &format!("{p}.mlp"), bc, &mut rng)),
                MlpKind::ReferencePlain => MlpLayer::Plain(PlainMlpParams::init(&mut store, &format!("{p}.mlp"), bc, &mut rng)),
                MlpKind::Cem => MlpLayer::Cem(CemMlpParams::init(&mut store, &format!("{p}.mlp"), bc, &mut rng)),
            };
            blocks.push(Block {
                attn_norm,
                attention,
                mlp_norm,
                mlp,
            });
        }
        let final_norm = bc
            .block_norm
            .then(|| RmsNormParams::init(&mut store, "final_norm", d, bc.norm_eps));
        let head = match cfg.task {
            TaskHead::LmLogits => OutputHead::Logits(store.add_randn(
                "head",
                &[cfg.vocab_size, d],
                projection_std(bc.init_std, d),
                ParamGroup::Head,
                &mut rng,
            )),
            TaskHead::RegressionScalar { .. } => OutputHead::Scalar {
                w: store.add_randn("head.w", &[1, d], projection_std(bc.init_std, d), ParamGroup::Head, &mut rng),
                b: store.add("head.b", Tensor::zeros(&[1]), ParamGroup::Head, false),
            },
        };
        Ok(Self {
            config: cfg.clone(),
            store,
            input,
            blocks,
            final_norm,
            head,
        })
    }

    /// Reference-layer model reading the same storage, with values tied to
    /// keys and outputs to queries, and the MLP down map tied to the up map.
    pub fn tied_reference(&self) -> Self {
        let mut out = self.clone();
        for block in &mut out.blocks {
            if let AttentionLayer::Cem(p) = &block.attention {
                block.attention = AttentionLayer::Reference(ReferenceMhaParams::tied_to(p));
            }
            if let MlpLayer::Cem(p) = &block.mlp {
                block.mlp = MlpLayer::Gated(GatedMlpParams::tied_to(p));
            }
        }
        if out.config.block.attention == AttentionKind::Cem {
            out.config.block.attention = AttentionKind::Reference;
        }
        if out.config.block.mlp == MlpKind::Cem {
            out.config.block.mlp = MlpKind::ReferenceGated;
        }
        out
    }

    /// Residual stream after every block, `[J, D_h]`.
    pub fn hidden<'t>(&self, b: &Bound<'t>, h: Var<'t>) -> Result<Var<'t>> {
        let mut h = h;
        for block in &self.blocks {
            for _ in 0..self.config.block.layer_reuse {
                h = self.block_forward(b, block, h)?;
            }
        }
        Ok(rmsnorm(b, self.final_norm.as_ref(), h)?)
    }

    fn block_forward<'t>(&self, b: &Bound<'t>, block: &Block, h: Var<'t>) -> Result<Var<'t>> {
        let h = match &block.attention {
            AttentionLayer::None => h,
            AttentionLayer::Reference(p) => {
                let n = rmsnorm(b, block.attn_norm.as_ref(), h)?;
                h.add(reference_mha(b, p, n)?)?
            }
            AttentionLayer::Cem(p) => {
                let n = rmsnorm(b, block.attn_norm.as_ref(), h)?;
                cem_attention(b, p, n, h, None)?
            }
        };
        let n = rmsnorm(b, block.mlp_norm.as_ref(), h)?;
        Ok(match &block.mlp {
            MlpLayer::Gated(p) => h.add(reference_gated_mlp(b, p, n)?)?,
            MlpLayer::Plain(p) => h.add(reference_plain_mlp(b, p, n)?)?,
            MlpLayer::Cem(p) => cem_mlp(b, p, n, h, None)?,
        })
    }

    /// Logits `[J, V]` for a token sequence.
    pub fn logits<'t>(&self, b: &Bound<'t>, tokens: &[usize]) -> Result<Var<'t>> {
        let (InputMap::Embedding(e), OutputHead::Logits(w)) = (&self.input, &self.head) else {
            return Err(ModelError::Input("token input on a regression model".into()));
        };
        if let Some(&t) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(ModelError::Input(format!("token {t} outside vocabulary {}", self.config.vocab_size)));
        }
        let h = b.var(*e).gather_rows(tokens)?;
        Ok(self.hidden(b, h)?.matmul_nt(b.var(*w))?)
    }

    /// Predictions `[n, 1]` for points `[n, d_in]`.
    pub fn predict<'t>(&self, b: &Bound<'t>, inputs: Var<'t>) -> Result<Var<'t>> {
        let (InputMap::Lift { w, b: bias }, OutputHead::Scalar { w: hw, b: hb }) = (&self.input, &self.head) else {
            return Err(ModelError::Input("point input on a language model".into()));
        };
        let h = inputs.matmul_nt(b.var(*w))?.add(b.var(*bias))?;
        Ok(self.hidden(b, h)?.matmul_nt(b.var(*hw))?.add(b.var(*hb))?)
    }

    /// Mean next-token cross-entropy, or mean squared error.
    pub fn loss<'t>(&self, b: &Bound<'t>, example: Example<'_>) -> Result<Var<'t>> {
        let tape = b.tape();
        match example {
            Example::Tokens(window) => {
                if window.len() < 2 {
                    return Err(ModelError::Input("token window needs at least 2 tokens".into()));
                }
                let (inputs, targets) = (&window[..window.len() - 1], &window[1..]);
                if let Some(&t) = targets.iter().find(|&&t| t >= self.config.vocab_size) {
                    return Err(ModelError::Input(format!("token {t} outside vocabulary {}", self.config.vocab_size)));
                }
                let logp = self.logits(b, inputs)?.log_softmax_lastdim();
                let v = self.config.vocab_size;
                let mut onehot = vec![0.0; targets.len() * v];
                for (i, &t) in targets.iter().enumerate() {
                    onehot[i * v + t] = 1.0;
                }
                let pick = tape.constant(Tensor::new(vec![targets.len(), v], onehot)?);
                Ok(logp.mul(pick)?.sum().scale(-1.0 / targets.len() as f64))
            }
            Example::Points { inputs, targets } => {
                if inputs.rows() != targets.rows() {
                    return Err(ModelError::Input(format!(
                        "{} inputs but {} targets",
                        inputs.rows(),
                        targets.rows()
                    )));
                }
                let pred = self.predict(b, tape.constant(inputs.clone()))?;
                let err = pred.sub(tape.constant(targets.clone()))?;
                Ok(err.mul(err)?.sum().scale(1.0 / targets.numel() as f64))
            }
        }
    }

    /// Loss value and gradients aligned with the store.
    pub fn loss_and_grad(&self, example: Example<'_>) -> Result<(f64, Vec<Tensor>)> {
        let tape = Tape::new();
        let b = self.store.bind(&tape);
        let loss = self.loss(&b, example)?;
        let value = loss.value().item();
        let mut grads = tape.backward(loss)?;
        Ok((value, b.gradients(&mut grads)))
    }

    pub fn loss_value(&self, example: Example<'_>) -> Result<f64> {
        let tape = Tape::new();
        let b = self.store.bind_frozen(&tape);
        Ok(self.loss(&b, example)?.value().item())
    }

    pub fn parameter_counts(&self) -> ParameterCounts {
        count_stored(&self.store)
    }

    /// Writes `path` (tensors) and `path.json` (versioned config).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        self.store.write_to(&mut f)?;
        f.flush()?;
        let meta = CheckpointMeta {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
        };
        let json = serde_json::to_string_pretty(&meta).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        fs::write(sidecar(path), json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(sidecar(path))?;
        let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if meta.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", meta.version)));
        }
        let mut model = Self::build(&meta.config, 0)?;
        model.store.read_values(&mut std::io::BufReader::new(fs::File::open(path)?))?;
        Ok(model)
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    version: u32,
    config: ModelConfig,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[cfg(test)]
mod tests;
