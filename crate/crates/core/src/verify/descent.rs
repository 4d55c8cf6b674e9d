use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::BlockConfig;
use crate::energy::{
    elementwise_energy, elementwise_energy_grad, interaction_energy, interaction_energy_grad, ElementwiseEnergySpec,
    InteractionEnergySpec, InteractionForm,
};
use crate::layers::{cem_attention, cem_mlp, CemAttentionParams, CemMlpParams, ParamStore, StepSize};
use crate::tensor::{Tape, Tensor};

use super::VerifyError;

pub const INITIAL_STEP: f64 = 1e-2;
pub const MIN_STEP: f64 = 1e-8;
/// Gradient norm below which a step may leave the energy unchanged.
pub const STATIONARY_GRAD: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnergyKind {
    Interaction,
    Elementwise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DescentVerdict {
    Decreasing,
    Stationary,
    NoDescent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescentTrace {
    pub kind: EnergyKind,
    /// Summed energy over positions at `t = 0..=T`.
    pub energies: Vec<f64>,
    pub grad_norms: Vec<f64>,
    /// Step size of the accepted (or last tried) trace.
    pub step_size: f64,
    pub verdict: DescentVerdict,
}

/// Tied layers in pure-gradient mode plus a fixed context.
#[derive(Clone, Debug)]
pub struct DescentCase {
    pub store: ParamStore,
    pub attention: CemAttentionParams,
    pub mlp: CemMlpParams,
    pub context: Tensor,
}

impl DescentCase {
    pub fn random(seed: u64, d_model: usize, heads: usize, d_ff: usize, len: usize, steps: usize) -> Self {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let cfg = BlockConfig {
            d_model,
            heads,
            head_dim: d_model.div_ceil(heads),
            d_ff,
            attn_steps: steps,
            mlp_steps: steps,
            inner_norm: false,
            ..BlockConfig::default()
        };
        let mut store = ParamStore::new();
        let attention = CemAttentionParams::init(&mut store, "attn", &cfg, &mut r);
        let mlp = CemMlpParams::init(&mut store, "mlp", &cfg, &mut r);
        let context = Tensor::randn(&[len, d_model], 1.0, &mut r);
        Self {
            store,
            attention,
            mlp,
            context,
        }
    }

    fn interaction_spec(&self) -> InteractionEnergySpec {
        let heads = &self.attention.heads;
        InteractionEnergySpec {
            form: InteractionForm::LowRank {
                w_q: heads.iter().map(|h| self.store.get(h.w_q).clone()).collect(),
                w_k: heads.iter().map(|h| self.store.get(h.w_k).clone()).collect(),
            },
            tau: self.attention.tau,
            alibi: self.attention.alibi.as_ref().map(|a| a.snapshot(&self.store)),
        }
    }

    fn elementwise_spec(&self) -> ElementwiseEnergySpec {
        ElementwiseEnergySpec {
            w: self.store.get(self.mlp.w).clone(),
            v: self.store.get(self.mlp.v).clone(),
        }
    }

    /// Summed energy and gradient norm over all positions.
    pub fn energy(&self, kind: EnergyKind, x: &Tensor) -> Result<(f64, f64), VerifyError> {
        let (mut e, mut g2) = (0.0, 0.0);
        for i in 0..x.rows() {
            let (ei, gi) = match kind {
                EnergyKind::Interaction => {
                    let spec = self.interaction_spec();
                    (
                        interaction_energy(x.row(i), &self.context, i + 1, &spec)?,
                        interaction_energy_grad(x.row(i), &self.context, i + 1, &spec)?,
                    )
                }
                EnergyKind::Elementwise => {
                    let spec = self.elementwise_spec();
                    (
                        elementwise_energy(x.row(i), self.context.row(i), &spec)?,
                        elementwise_energy_grad(x.row(i), self.context.row(i), &spec)?,
                    )
                }
            };
            e += ei;
            g2 += gi.iter().map(|v| v * v).sum::<f64>();
        }
        Ok((e, g2.sqrt()))
    }

    /// Iterates `x⁽⁰⁾..x⁽ᵀ⁾` of the layer run with step `eta`.
    pub fn iterates(&self, kind: EnergyKind, eta: f64) -> Result<Vec<Tensor>, VerifyError> {
        let tape = Tape::new();
        let b = self.store.bind_frozen(&tape);
        let c = tape.constant(self.context.clone());
        let mut seen = Vec::new();
        let mut record = |_: usize, x: &Tensor| seen.push(x.clone());
        match kind {
            EnergyKind::Interaction => {
                let p = CemAttentionParams {
                    step_size: StepSize::Fixed(eta),
                    ..self.attention.clone()
                };
                cem_attention(&b, &p, c, c, Some(&mut record))?;
            }
            EnergyKind::Elementwise => {
                let p = CemMlpParams {
                    step_size: StepSize::Fixed(eta),
                    ..self.mlp.clone()
                };
                cem_mlp(&b, &p, c, c, Some(&mut record))?;
            }
        }
        Ok(seen)
    }
}

/// Halves the step from 1e-2 until the energy strictly decreases at every
/// step with a non-negligible gradient, or the step drops below 1e-8.
/// `flip_sign` runs the update in the ascent direction, as a mutant.
pub fn descent_trace(case: &DescentCase, kind: EnergyKind, flip_sign: bool) -> Result<DescentTrace, VerifyError> {
    let sign = if flip_sign { -1.0 } else { 1.0 };
    let mut eta = INITIAL_STEP;
    loop {
        let xs = case.iterates(kind, sign * eta)?;
        let evals = xs.iter().map(|x| case.energy(kind, x)).collect::<Result<Vec<_>, _>>()?;
        let energies: Vec<f64> = evals.iter().map(|e| e.0).collect();
        let grad_norms: Vec<f64> = evals.iter().map(|e| e.1).collect();
        let mut trace = DescentTrace {
            kind,
            energies,
            grad_norms,
            step_size: eta,
            verdict: DescentVerdict::Decreasing,
        };
        if trace.grad_norms.iter().all(|&g| g <= STATIONARY_GRAD) {
            trace.verdict = DescentVerdict::Stationary;
            return Ok(trace);
        }
        let ok = (0..trace.energies.len() - 1).all(|t| {
            let (a, b) = (trace.energies[t], trace.energies[t + 1]);
            if trace.grad_norms[t] > STATIONARY_GRAD {
                b < a
            } else {
                b <= a
            }
        });
        if ok {
            return Ok(trace);
        }
        eta *= 0.5;
        if eta < MIN_STEP {
            trace.verdict = DescentVerdict::NoDescent;
            return Ok(trace);
        }
    }
}
