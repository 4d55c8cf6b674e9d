//! Numerical verification: gradient checks, tied-weight equivalence,
//! monotone energy descent and causality.

mod causality;
mod descent;
mod equivalence;
mod gradcheck;

pub use causality::{causality_check, causality_leak, causality_variants, CausalityReport, CAUSALITY_TOLERANCE};
pub use descent::{
    descent_trace, DescentCase, DescentTrace, DescentVerdict, EnergyKind, INITIAL_STEP, MIN_STEP, STATIONARY_GRAD,
};
pub use equivalence::{equivalence_deviation, tied_equivalence_check, Component, EquivalenceReport, SweepOptions};
pub use gradcheck::{
    check_gradient, check_model_gradient, finite_diff_grad, relative_error, GradCheckReport, ParamCheck,
    WorstCoordinate, DEFAULT_STEP, REL_FLOOR,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::BlockConfig;
use crate::energy::{
    elementwise_energy, elementwise_energy_grad, interaction_energy, interaction_energy_grad, AlibiParams,
    ElementwiseEnergySpec, EnergyError, InteractionEnergySpec, InteractionForm,
};
use crate::layers::{cem_attention, cem_mlp, CemAttentionParams, CemMlpParams, LayerError, ParamStore};
use crate::model::ModelError;
use crate::par::{self, Exec};
use crate::tensor::{Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("oracle: {0}")]
    Oracle(String),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One named pass/fail outcome with its measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub passed: bool,
    pub detail: serde_json::Value,
}

impl Verdict {
    fn new(check: impl Into<String>, passed: bool, detail: impl Serialize) -> Self {
        Self {
            check: check.into(),
            passed,
            detail: serde_json::to_value(detail).unwrap_or(serde_json::Value::Null),
        }
    }
}

pub const ENERGY_GRAD_TOLERANCE: f64 = 1e-5;
pub const CONSISTENCY_TOLERANCE: f64 = 1e-10;

fn random_alibi(heads: usize, r: &mut ChaCha8Rng) -> AlibiParams {
    AlibiParams {
        slopes: (0..heads).map(|_| r.gen_range(0.0..1.0)).collect(),
        b_self: r.gen_range(-1.0..1.0),
        b_cross: r.gen_range(-1.0..1.0),
    }
}

/// Largest per-coordinate relative error between the closed-form energy
/// gradients and central differences, over every interaction form and the
/// element-wise energy, for one random instance.
pub fn energy_gradient_error(seed: u64) -> Result<f64, VerifyError> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let d = r.gen_range(2..=12);
    let heads = r.gen_range(1..=3);
    let rank = r.gen_range(1..=d);
    let len = r.gen_range(1..=8);
    let query = r.gen_range(1..=len);
    let history = Tensor::randn(&[len, d], 1.0, &mut r);
    let x = Tensor::randn(&[d], 1.0, &mut r);
    let w = 1.0 / (d as f64).sqrt();
    let mut mats = |rows: usize| -> Vec<Tensor> { (0..heads).map(|_| Tensor::randn(&[rows, d], w, &mut r)).collect() };
    let (w_q, w_k, a) = (mats(rank), mats(rank), mats(d));
    let diag: Vec<Tensor> = (0..heads).map(|_| Tensor::randn(&[d], 0.3, &mut r)).collect();
    let alibi = if r.gen_bool(0.5) { Some(random_alibi(heads, &mut r)) } else { None };
    let tau = r.gen_range(0.5..3.0);
    let forms = [
        InteractionForm::Full { a },
        InteractionForm::LowRank {
            w_q: w_q.clone(),
            w_k: w_k.clone(),
        },
        InteractionForm::DiagLowRank { diag, w_q, w_k },
    ];
    let mut worst = 0.0_f64;
    let mut compare = |analytic: Vec<f64>, numeric: Tensor| {
        for (a, f) in analytic.iter().zip(numeric.data()) {
            worst = worst.max(relative_error(*a, *f));
        }
    };
    for form in forms {
        let spec = InteractionEnergySpec {
            form,
            tau,
            alibi: alibi.clone(),
        };
        let analytic = interaction_energy_grad(x.data(), &history, query, &spec)?;
        let numeric = finite_diff_grad(
            |p| interaction_energy(p.data(), &history, query, &spec).unwrap_or(f64::NAN),
            &x,
            DEFAULT_STEP,
        )?;
        compare(analytic, numeric);
    }
    let d_ff = r.gen_range(1..=24);
    let spec = ElementwiseEnergySpec {
        w: Tensor::randn(&[d_ff, d], w, &mut r),
        v: Tensor::randn(&[d_ff, d], w, &mut r),
    };
    let h = history.row(0).to_vec();
    let analytic = elementwise_energy_grad(x.data(), &h, &spec)?;
    let numeric =
        finite_diff_grad(|p| elementwise_energy(p.data(), &h, &spec).unwrap_or(f64::NAN), &x, DEFAULT_STEP)?;
    compare(analytic, numeric);
    Ok(worst)
}

/// Largest deviation between a single unit step of each tied layer (no
/// norms, identity preconditioner, zero diagonal) and `x - ∇E(x)`
/// computed from the explicit energies.
pub fn energy_consistency_error(seed: u64) -> Result<f64, VerifyError> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let heads = r.gen_range(1..=3);
    let head_dim = r.gen_range(1..=6);
    let cfg = BlockConfig {
        d_model: r.gen_range(2..=10),
        heads,
        head_dim,
        d_ff: r.gen_range(1..=16),
        inner_norm: false,
        alibi: r.gen_bool(0.5),
        tau: Some(r.gen_range(0.5..3.0)),
        ..BlockConfig::default()
    };
    let len = r.gen_range(1..=8);
    let mut store = ParamStore::new();
    let attn = CemAttentionParams::init(&mut store, "attn", &cfg, &mut r);
    let mlp = CemMlpParams::init(&mut store, "mlp", &cfg, &mut r);
    if let Some(a) = &attn.alibi {
        store.set(a.b_self, Tensor::scalar(r.gen_range(-1.0..1.0)))?;
        store.set(a.b_cross, Tensor::scalar(r.gen_range(-1.0..1.0)))?;
    }
    let context = Tensor::randn(&[len, cfg.d_model], 1.0, &mut r);
    let init = Tensor::randn(&[len, cfg.d_model], 1.0, &mut r);
    let tape = Tape::new();
    let b = store.bind_frozen(&tape);
    let (c, x0) = (tape.constant(context.clone()), tape.constant(init.clone()));
    let attn_out = cem_attention(&b, &attn, c, x0, None)?.value();
    let mlp_out = cem_mlp(&b, &mlp, c, x0, None)?.value();

    let ispec = InteractionEnergySpec {
        form: InteractionForm::LowRank {
            w_q: attn.heads.iter().map(|h| store.get(h.w_q).clone()).collect(),
            w_k: attn.heads.iter().map(|h| store.get(h.w_k).clone()).collect(),
        },
        tau: attn.tau,
        alibi: attn.alibi.as_ref().map(|a| a.snapshot(&store)),
    };
    let espec = ElementwiseEnergySpec {
        w: store.get(mlp.w).clone(),
        v: store.get(mlp.v).clone(),
    };
    let mut worst = 0.0_f64;
    for i in 0..len {
        let x = init.row(i);
        let gi = interaction_energy_grad(x, &context, i + 1, &ispec)?;
        let ge = elementwise_energy_grad(x, context.row(i), &espec)?;
        for j in 0..cfg.d_model {
            worst = worst.max((attn_out.at(i, j) - (x[j] - gi[j])).abs());
            worst = worst.max((mlp_out.at(i, j) - (x[j] - ge[j])).abs());
        }
    }
    Ok(worst)
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub base_seed: u64,
    /// Instances per randomized check.
    pub instances: usize,
    pub exec: Exec,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            base_seed: 0,
            instances: 100,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
struct WorstOf {
    instances: usize,
    worst: f64,
    tolerance: f64,
}

fn worst_of(
    opts: &SuiteOptions,
    f: impl Fn(u64) -> Result<f64, VerifyError> + Sync + Send,
) -> Result<f64, VerifyError> {
    let vals = par::map_range(opts.exec, opts.instances, |i| f(opts.base_seed + i as u64));
    Ok(vals.into_iter().collect::<Result<Vec<_>, _>>()?.into_iter().fold(0.0, f64::max))
}

/// Every verification check, in a fixed order.
pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<Verdict>, VerifyError> {
    let mut out = Vec::new();
    let w = worst_of(opts, energy_gradient_error)?;
    out.push(Verdict::new(
        "energy-gradient-identities",
        w <= ENERGY_GRAD_TOLERANCE,
        WorstOf {
            instances: opts.instances,
            worst: w,
            tolerance: ENERGY_GRAD_TOLERANCE,
        },
    ));
    let w = worst_of(opts, energy_consistency_error)?;
    out.push(Verdict::new(
        "layer-energy-consistency",
        w <= CONSISTENCY_TOLERANCE,
        WorstOf {
            instances: opts.instances,
            worst: w,
            tolerance: CONSISTENCY_TOLERANCE,
        },
    ));

    let sweep = SweepOptions {
        configs: opts.instances,
        base_seed: opts.base_seed,
        tolerance: 1e-10,
        exec: opts.exec,
    };
    for component in [Component::Attention, Component::Mlp] {
        let name = match component {
            Component::Attention => "attention",
            Component::Mlp => "mlp",
        };
        let rep = tied_equivalence_check(component, &sweep, false)?;
        out.push(Verdict::new(format!("tied-equivalence-{name}"), rep.passed, &rep));
        let control = SweepOptions {
            tolerance: 1e-6,
            ..sweep.clone()
        };
        let rep = tied_equivalence_check(component, &control, true)?;
        out.push(Verdict::new(format!("untied-control-{name}"), rep.passed, &rep));
    }

    for kind in [EnergyKind::Interaction, EnergyKind::Elementwise] {
        let traces = par::map_range(opts.exec, opts.instances, |i| {
            let case = DescentCase::random(opts.base_seed + i as u64, 6, 2, 12, 5, 8);
            Ok::<_, VerifyError>((descent_trace(&case, kind, false)?, descent_trace(&case, kind, true)?))
        });
        let traces = traces.into_iter().collect::<Result<Vec<_>, _>>()?;
        let descending = traces.iter().all(|(t, _)| t.verdict != DescentVerdict::NoDescent);
        let mutants_caught = traces.iter().all(|(_, m)| m.verdict == DescentVerdict::NoDescent);
        let smallest = traces.iter().map(|(t, _)| t.step_size).fold(f64::INFINITY, f64::min);
        let name = match kind {
            EnergyKind::Interaction => "interaction",
            EnergyKind::Elementwise => "elementwise",
        };
        out.push(Verdict::new(
            format!("monotone-descent-{name}"),
            descending,
            serde_json::json!({ "instances": opts.instances, "smallest_step": smallest }),
        ));
        out.push(Verdict::new(
            format!("sign-flip-mutant-{name}"),
            mutants_caught,
            serde_json::json!({ "instances": opts.instances }),
        ));
    }

    for (name, block) in causality_variants() {
        for steps in [1, 2, 4] {
            let rep = causality_check(name, &block, steps, opts.instances.min(50), opts.base_seed, opts.exec)?;
            out.push(Verdict::new(format!("causality-{name}-T{steps}"), rep.passed, &rep));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
