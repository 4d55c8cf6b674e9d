//! Weight-tied layers driven by within-layer gradient steps.

use rand::Rng;

use crate::config::{BlockConfig, DiagonalMode};
use crate::tensor::{dim_err, Mask, Tensor, Var};

use super::alibi::AlibiIds;
use super::norm::{rmsnorm, RmsNormParams};
use super::params::{projection_std, Bound, ParamGroup, ParamId, ParamStore};
use super::precond::PreconditionerParams;
use super::LayerError;

/// Called with `(t, x⁽ᵗ⁾)` for `t = 0..=T`.
pub type Observer<'a> = Option<&'a mut dyn FnMut(usize, &Tensor)>;

#[derive(Clone, Debug, PartialEq)]
pub enum StepSize {
    Fixed(f64),
    Learnable(ParamId),
}

impl StepSize {
    fn init(store: &mut ParamStore, name: String, value: f64, learnable: bool) -> Self {
        if learnable {
            StepSize::Learnable(store.add(name, Tensor::scalar(value), ParamGroup::StepSize, false))
        } else {
            StepSize::Fixed(value)
        }
    }

    fn apply<'t>(&self, b: &Bound<'t>, update: Var<'t>) -> Result<Var<'t>, LayerError> {
        match self {
            StepSize::Fixed(eta) if *eta == 1.0 => Ok(update),
            StepSize::Fixed(eta) => Ok(update.scale(*eta)),
            StepSize::Learnable(id) => Ok(update.mul(b.var(*id))?),
        }
    }

    pub fn value(&self, store: &ParamStore) -> f64 {
        match self {
            StepSize::Fixed(eta) => *eta,
            StepSize::Learnable(id) => store.get(*id).item(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DiagonalIds {
    None,
    Shared(ParamId),
    PerHead(Vec<ParamId>),
}

/// Query and key matrices of one head, both `D_r×D_h`. Keys double as
/// values and queries as outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct TiedHead {
    pub w_q: ParamId,
    pub w_k: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CemAttentionParams {
    pub heads: Vec<TiedHead>,
    pub diagonal: DiagonalIds,
    pub preconditioners: Vec<PreconditionerParams>,
    pub alibi: Option<AlibiIds>,
    pub inner_norm: Option<RmsNormParams>,
    pub tau: f64,
    pub steps: usize,
    pub step_size: StepSize,
}

impl CemAttentionParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: &BlockConfig, rng: &mut R) -> Self {
        let shape = [cfg.head_dim, cfg.d_model];
        let std = projection_std(cfg.init_std, cfg.d_model);
        let heads = (0..cfg.heads)
            .map(|k| TiedHead {
                w_q: store.add_randn(format!("{prefix}.h{k}.w_q"), &shape, std, ParamGroup::Attention, rng),
                w_k: store.add_randn(format!("{prefix}.h{k}.w_k"), &shape, std, ParamGroup::Attention, rng),
            })
            .collect();
        let zeros = || Tensor::zeros(&[cfg.d_model]);
        let diagonal = match cfg.diagonal {
            DiagonalMode::None => DiagonalIds::None,
            DiagonalMode::Shared => {
                DiagonalIds::Shared(store.add(format!("{prefix}.diag"), zeros(), ParamGroup::AttentionDiagonal, true))
            }
            DiagonalMode::PerHead => DiagonalIds::PerHead(
                (0..cfg.heads)
                    .map(|k| store.add(format!("{prefix}.h{k}.diag"), zeros(), ParamGroup::AttentionDiagonal, true))
                    .collect(),
            ),
        };
        let preconditioners = (0..cfg.heads)
            .map(|k| {
                PreconditionerParams::init(
                    store,
                    &format!("{prefix}.h{k}.precond"),
                    cfg.attn_preconditioner,
                    cfg.d_model,
                    cfg.attn_precond_rank,
                    rng,
                )
            })
            .collect();
        Self {
            heads,
            diagonal,
            preconditioners,
            alibi: cfg.alibi.then(|| AlibiIds::init(store, &format!("{prefix}.alibi"), cfg.heads)),
            inner_norm: cfg
                .inner_norm
                .then(|| RmsNormParams::init(store, &format!("{prefix}.inner_norm"), cfg.d_model, cfg.norm_eps)),
            tau: cfg.tau(),
            steps: cfg.attn_steps,
            step_size: StepSize::init(store, format!("{prefix}.step"), cfg.attn_step_size, cfg.learnable_step_size),
        }
    }
}

fn check_rows(op: &'static str, context: &Var<'_>, init: &Var<'_>) -> Result<(), LayerError> {
    let (c, x) = (context.shape(), init.shape());
    if c.len() != 2 || c != x {
        return Err(dim_err(op, &c, &x).into());
    }
    Ok(())
}

fn observe(observer: &mut Observer<'_>, t: usize, x: Var<'_>) {
    if let Some(f) = observer.as_mut() {
        f(t, &x.value_ref());
    }
}

/// Runs `T` ascent-form updates `x ← x + η Σ_k P_k W_qᵀ o_k` for every
/// position at once. `context` supplies keys and values (computed once);
/// `init` is `x⁽⁰⁾`. Returns `x⁽ᵀ⁾`, residual included.
pub fn cem_attention<'t>(
    b: &Bound<'t>,
    p: &CemAttentionParams,
    context: Var<'t>,
    init: Var<'t>,
    mut observer: Observer<'_>,
) -> Result<Var<'t>, LayerError> {
    check_rows("cem_attention", &context, &init)?;
    let len = context.shape()[0];
    let keys = p
        .heads
        .iter()
        .map(|h| context.matmul_nt(b.var(h.w_k)))
        .collect::<Result<Vec<_>, _>>()?;
    let biases = match &p.alibi {
        Some(a) => (0..p.heads.len()).map(|k| a.bias(b, k, len).map(Some)).collect::<Result<Vec<_>, _>>()?,
        None => vec![None; p.heads.len()],
    };
    let inv_tau = 1.0 / p.tau;
    let mut x = init;
    observe(&mut observer, 0, x);
    for t in 0..p.steps {
        let u = rmsnorm(b, p.inner_norm.as_ref(), x)?;
        let shared = match &p.diagonal {
            DiagonalIds::Shared(d) => Some(u.mul(b.var(*d))?.matmul_nt(context)?),
            _ => None,
        };
        let mut update: Option<Var<'t>> = None;
        for (k, head) in p.heads.iter().enumerate() {
            let w_q = b.var(head.w_q);
            let mut s = u.matmul_nt(w_q)?.matmul_nt(keys[k])?;
            match (&p.diagonal, shared) {
                (DiagonalIds::PerHead(ds), _) => s = s.add(u.mul(b.var(ds[k]))?.matmul_nt(context)?)?,
                (_, Some(sd)) => s = s.add(sd)?,
                _ => {}
            }
            s = s.scale(inv_tau);
            if let Some(bias) = biases[k] {
                s = s.add(bias)?;
            }
            let a = s.softmax_lastdim(Some(&Mask::Causal))?;
            let o = a.matmul(keys[k])?.matmul(w_q)?;
            let o = p.preconditioners[k].apply(b, o)?;
            update = Some(match update {
                None => o,
                Some(acc) => acc.add(o)?,
            });
        }
        x = x.add(p.step_size.apply(b, update.expect("at least one head"))?)?;
        observe(&mut observer, t + 1, x);
    }
    Ok(x)
}

/// `W` (gate) and `V` (up, and transposed down), both `D_m×D_h`.
#[derive(Clone, Debug, PartialEq)]
pub struct CemMlpParams {
    pub w: ParamId,
    pub v: ParamId,
    pub preconditioner: PreconditionerParams,
    pub inner_norm: Option<RmsNormParams>,
    pub steps: usize,
    pub step_size: StepSize,
}

impl CemMlpParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: &BlockConfig, rng: &mut R) -> Self {
        let shape = [cfg.d_ff, cfg.d_model];
        let std = projection_std(cfg.init_std, cfg.d_model);
        Self {
            w: store.add_randn(format!("{prefix}.w"), &shape, std, ParamGroup::Mlp, rng),
            v: store.add_randn(format!("{prefix}.v"), &shape, std, ParamGroup::Mlp, rng),
            preconditioner: PreconditionerParams::init(
                store,
                &format!("{prefix}.precond"),
                cfg.mlp_preconditioner,
                cfg.d_model,
                cfg.mlp_precond_rank,
                rng,
            ),
            inner_norm: cfg
                .inner_norm
                .then(|| RmsNormParams::init(store, &format!("{prefix}.inner_norm"), cfg.d_model, cfg.norm_eps)),
            steps: cfg.mlp_steps,
            step_size: StepSize::init(store, format!("{prefix}.step"), cfg.mlp_step_size, cfg.learnable_step_size),
        }
    }
}

/// Runs `T` updates `x ← x + η P Vᵀ(γ ∘ SiLU(V u))` row-wise, with the gate
/// `γ = W·context` computed once.
pub fn cem_mlp<'t>(
    b: &Bound<'t>,
    p: &CemMlpParams,
    context: Var<'t>,
    init: Var<'t>,
    mut observer: Observer<'_>,
) -> Result<Var<'t>, LayerError> {
    check_rows("cem_mlp", &context, &init)?;
    let gamma = context.matmul_nt(b.var(p.w))?;
    let v = b.var(p.v);
    let mut x = init;
    observe(&mut observer, 0, x);
    for t in 0..p.steps {
        let u = rmsnorm(b, p.inner_norm.as_ref(), x)?;
        let g = gamma.mul(u.matmul_nt(v)?.silu())?.matmul(v)?;
        let g = p.preconditioner.apply(b, g)?;
        x = x.add(p.step_size.apply(b, g)?)?;
        observe(&mut observer, t + 1, x);
    }
    Ok(x)
}
