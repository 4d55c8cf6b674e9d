//! Untied reference layers.

use rand::Rng;

use crate::config::BlockConfig;
use crate::tensor::{sigmoid, Mask, Tensor, Var};

use super::alibi::AlibiIds;
use super::params::{projection_std, Bound, ParamGroup, ParamId, ParamStore};
use super::LayerError;

/// One head; all four matrices are `D_r×D_h`.
#[derive(Clone, Debug, PartialEq)]
pub struct MhaHead {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_o: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceMhaParams {
    pub heads: Vec<MhaHead>,
    pub alibi: Option<AlibiIds>,
    pub tau: f64,
}

impl ReferenceMhaParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: &BlockConfig, rng: &mut R) -> Self {
        let shape = [cfg.head_dim, cfg.d_model];
        let std = projection_std(cfg.init_std, cfg.d_model);
        let heads = (0..cfg.heads)
            .map(|k| {
                let mut w = |n: &str| store.add_randn(format!("{prefix}.h{k}.{n}"), &shape, std, ParamGroup::Attention, rng);
                MhaHead {
                    w_q: w("w_q"),
                    w_k: w("w_k"),
                    w_v: w("w_v"),
                    w_o: w("w_o"),
                }
            })
            .collect();
        Self {
            heads,
            alibi: cfg.alibi.then(|| AlibiIds::init(store, &format!("{prefix}.alibi"), cfg.heads)),
            tau: cfg.tau(),
        }
    }
}

/// Causal multi-head attention as a sum of per-head output blocks,
/// without the residual.
pub fn reference_mha<'t>(b: &Bound<'t>, p: &ReferenceMhaParams, h: Var<'t>) -> Result<Var<'t>, LayerError> {
    let len = h.shape()[0];
    let mut out: Option<Var<'t>> = None;
    for (k, head) in p.heads.iter().enumerate() {
        let q = h.matmul_nt(b.var(head.w_q))?;
        let key = h.matmul_nt(b.var(head.w_k))?;
        let val = h.matmul_nt(b.var(head.w_v))?;
        let mut s = q.matmul_nt(key)?.scale(1.0 / p.tau);
        if let Some(alibi) = &p.alibi {
            s = s.add(alibi.bias(b, k, len)?)?;
        }
        let a = s.softmax_lastdim(Some(&Mask::Causal))?;
        let o = a.matmul(val)?.matmul(b.var(head.w_o))?;
        out = Some(match out {
            None => o,
            Some(acc) => acc.add(o)?,
        });
    }
    Ok(out.expect("at least one head"))
}

/// Concat-then-project form on plain tensors: all heads' queries, keys and
/// values from stacked projections, outputs concatenated and mapped through
/// the stacked output matrix.
pub fn reference_mha_concat(store: &ParamStore, p: &ReferenceMhaParams, h: &Tensor) -> Result<Tensor, LayerError> {
    let stack = |pick: fn(&MhaHead) -> ParamId| {
        Tensor::vstack(&p.heads.iter().map(|hd| store.get(pick(hd)).clone()).collect::<Vec<_>>())
    };
    let wq = stack(|hd| hd.w_q)?;
    let wk = stack(|hd| hd.w_k)?;
    let wv = stack(|hd| hd.w_v)?;
    let wo = stack(|hd| hd.w_o)?;
    let (q, k, v) = (h.matmul_nt(&wq)?, h.matmul_nt(&wk)?, h.matmul_nt(&wv)?);
    let len = h.shape()[0];
    let dr = store.get(p.heads[0].w_q).shape()[0];
    let width = dr * p.heads.len();
    let mut concat = vec![0.0; len * width];
    for head in 0..p.heads.len() {
        let (m, bs, bc) = match &p.alibi {
            Some(a) => (a.slopes[head], store.get(a.b_self).item(), store.get(a.b_cross).item()),
            None => (0.0, 0.0, 0.0),
        };
        let cols = head * dr..(head + 1) * dr;
        for i in 0..len {
            let qi = &q.row(i)[cols.clone()];
            let mut w: Vec<f64> = (0..=i)
                .map(|j| {
                    let kj = &k.row(j)[cols.clone()];
                    let dot: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum();
                    let off = if i == j { bs } else { bc };
                    dot / p.tau - m * (i - j) as f64 + off
                })
                .collect();
            let top = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            w.iter_mut().for_each(|x| *x = (*x - top).exp());
            let z: f64 = w.iter().sum();
            for (j, wj) in w.iter().enumerate() {
                let vj = &v.row(j)[cols.clone()];
                for (c, vc) in vj.iter().enumerate() {
                    concat[i * width + head * dr + c] += wj / z * vc;
                }
            }
        }
    }
    Ok(Tensor::new(vec![len, width], concat)?.matmul(&wo)?)
}

/// `(W_g h ∘ SiLU(W_u h))` mapped down; the down matrix is stored transposed
/// (`D_m×D_h`) so it can share storage with the up matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GatedMlpParams {
    pub w_gate: ParamId,
    pub w_up: ParamId,
    pub w_down_t: ParamId,
}

impl GatedMlpParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: &BlockConfig, rng: &mut R) -> Self {
        let shape = [cfg.d_ff, cfg.d_model];
        let std_in = projection_std(cfg.init_std, cfg.d_model);
        let std_out = projection_std(cfg.init_std, cfg.d_ff);
        Self {
            w_gate: store.add_randn(format!("{prefix}.w_gate"), &shape, std_in, ParamGroup::Mlp, rng),
            w_up: store.add_randn(format!("{prefix}.w_up"), &shape, std_in, ParamGroup::Mlp, rng),
            w_down_t: store.add_randn(format!("{prefix}.w_down_t"), &shape, std_out, ParamGroup::Mlp, rng),
        }
    }
}

pub fn reference_gated_mlp<'t>(b: &Bound<'t>, p: &GatedMlpParams, h: Var<'t>) -> Result<Var<'t>, LayerError> {
    let gate = h.matmul_nt(b.var(p.w_gate))?;
    let up = h.matmul_nt(b.var(p.w_up))?.silu();
    Ok(gate.mul(up)?.matmul(b.var(p.w_down_t))?)
}

/// Scalar-loop gated MLP on one vector, for checking the tape version.
pub fn gated_mlp_naive(h: &[f64], w_gate: &Tensor, w_up: &Tensor, w_down_t: &Tensor) -> Vec<f64> {
    let (dm, dh) = (w_gate.shape()[0], w_gate.shape()[1]);
    let mut out = vec![0.0; dh];
    for m in 0..dm {
        let mut g = 0.0;
        let mut u = 0.0;
        for c in 0..dh {
            g += w_gate.at(m, c) * h[c];
            u += w_up.at(m, c) * h[c];
        }
        let act = g * u * sigmoid(u);
        for c in 0..dh {
            out[c] += w_down_t.at(m, c) * act;
        }
    }
    out
}

/// Ungated `W_out SiLU(W_in h)`, with `W_out` stored transposed.
#[derive(Clone, Debug, PartialEq)]
pub struct PlainMlpParams {
    pub w_in: ParamId,
    pub w_out_t: ParamId,
}

impl PlainMlpParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: &BlockConfig, rng: &mut R) -> Self {
        let shape = [cfg.d_ff, cfg.d_model];
        Self {
            w_in: store.add_randn(format!("{prefix}.w_in"), &shape, projection_std(cfg.init_std, cfg.d_model), ParamGroup::Mlp, rng),
            w_out_t: store.add_randn(format!("{prefix}.w_out_t"), &shape, projection_std(cfg.init_std, cfg.d_ff), ParamGroup::Mlp, rng),
        }
    }
}

pub fn reference_plain_mlp<'t>(b: &Bound<'t>, p: &PlainMlpParams, h: Var<'t>) -> Result<Var<'t>, LayerError> {
    Ok(h.matmul_nt(b.var(p.w_in))?.silu().matmul(b.var(p.w_out_t))?)
}
