use rand::Rng;

use crate::config::PreconditionerMode;
use crate::tensor::{softplus, Tensor, Var};

use super::params::{Bound, ParamGroup, ParamId, ParamStore};
use super::LayerError;

/// Std of the low-rank factor `U` at init.
pub const LOW_RANK_INIT_STD: f64 = 0.02;

/// Symmetric `diag(softplus(√D·p)) + U Vᵀ + V Uᵀ`, applied without
/// materializing the matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PreconditionerParams {
    pub mode: PreconditionerMode,
    pub dim: usize,
    pub diag: Option<ParamId>,
    pub u: Option<ParamId>,
    pub v: Option<ParamId>,
}

impl PreconditionerParams {
    pub fn identity(dim: usize) -> Self {
        Self {
            mode: PreconditionerMode::Identity,
            dim,
            diag: None,
            u: None,
            v: None,
        }
    }

    /// `p = 1/√D` so the diagonal starts at `softplus(1)`; `U ~ N(0, 0.02²)`,
    /// `V = 0`.
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        mode: PreconditionerMode,
        dim: usize,
        rank: usize,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::identity(dim);
        p.mode = mode;
        if mode == PreconditionerMode::Identity {
            return p;
        }
        let raw = Tensor::full(&[dim], 1.0 / (dim as f64).sqrt());
        p.diag = Some(store.add(format!("{prefix}.diag"), raw, ParamGroup::Preconditioner, false));
        if mode == PreconditionerMode::DiagLowRank {
            let u = Tensor::randn(&[dim, rank], LOW_RANK_INIT_STD, rng);
            p.u = Some(store.add(format!("{prefix}.u"), u, ParamGroup::Preconditioner, false));
            p.v = Some(store.add(format!("{prefix}.v"), Tensor::zeros(&[dim, rank]), ParamGroup::Preconditioner, false));
        }
        p
    }

    /// Applies `P` to each row of `g` (`P` is symmetric, so row and column
    /// forms agree).
    pub fn apply<'t>(&self, b: &Bound<'t>, g: Var<'t>) -> Result<Var<'t>, LayerError> {
        let Some(diag) = self.diag else { return Ok(g) };
        let scale = (self.dim as f64).sqrt();
        let s = b.var(diag).scale(scale).softplus();
        let mut out = g.mul(s)?;
        if let (Some(u), Some(v)) = (self.u, self.v) {
            let (u, v) = (b.var(u), b.var(v));
            out = out.add(g.matmul(u)?.matmul_nt(v)?)?;
            out = out.add(g.matmul(v)?.matmul_nt(u)?)?;
        }
        Ok(out)
    }

    /// Explicit `D×D` matrix; used as an oracle and for FLOP-free checks.
    pub fn materialize(&self, store: &ParamStore) -> Tensor {
        let d = self.dim;
        let Some(diag) = self.diag else { return Tensor::eye(d) };
        let raw = store.get(diag);
        let scale = (d as f64).sqrt();
        let mut data = vec![0.0; d * d];
        for i in 0..d {
            data[i * d + i] = softplus(scale * raw.data()[i]);
        }
        if let (Some(u), Some(v)) = (self.u, self.v) {
            let (u, v) = (store.get(u), store.get(v));
            let r = u.cols();
            for i in 0..d {
                for j in 0..d {
                    for k in 0..r {
                        data[i * d + j] += u.data()[i * r + k] * v.data()[j * r + k] + v.data()[i * r + k] * u.data()[j * r + k];
                    }
                }
            }
        }
        Tensor::new(vec![d, d], data).expect("square")
    }
}

/// Tape-free `P·g` for a vector or a batch of rows.
pub fn apply_preconditioner(g: &Tensor, params: &PreconditionerParams, store: &ParamStore) -> Result<Tensor, LayerError> {
    if g.cols() != params.dim {
        return Err(crate::tensor::dim_err("apply_preconditioner", g.shape(), &[params.dim]).into());
    }
    let Some(diag) = params.diag else { return Ok(g.clone()) };
    let scale = (params.dim as f64).sqrt();
    let s = store.get(diag).map(|p| softplus(scale * p));
    let mut out = g.mul(&s)?;
    if let (Some(u), Some(v)) = (params.u, params.v) {
        let rows = g.reshape(&[g.rows(), params.dim])?;
        let (u, v) = (store.get(u), store.get(v));
        let low = rows.matmul(u)?.matmul_nt(v)?.add(&rows.matmul(v)?.matmul_nt(u)?)?;
        out = out.add(&low.reshape(g.shape())?)?;
    }
    Ok(out)
}
