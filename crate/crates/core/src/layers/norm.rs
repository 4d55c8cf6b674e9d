use crate::tensor::{Tensor, Var};

use super::params::{Bound, ParamGroup, ParamId, ParamStore};
use super::LayerError;

#[derive(Clone, Debug, PartialEq)]
pub struct RmsNormParams {
    pub gain: ParamId,
    pub eps: f64,
}

impl RmsNormParams {
    pub fn init(store: &mut ParamStore, name: &str, dim: usize, eps: f64) -> Self {
        assert!(eps > 0.0, "rmsnorm eps must be positive");
        Self {
            gain: store.add(name, Tensor::ones(&[dim]), ParamGroup::Norm, false),
            eps,
        }
    }
}

/// `x / sqrt(mean(x²) + eps) ∘ gain` over the last axis; `None` is the
/// identity.
pub fn rmsnorm<'t>(b: &Bound<'t>, params: Option<&RmsNormParams>, x: Var<'t>) -> Result<Var<'t>, LayerError> {
    let Some(p) = params else { return Ok(x) };
    let inv = x.mul(x)?.mean_lastdim().add_scalar(p.eps).rsqrt();
    Ok(x.mul(inv)?.mul(b.var(p.gain))?)
}

/// Tape-free version of [`rmsnorm`].
pub fn rmsnorm_tensor(x: &Tensor, gain: &Tensor, eps: f64) -> Result<Tensor, LayerError> {
    let d = x.cols();
    if gain.shape() != [d] {
        return Err(crate::tensor::dim_err("rmsnorm", x.shape(), gain.shape()).into());
    }
    let mut out = x.clone();
    let cols = out.cols();
    for row in out.data_mut().chunks_mut(cols) {
        let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
        let inv = 1.0 / (ms + eps).sqrt();
        for (v, g) in row.iter_mut().zip(gain.data()) {
            *v *= inv * g;
        }
    }
    Ok(out)
}
