use crate::energy::{geometric_slopes, AlibiParams};
use crate::tensor::{Tensor, Var};

use super::params::{Bound, ParamGroup, ParamId, ParamStore};
use super::LayerError;

/// Fixed per-head slopes plus the two learnable offsets shared by all heads.
#[derive(Clone, Debug, PartialEq)]
pub struct AlibiIds {
    pub slopes: Vec<f64>,
    pub b_self: ParamId,
    pub b_cross: ParamId,
}

impl AlibiIds {
    pub fn init(store: &mut ParamStore, prefix: &str, heads: usize) -> Self {
        Self {
            slopes: geometric_slopes(heads),
            b_self: store.add(format!("{prefix}.b_self"), Tensor::scalar(0.0), ParamGroup::Alibi, false),
            b_cross: store.add(format!("{prefix}.b_cross"), Tensor::scalar(0.0), ParamGroup::Alibi, false),
        }
    }

    /// `J×J` logit offsets for one head.
    pub fn bias<'t>(&self, b: &Bound<'t>, head: usize, len: usize) -> Result<Var<'t>, LayerError> {
        let tape = b.var(self.b_self).tape();
        let m = self.slopes[head];
        let mut dist = vec![0.0; len * len];
        let mut on = vec![0.0; len * len];
        for i in 0..len {
            for j in 0..len {
                dist[i * len + j] = -m * (i as f64 - j as f64).abs();
            }
            on[i * len + i] = 1.0;
        }
        let off = on.iter().map(|e| 1.0 - e).collect();
        let shape = vec![len, len];
        let dist = tape.constant(Tensor::new(shape.clone(), dist)?);
        let on = tape.constant(Tensor::new(shape.clone(), on)?);
        let off = tape.constant(Tensor::new(shape, off)?);
        let selfb = on.mul(b.var(self.b_self))?;
        let cross = off.mul(b.var(self.b_cross))?;
        Ok(dist.add(selfb)?.add(cross)?)
    }

    /// Current values in the energy module's representation.
    pub fn snapshot(&self, store: &ParamStore) -> AlibiParams {
        AlibiParams {
            slopes: self.slopes.clone(),
            b_self: store.get(self.b_self).item(),
            b_cross: store.get(self.b_cross).item(),
        }
    }
}
