use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Example, Model};
use crate::tensor::Tensor;

use super::VerifyError;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-12;

/// `|a - f| / max(|a|, |f|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central differences, one coordinate at a time.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, step: f64) -> Result<Tensor, VerifyError> {
    let mut probe = x.clone();
    let mut out = Tensor::zeros_like(x);
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(VerifyError::Oracle(format!("non-finite evaluation at coordinate {i}")));
        }
        out.data_mut()[i] = (up - down) / (2.0 * step);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorstCoordinate {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheck {
    pub param: String,
    pub checked: usize,
    /// Largest per-coordinate relative error.
    pub max_rel_error: f64,
    /// `max|a - f| / max(max|a|, max|f|, 1e-12)` over the checked coordinates.
    pub norm_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub worst: Option<WorstCoordinate>,
    pub step: f64,
    /// Relative error of the directional derivative along a random direction.
    pub directional_rel_error: Option<f64>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn max_norm_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.norm_rel_error).fold(0.0, f64::max)
    }

    fn push(&mut self, name: &str, pairs: &[(usize, f64, f64)]) {
        let mut check = ParamCheck {
            param: name.into(),
            checked: pairs.len(),
            max_rel_error: 0.0,
            norm_rel_error: 0.0,
        };
        let (mut diff, mut scale) = (0.0f64, 0.0f64);
        for &(index, a, f) in pairs {
            let r = relative_error(a, f);
            diff = diff.max((a - f).abs());
            scale = scale.max(a.abs()).max(f.abs());
            check.max_rel_error = check.max_rel_error.max(r);
            if self.worst.as_ref().map_or(true, |w| r > w.rel_error) {
                self.worst = Some(WorstCoordinate {
                    param: name.into(),
                    index,
                    analytic: a,
                    numeric: f,
                    rel_error: r,
                });
            }
        }
        check.norm_rel_error = diff / scale.max(REL_FLOOR);
        self.params.push(check);
    }
}

/// Compares an analytic gradient of `f` at `x` against central differences.
pub fn check_gradient(
    name: &str,
    f: impl Fn(&Tensor) -> f64,
    x: &Tensor,
    analytic: &Tensor,
    step: f64,
) -> Result<GradCheckReport, VerifyError> {
    let numeric = finite_diff_grad(f, x, step)?;
    let pairs: Vec<_> = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .enumerate()
        .map(|(i, (&a, &n))| (i, a, n))
        .collect();
    let mut r = GradCheckReport {
        params: Vec::new(),
        worst: None,
        step,
        directional_rel_error: None,
    };
    r.push(name, &pairs);
    Ok(r)
}

/// Backward pass of a model loss against central differences on up to
/// `max_coords` coordinates per tensor, plus one random directional
/// derivative through all parameters at once.
pub fn check_model_gradient<R: Rng + ?Sized>(
    model: &Model,
    example: Example<'_>,
    step: f64,
    max_coords: usize,
    rng: &mut R,
) -> Result<GradCheckReport, VerifyError> {
    let (_, grads) = model.loss_and_grad(example)?;
    let mut probe = model.clone();
    let eval = |m: &Model| -> Result<f64, VerifyError> {
        let v = m.loss_value(example)?;
        if !v.is_finite() {
            return Err(VerifyError::Oracle("non-finite loss".into()));
        }
        Ok(v)
    };
    let mut report = GradCheckReport {
        params: Vec::new(),
        worst: None,
        step,
        directional_rel_error: None,
    };
    let ids: Vec<_> = model.store.ids().collect();
    for (k, &id) in ids.iter().enumerate() {
        let n = model.store.get(id).numel();
        let coords: Vec<usize> = if n <= max_coords {
            (0..n).collect()
        } else {
            let mut c = sample(rng, n, max_coords).into_vec();
            c.sort_unstable();
            c
        };
        let mut pairs = Vec::with_capacity(coords.len());
        for &i in &coords {
            let orig = probe.store.get(id).data()[i];
            probe.store.get_mut(id).data_mut()[i] = orig + step;
            let up = eval(&probe)?;
            probe.store.get_mut(id).data_mut()[i] = orig - step;
            let down = eval(&probe)?;
            probe.store.get_mut(id).data_mut()[i] = orig;
            pairs.push((i, grads[k].data()[i], (up - down) / (2.0 * step)));
        }
        report.push(&model.store.entries()[k].name, &pairs);
    }

    let dirs: Vec<Tensor> = ids
        .iter()
        .map(|&id| Tensor::randn(model.store.get(id).shape(), 1.0, rng))
        .collect();
    let analytic: f64 = grads.iter().zip(&dirs).map(|(g, d)| g.dot(d).expect("aligned")).sum();
    let shifted = |sign: f64| -> Result<f64, VerifyError> {
        let mut m = model.clone();
        for (&id, d) in ids.iter().zip(&dirs) {
            m.store.get_mut(id).axpy(sign * step, d)?;
        }
        eval(&m)
    };
    let numeric = (shifted(1.0)? - shifted(-1.0)?) / (2.0 * step);
    report.directional_rel_error = Some(relative_error(analytic, numeric));
    Ok(report)
}
