//! Explicit energies whose gradient steps produce attention and gated MLPs.
//!
//! These are evaluated directly from their definitions and share nothing
//! with `layers` beyond the tensor primitives, so the layers can be checked
//! against them.
//!
//! * Interaction energy, for a query `x` at position `i` over history
//!   `h_1..h_i`:
//!   `ε(x) = -τ Σ_k log Σ_{j≤i} exp(β_kjᵀx / τ + b_ijk)` with `β_kj = A_k h_j`.
//! * Element-wise energy: `ξ(x | h) = -(W h)ᵀ φ(V x)` where `φ' = SiLU`.

mod phi;

pub use phi::{dilog, phi, PHI_REFERENCE};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{silu, Tensor, TensorError};

#[derive(Debug, Error, PartialEq)]
pub enum EnergyError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

type Result<T> = std::result::Result<T, EnergyError>;

/// Parameterization of the per-head interaction matrices `A_k`.
#[derive(Clone, Debug, PartialEq)]
pub enum InteractionForm {
    /// Dense `D_h × D_h` matrices. Only used as a test oracle.
    Full { a: Vec<Tensor> },
    /// `A_k = W_kᵠᵀ W_kᴷ` with `D_r × D_h` factors.
    LowRank { w_q: Vec<Tensor>, w_k: Vec<Tensor> },
    /// `A_k = diag(d_k) + W_kᵠᵀ W_kᴷ`.
    DiagLowRank {
        diag: Vec<Tensor>,
        w_q: Vec<Tensor>,
        w_k: Vec<Tensor>,
    },
}

/// Head-specific positional bias `b_ijk = -m_k |i-j| + b_self [i=j] + b_cross [i≠j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlibiParams {
    pub slopes: Vec<f64>,
    pub b_self: f64,
    pub b_cross: f64,
}

impl AlibiParams {
    /// Geometric slopes `m_k = 2^{-k}` for heads `k = 1..=heads`.
    pub fn geometric(heads: usize) -> Self {
        Self {
            slopes: geometric_slopes(heads),
            b_self: 0.0,
            b_cross: 0.0,
        }
    }

    /// Bias between query position `i` and key position `j` (any common base).
    pub fn bias(&self, head: usize, i: usize, j: usize) -> f64 {
        alibi_bias(self.slopes[head], self.b_self, self.b_cross, i, j)
    }
}

pub fn geometric_slopes(heads: usize) -> Vec<f64> {
    (1..=heads).map(|k| 2f64.powi(-(k as i32))).collect()
}

pub(crate) fn alibi_bias(slope: f64, b_self: f64, b_cross: f64, i: usize, j: usize) -> f64 {
    let dist = i.abs_diff(j) as f64;
    -slope * dist + if i == j { b_self } else { b_cross }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionEnergySpec {
    pub form: InteractionForm,
    pub tau: f64,
    pub alibi: Option<AlibiParams>,
}

impl InteractionEnergySpec {
    pub fn heads(&self) -> usize {
        match &self.form {
            InteractionForm::Full { a } => a.len(),
            InteractionForm::LowRank { w_q, .. } | InteractionForm::DiagLowRank { w_q, .. } => {
                w_q.len()
            }
        }
    }

    fn validate(&self, d_h: usize) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(EnergyError::Domain(format!("temperature must be > 0, got {}", self.tau)));
        }
        let k = self.heads();
        if k == 0 {
            return Err(EnergyError::Domain("no heads".into()));
        }
        let bad = |t: &Tensor, want: &[usize]| {
            Err(EnergyError::Tensor(TensorError::Dimension {
                op: "interaction_energy",
                lhs: t.shape().to_vec(),
                rhs: want.to_vec(),
            }))
        };
        match &self.form {
            InteractionForm::Full { a } => {
                for m in a {
                    if m.shape() != [d_h, d_h] {
                        return bad(m, &[d_h, d_h]);
                    }
                }
            }
            InteractionForm::LowRank { w_q, w_k } | InteractionForm::DiagLowRank { w_q, w_k, .. } => {
                if w_k.len() != k {
                    return Err(EnergyError::Domain("query/key head counts differ".into()));
                }
                let d_r = w_q[0].shape()[0];
                for m in w_q.iter().chain(w_k) {
                    if m.shape() != [d_r, d_h] {
                        return bad(m, &[d_r, d_h]);
                    }
                }
                if let InteractionForm::DiagLowRank { diag, .. } = &self.form {
                    if diag.len() != k {
                        return Err(EnergyError::Domain("one diagonal per head required".into()));
                    }
                    for d in diag {
                        if d.shape() != [d_h] {
                            return bad(d, &[d_h]);
                        }
                    }
                }
            }
        }
        if let Some(al) = &self.alibi {
            if al.slopes.len() != k {
                return Err(EnergyError::Domain("one alibi slope per head required".into()));
            }
            if al.slopes.iter().any(|&m| !(m >= 0.0)) {
                return Err(EnergyError::Domain("alibi slopes must be non-negative".into()));
            }
        }
        Ok(())
    }

    /// `β_kj = A_k h_j`.
    fn beta(&self, head: usize, h: &[f64]) -> Vec<f64> {
        match &self.form {
            InteractionForm::Full { a } => mat_vec(&a[head], h),
            InteractionForm::LowRank { w_q, w_k } => mat_t_vec(&w_q[head], &mat_vec(&w_k[head], h)),
            InteractionForm::DiagLowRank { diag, w_q, w_k } => {
                let mut b = mat_t_vec(&w_q[head], &mat_vec(&w_k[head], h));
                for ((bi, di), hi) in b.iter_mut().zip(diag[head].data()).zip(h) {
                    *bi += di * hi;
                }
                b
            }
        }
    }
}

fn mat_vec(m: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..m.shape()[0]).map(|r| dot(m.row(r), x)).collect()
}

fn mat_t_vec(m: &Tensor, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for (r, &yr) in y.iter().enumerate() {
        for (o, &w) in out.iter_mut().zip(m.row(r)) {
            *o += w * yr;
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-head `(β_kj, logit_kj)` for `j = 1..=i`.
fn head_terms(
    x: &[f64],
    history: &Tensor,
    query_index: usize,
    spec: &InteractionEnergySpec,
) -> Result<Vec<(Vec<Vec<f64>>, Vec<f64>)>> {
    if query_index == 0 {
        return Err(EnergyError::Domain("empty history (query index 0)".into()));
    }
    if history.rank() != 2 || query_index > history.shape()[0] {
        return Err(EnergyError::Domain(format!(
            "query index {query_index} outside history of shape {:?}",
            history.shape()
        )));
    }
    let d_h = history.shape()[1];
    if x.len() != d_h {
        return Err(TensorError::Dimension {
            op: "interaction_energy",
            lhs: vec![x.len()],
            rhs: history.shape().to_vec(),
        }
        .into());
    }
    spec.validate(d_h)?;
    let i = query_index - 1;
    Ok((0..spec.heads())
        .map(|k| {
            let betas: Vec<Vec<f64>> = (0..=i).map(|j| spec.beta(k, history.row(j))).collect();
            let logits = betas
                .iter()
                .enumerate()
                .map(|(j, b)| {
                    let s = dot(b, x) / spec.tau;
                    match &spec.alibi {
                        Some(al) => s + al.bias(k, i, j),
                        None => s,
                    }
                })
                .collect();
            (betas, logits)
        })
        .collect())
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
}

/// Interaction energy of query `x` at 1-based position `query_index`,
/// attending over rows `1..=query_index` of `history`.
pub fn interaction_energy(
    x: &[f64],
    history: &Tensor,
    query_index: usize,
    spec: &InteractionEnergySpec,
) -> Result<f64> {
    let terms = head_terms(x, history, query_index, spec)?;
    Ok(-spec.tau * terms.iter().map(|(_, s)| log_sum_exp(s)).sum::<f64>())
}

/// `∇ₓε = -Σ_k Σ_j softmax_j(logits_k) β_kj`.
pub fn interaction_energy_grad(
    x: &[f64],
    history: &Tensor,
    query_index: usize,
    spec: &InteractionEnergySpec,
) -> Result<Vec<f64>> {
    let terms = head_terms(x, history, query_index, spec)?;
    let mut grad = vec![0.0; x.len()];
    for (betas, logits) in &terms {
        let lse = log_sum_exp(logits);
        for (b, s) in betas.iter().zip(logits) {
            let w = (s - lse).exp();
            for (g, bi) in grad.iter_mut().zip(b) {
                *g -= w * bi;
            }
        }
    }
    Ok(grad)
}

/// `W, V ∈ R^{D_v × D_h}`; the potential is the SiLU antiderivative.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementwiseEnergySpec {
    pub w: Tensor,
    pub v: Tensor,
}

impl ElementwiseEnergySpec {
    fn check(&self, x: &[f64], h: &[f64]) -> Result<()> {
        let ws = self.w.shape();
        if self.w.rank() != 2 || ws != self.v.shape() {
            return Err(TensorError::Dimension {
                op: "elementwise_energy",
                lhs: ws.to_vec(),
                rhs: self.v.shape().to_vec(),
            }
            .into());
        }
        if x.len() != ws[1] || h.len() != ws[1] {
            return Err(TensorError::Dimension {
                op: "elementwise_energy",
                lhs: vec![x.len(), h.len()],
                rhs: ws.to_vec(),
            }
            .into());
        }
        Ok(())
    }
}

/// `ξ(x | h) = -(W h)ᵀ φ(V x)`.
pub fn elementwise_energy(x: &[f64], h: &[f64], spec: &ElementwiseEnergySpec) -> Result<f64> {
    spec.check(x, h)?;
    let gamma = mat_vec(&spec.w, h);
    let z = mat_vec(&spec.v, x);
    Ok(-gamma.iter().zip(&z).map(|(g, &zi)| g * phi(zi)).sum::<f64>())
}

/// `∇ₓξ = -Vᵀ((W h) ∘ SiLU(V x))`.
pub fn elementwise_energy_grad(x: &[f64], h: &[f64], spec: &ElementwiseEnergySpec) -> Result<Vec<f64>> {
    spec.check(x, h)?;
    let gamma = mat_vec(&spec.w, h);
    let z = mat_vec(&spec.v, x);
    let inner: Vec<f64> = gamma.iter().zip(&z).map(|(g, &zi)| -g * silu(zi)).collect();
    Ok(mat_t_vec(&spec.v, &inner))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn low_rank_identity(d: usize) -> InteractionEnergySpec {
        InteractionEnergySpec {
            form: InteractionForm::Full { a: vec![Tensor::eye(d)] },
            tau: 1.0,
            alibi: None,
        }
    }

    #[test]
    fn single_term_collapses_to_inner_product() {
        let x = [0.3, -1.2, 2.0];
        let h = Tensor::from_rows(&[x.to_vec()]).unwrap();
        let spec = low_rank_identity(3);
        let e = interaction_energy(&x, &h, 1, &spec).unwrap();
        let sq: f64 = x.iter().map(|v| v * v).sum();
        assert!((e + sq).abs() < 1e-14);
        let g = interaction_energy_grad(&x, &h, 1, &spec).unwrap();
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi + xi).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_logits_give_log_count() {
        let d = 4;
        let spec = InteractionEnergySpec {
            form: InteractionForm::Full {
                a: vec![Tensor::zeros(&[d, d]), Tensor::zeros(&[d, d])],
            },
            tau: 0.7,
            alibi: None,
        };
        let h = Tensor::ones(&[5, d]);
        let e = interaction_energy(&[1.0, 2.0, 3.0, 4.0], &h, 5, &spec).unwrap();
        assert!((e - (-0.7 * 2.0 * 5f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn identical_betas_give_minus_their_sum_over_heads() {
        let d = 3;
        let a1 = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 2.0, 0.0], vec![0.0, 0.0, -1.0]]).unwrap();
        let a2 = Tensor::eye(d);
        let spec = InteractionEnergySpec {
            form: InteractionForm::Full { a: vec![a1.clone(), a2] },
            tau: 2.0,
            alibi: None,
        };
        let h = Tensor::from_rows(&vec![vec![0.5, 1.0, -1.0]; 4]).unwrap();
        let x = [0.1, 0.2, 0.3];
        let g = interaction_energy_grad(&x, &h, 4, &spec).unwrap();
        let b1 = mat_vec(&a1, h.row(0));
        let b2 = h.row(0).to_vec();
        for c in 0..d {
            assert!((g[c] + b1[c] + b2[c]).abs() < 1e-14);
        }
    }

    #[test]
    fn empty_history_and_bad_temperature_are_domain_errors() {
        let h = Tensor::ones(&[2, 3]);
        let spec = low_rank_identity(3);
        assert!(matches!(
            interaction_energy(&[0.0; 3], &h, 0, &spec),
            Err(EnergyError::Domain(_))
        ));
        let mut hot = spec.clone();
        hot.tau = 0.0;
        assert!(matches!(
            interaction_energy(&[0.0; 3], &h, 1, &hot),
            Err(EnergyError::Domain(_))
        ));
    }

    #[test]
    fn zero_gate_gives_zero_energy_and_gradient() {
        let spec = ElementwiseEnergySpec {
            w: Tensor::zeros(&[5, 3]),
            v: Tensor::ones(&[5, 3]),
        };
        let x = [1.0, -2.0, 0.5];
        assert_eq!(elementwise_energy(&x, &[1.0, 1.0, 1.0], &spec).unwrap(), 0.0);
        assert!(elementwise_energy_grad(&x, &[1.0, 1.0, 1.0], &spec)
            .unwrap()
            .iter()
            .all(|&g| g == 0.0));
    }

    #[test]
    fn zero_v_gives_constant_energy() {
        let w = Tensor::from_rows(&[vec![1.0, 2.0], vec![-0.5, 0.25], vec![3.0, 0.0]]).unwrap();
        let spec = ElementwiseEnergySpec {
            w: w.clone(),
            v: Tensor::zeros(&[3, 2]),
        };
        let h = [0.7, -0.3];
        let gamma_sum: f64 = mat_vec(&w, &h).iter().sum();
        for x in [[0.0, 0.0], [5.0, -9.0]] {
            let e = elementwise_energy(&x, &h, &spec).unwrap();
            assert!((e + phi(0.0) * gamma_sum).abs() < 1e-14);
        }
    }

    #[test]
    fn identity_projections_give_silu_times_x() {
        let d = 4;
        let spec = ElementwiseEnergySpec {
            w: Tensor::eye(d),
            v: Tensor::eye(d),
        };
        let x = [1.0, -0.5, 2.0, 0.0];
        let g = elementwise_energy_grad(&x, &x, &spec).unwrap();
        for (gi, &xi) in g.iter().zip(&x) {
            assert!((gi + silu(xi) * xi).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let spec = ElementwiseEnergySpec {
            w: Tensor::zeros(&[2, 3]),
            v: Tensor::zeros(&[3, 3]),
        };
        assert!(matches!(
            elementwise_energy(&[0.0; 3], &[0.0; 3], &spec),
            Err(EnergyError::Tensor(_))
        ));
    }
}
