//! Energies evaluated through the public API against closed forms.

use cem::energy::{
    elementwise_energy, elementwise_energy_grad, interaction_energy, interaction_energy_grad, phi, AlibiParams,
    ElementwiseEnergySpec, InteractionEnergySpec, InteractionForm,
};
use cem::tensor::silu;
use cem::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn low_rank(heads: usize, d_r: usize, d_h: usize, seed: u64) -> (Vec<Tensor>, Vec<Tensor>) {
    let mut r = rng(seed);
    let w_q = (0..heads).map(|_| Tensor::randn(&[d_r, d_h], 0.5, &mut r)).collect();
    let w_k = (0..heads).map(|_| Tensor::randn(&[d_r, d_h], 0.5, &mut r)).collect();
    (w_q, w_k)
}

#[test]
fn single_position_energy_is_linear() {
    // One key: the log-sum-exp collapses to its only logit.
    let (w_q, w_k) = low_rank(1, 2, 3, 1);
    let h = Tensor::from_rows(&[vec![0.2, -0.4, 1.0]]).unwrap();
    let x = [0.7, 0.1, -0.3];
    let tau = 1.7;
    let spec = InteractionEnergySpec {
        form: InteractionForm::LowRank {
            w_q: w_q.clone(),
            w_k: w_k.clone(),
        },
        tau,
        alibi: Some(AlibiParams {
            slopes: vec![0.5],
            b_self: 0.25,
            b_cross: -1.0,
        }),
    };
    let beta = w_q[0].transpose().unwrap().matmul(&w_k[0].matmul_nt(&h).unwrap()).unwrap();
    let bx: f64 = beta.data().iter().zip(&x).map(|(b, x)| b * x).sum();
    let e = interaction_energy(&x, &h, 1, &spec).unwrap();
    assert!((e - (-bx - tau * 0.25)).abs() < 1e-12);
    let g = interaction_energy_grad(&x, &h, 1, &spec).unwrap();
    for (gi, bi) in g.iter().zip(beta.data()) {
        assert!((gi + bi).abs() < 1e-12);
    }
}

#[test]
fn uniform_offset_shifts_energy_by_temperature() {
    let (w_q, w_k) = low_rank(2, 2, 4, 2);
    let h = Tensor::randn(&[5, 4], 1.0, &mut rng(3));
    let x = [0.3, -0.2, 0.5, 0.9];
    let make = |c: f64| InteractionEnergySpec {
        form: InteractionForm::LowRank {
            w_q: w_q.clone(),
            w_k: w_k.clone(),
        },
        tau: 2.0,
        alibi: Some(AlibiParams {
            slopes: vec![0.5, 0.25],
            b_self: c,
            b_cross: c,
        }),
    };
    let base = interaction_energy(&x, &h, 5, &make(0.0)).unwrap();
    let shifted = interaction_energy(&x, &h, 5, &make(0.8)).unwrap();
    assert!((shifted - (base - 2.0 * 2.0 * 0.8)).abs() < 1e-12);
    let g0 = interaction_energy_grad(&x, &h, 5, &make(0.0)).unwrap();
    let g1 = interaction_energy_grad(&x, &h, 5, &make(0.8)).unwrap();
    for (a, b) in g0.iter().zip(&g1) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn later_history_rows_are_ignored() {
    let (w_q, w_k) = low_rank(1, 3, 3, 4);
    let spec = InteractionEnergySpec {
        form: InteractionForm::LowRank { w_q, w_k },
        tau: 1.0,
        alibi: None,
    };
    let mut h = Tensor::randn(&[4, 3], 1.0, &mut rng(5));
    let x = [1.0, 0.0, -1.0];
    let before = interaction_energy(&x, &h, 2, &spec).unwrap();
    h.data_mut()[9..].iter_mut().for_each(|v| *v += 10.0);
    assert_eq!(before, interaction_energy(&x, &h, 2, &spec).unwrap());
}

#[test]
fn elementwise_energy_at_origin() {
    let mut r = rng(6);
    let spec = ElementwiseEnergySpec {
        w: Tensor::randn(&[5, 3], 1.0, &mut r),
        v: Tensor::randn(&[5, 3], 1.0, &mut r),
    };
    let h = [0.4, -0.1, 0.8];
    let gamma: Vec<f64> = (0..5).map(|i| spec.w.row(i).iter().zip(&h).map(|(a, b)| a * b).sum()).collect();
    let e = elementwise_energy(&[0.0; 3], &h, &spec).unwrap();
    assert!((e + phi(0.0) * gamma.iter().sum::<f64>()).abs() < 1e-12);
    // SiLU(0) = 0, so the origin is stationary.
    assert!(elementwise_energy_grad(&[0.0; 3], &h, &spec).unwrap().iter().all(|g| *g == 0.0));
    assert!(elementwise_energy(&[0.0; 2], &h, &spec).is_err());
}

proptest! {
    #[test]
    fn full_and_factored_forms_agree(
        heads in 1usize..4, d_r in 1usize..4, d_h in 2usize..6, len in 1usize..6, seed in 0u64..500,
    ) {
        let (w_q, w_k) = low_rank(heads, d_r, d_h, seed);
        let mut r = rng(seed + 1);
        let h = Tensor::randn(&[len, d_h], 1.0, &mut r);
        let x: Vec<f64> = Tensor::randn(&[d_h], 1.0, &mut r).into_data();
        let diag: Vec<Tensor> = (0..heads).map(|_| Tensor::randn(&[d_h], 0.3, &mut r)).collect();
        let dense = |with_diag: bool| -> Vec<Tensor> {
            (0..heads)
                .map(|k| {
                    let mut a = w_q[k].matmul_tn(&w_k[k]).unwrap();
                    if with_diag {
                        for i in 0..d_h {
                            a.data_mut()[i * d_h + i] += diag[k].data()[i];
                        }
                    }
                    a
                })
                .collect()
        };
        let alibi = Some(AlibiParams { slopes: vec![0.3; heads], b_self: 0.2, b_cross: -0.1 });
        let pairs = [
            (InteractionForm::LowRank { w_q: w_q.clone(), w_k: w_k.clone() }, dense(false)),
            (InteractionForm::DiagLowRank { diag: diag.clone(), w_q: w_q.clone(), w_k: w_k.clone() }, dense(true)),
        ];
        for (form, a) in pairs {
            let f = InteractionEnergySpec { form, tau: 1.3, alibi: alibi.clone() };
            let o = InteractionEnergySpec { form: InteractionForm::Full { a }, tau: 1.3, alibi: alibi.clone() };
            let e1 = interaction_energy(&x, &h, len, &f).unwrap();
            let e2 = interaction_energy(&x, &h, len, &o).unwrap();
            prop_assert!((e1 - e2).abs() <= 1e-10 * (1.0 + e1.abs()));
            let g1 = interaction_energy_grad(&x, &h, len, &f).unwrap();
            let g2 = interaction_energy_grad(&x, &h, len, &o).unwrap();
            for (a, b) in g1.iter().zip(&g2) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn potential_derivative_is_silu(z in -20.0f64..20.0) {
        let h = 1e-5;
        let fd = (phi(z + h) - phi(z - h)) / (2.0 * h);
        prop_assert!((fd - silu(z)).abs() < 1e-7 * (1.0 + z.abs()));
    }
}
