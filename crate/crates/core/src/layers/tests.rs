use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::config::{BlockConfig, DiagonalMode, PreconditionerMode};
use crate::tensor::{softplus, Tape, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn equivalence_cfg(heads: usize, d: usize) -> BlockConfig {
    BlockConfig {
        d_model: d,
        heads,
        head_dim: d / heads,
        d_ff: 2 * d,
        inner_norm: false,
        ..BlockConfig::default()
    }
}

#[test]
fn identity_preconditioner_is_bit_exact() {
    let store = ParamStore::new();
    let p = PreconditionerParams::identity(5);
    let g = Tensor::randn(&[3, 5], 1.0, &mut rng(1));
    assert_eq!(apply_preconditioner(&g, &p, &store).unwrap(), g);
}

#[test]
fn fresh_diagonal_preconditioner_scales_by_softplus_one() {
    let mut store = ParamStore::new();
    let p = PreconditionerParams::init(&mut store, "p", PreconditionerMode::DiagLowRank, 9, 2, &mut rng(2));
    store.set(p.u.unwrap(), Tensor::zeros(&[9, 2])).unwrap();
    let g = Tensor::randn(&[9], 1.0, &mut rng(3));
    let out = apply_preconditioner(&g, &p, &store).unwrap();
    for (o, x) in out.data().iter().zip(g.data()) {
        assert!((o - x * softplus(1.0)).abs() < 1e-15);
    }
    assert!((softplus(1.0) - 1.3133).abs() < 1e-4);
}

#[test]
fn preconditioner_matches_materialized_matrix_and_is_symmetric() {
    let mut r = rng(4);
    let mut store = ParamStore::new();
    let p = PreconditionerParams::init(&mut store, "p", PreconditionerMode::DiagLowRank, 12, 3, &mut r);
    for id in [p.diag.unwrap(), p.u.unwrap(), p.v.unwrap()] {
        let shape = store.get(id).shape().to_vec();
        store.set(id, Tensor::randn(&shape, 0.5, &mut r)).unwrap();
    }
    let m = p.materialize(&store);
    assert!(m.max_abs_diff(&m.transpose().unwrap()).unwrap() < 1e-15);
    let g = Tensor::randn(&[4, 12], 1.0, &mut r);
    let fast = apply_preconditioner(&g, &p, &store).unwrap();
    let slow = g.matmul(&m).unwrap();
    assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12);

    let tape = Tape::new();
    let b = store.bind(&tape);
    let on_tape = p.apply(&b, tape.constant(g.clone())).unwrap().value();
    assert!(on_tape.max_abs_diff(&fast).unwrap() < 1e-13);
}

#[test]
fn rmsnorm_examples() {
    let gain = Tensor::ones(&[4]);
    let x = Tensor::vector(vec![1.0, -1.0, 1.0, -1.0]);
    assert!(rmsnorm_tensor(&x, &gain, 1e-12).unwrap().max_abs_diff(&x).unwrap() < 1e-9);
    let y = Tensor::randn(&[3, 4], 1.0, &mut rng(5));
    let a = rmsnorm_tensor(&y, &gain, 1e-30).unwrap();
    let c = rmsnorm_tensor(&y.scale(7.0), &gain, 1e-30).unwrap();
    assert!(a.max_abs_diff(&c).unwrap() < 1e-9);
    let z = rmsnorm_tensor(&Tensor::zeros(&[4]), &gain, 1e-6).unwrap();
    assert_eq!(z.data(), &[0.0; 4]);

    let mut store = ParamStore::new();
    let p = RmsNormParams::init(&mut store, "n", 4, 1e-6);
    let tape = Tape::new();
    let b = store.bind(&tape);
    let on_tape = rmsnorm(&b, Some(&p), tape.constant(y.clone())).unwrap().value();
    assert!(on_tape.max_abs_diff(&rmsnorm_tensor(&y, &gain, 1e-6).unwrap()).unwrap() < 1e-15);
}

#[test]
fn reference_mha_single_token_is_value_then_output_projection() {
    let cfg = equivalence_cfg(2, 8);
    let mut store = ParamStore::new();
    let p = ReferenceMhaParams::init(&mut store, "a", &cfg, &mut rng(6));
    let h = Tensor::randn(&[1, 8], 1.0, &mut rng(7));
    let tape = Tape::new();
    let b = store.bind(&tape);
    let out = reference_mha(&b, &p, tape.constant(h.clone())).unwrap().value();
    let mut expect = Tensor::zeros(&[1, 8]);
    for head in &p.heads {
        let v = h.matmul_nt(store.get(head.w_v)).unwrap();
        expect = expect.add(&v.matmul(store.get(head.w_o)).unwrap()).unwrap();
    }
    assert!(out.max_abs_diff(&expect).unwrap() < 1e-14);
}

#[test]
fn concat_and_sum_forms_agree() {
    let mut r = rng(8);
    for (heads, d, alibi) in [(1, 8, false), (2, 8, true), (4, 16, true)] {
        let cfg = BlockConfig {
            alibi,
            ..equivalence_cfg(heads, d)
        };
        let mut store = ParamStore::new();
        let p = ReferenceMhaParams::init(&mut store, "a", &cfg, &mut r);
        if let Some(a) = &p.alibi {
            store.set(a.b_self, Tensor::scalar(0.3)).unwrap();
            store.set(a.b_cross, Tensor::scalar(-0.2)).unwrap();
        }
        let h = Tensor::randn(&[7, d], 1.0, &mut r);
        let tape = Tape::new();
        let b = store.bind(&tape);
        let sum_form = reference_mha(&b, &p, tape.constant(h.clone())).unwrap().value();
        let concat = reference_mha_concat(&store, &p, &h).unwrap();
        assert!(sum_form.max_abs_diff(&concat).unwrap() < 1e-12);
    }
}

#[test]
fn gated_mlp_examples() {
    let cfg = equivalence_cfg(1, 6);
    let mut store = ParamStore::new();
    let p = GatedMlpParams::init(&mut store, "m", &cfg, &mut rng(9));
    let h = Tensor::randn(&[3, 6], 1.0, &mut rng(10));
    let tape = Tape::new();
    let b = store.bind(&tape);
    let out = reference_gated_mlp(&b, &p, tape.constant(h.clone())).unwrap().value();
    for i in 0..3 {
        let naive = gated_mlp_naive(h.row(i), store.get(p.w_gate), store.get(p.w_up), store.get(p.w_down_t));
        for (a, e) in out.row(i).iter().zip(&naive) {
            assert!((a - e).abs() < 1e-12);
        }
    }
    let zero = reference_gated_mlp(&b, &p, tape.constant(Tensor::zeros(&[1, 6]))).unwrap().value();
    assert_eq!(zero.max_abs(), 0.0);
}

#[test]
fn single_token_cem_attention() {
    let cfg = equivalence_cfg(1, 6);
    let mut store = ParamStore::new();
    let p = CemAttentionParams::init(&mut store, "a", &cfg, &mut rng(11));
    let h = Tensor::randn(&[1, 6], 1.0, &mut rng(12));
    let tape = Tape::new();
    let b = store.bind(&tape);
    let hv = tape.constant(h.clone());
    let out = cem_attention(&b, &p, hv, hv, None).unwrap().value();
    let w_q = store.get(p.heads[0].w_q);
    let w_k = store.get(p.heads[0].w_k);
    let expect = h.add(&h.matmul_nt(w_k).unwrap().matmul(w_q).unwrap()).unwrap();
    assert!(out.max_abs_diff(&expect).unwrap() < 1e-14);
}

#[test]
fn tied_attention_minus_residual_equals_reference() {
    let mut r = rng(13);
    for (heads, d) in [(1, 8), (2, 8), (4, 16)] {
        let cfg = equivalence_cfg(heads, d);
        let mut store = ParamStore::new();
        let cem = CemAttentionParams::init(&mut store, "a", &cfg, &mut r);
        let reference = ReferenceMhaParams::tied_to(&cem);
        let h = Tensor::randn(&[9, d], 1.0, &mut r);
        let tape = Tape::new();
        let b = store.bind(&tape);
        let hv = tape.constant(h.clone());
        let lhs = cem_attention(&b, &cem, hv, hv, None).unwrap().value().sub(&h).unwrap();
        let rhs = reference_mha(&b, &reference, hv).unwrap().value();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
    }
}

#[test]
fn tied_mlp_equals_gated_reference_plus_residual() {
    let cfg = equivalence_cfg(1, 8);
    let mut store = ParamStore::new();
    let cem = CemMlpParams::init(&mut store, "m", &cfg, &mut rng(14));
    let gated = GatedMlpParams::tied_to(&cem);
    let h = Tensor::randn(&[5, 8], 1.0, &mut rng(15));
    let tape = Tape::new();
    let b = store.bind(&tape);
    let hv = tape.constant(h.clone());
    let lhs = cem_mlp(&b, &cem, hv, hv, None).unwrap().value();
    let rhs = reference_gated_mlp(&b, &gated, hv).unwrap().value().add(&h).unwrap();
    assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
}

#[test]
fn zero_gate_is_a_fixed_point_for_any_step_count() {
    let cfg = BlockConfig {
        mlp_steps: 5,
        ..equivalence_cfg(1, 8)
    };
    let mut store = ParamStore::new();
    let cem = CemMlpParams::init(&mut store, "m", &cfg, &mut rng(16));
    store.set(cem.w, Tensor::zeros(&[16, 8])).unwrap();
    let h = Tensor::randn(&[2, 8], 1.0, &mut rng(17));
    let tape = Tape::new();
    let b = store.bind(&tape);
    let hv = tape.constant(h.clone());
    assert_eq!(cem_mlp(&b, &cem, hv, hv, None).unwrap().value(), h);
}

#[test]
fn two_steps_equal_two_unrolled_single_steps() {
    let mut r = rng(18);
    let base = BlockConfig {
        diagonal: DiagonalMode::PerHead,
        attn_preconditioner: PreconditionerMode::DiagLowRank,
        mlp_preconditioner: PreconditionerMode::DiagLowRank,
        attn_precond_rank: 2,
        mlp_precond_rank: 3,
        alibi: true,
        inner_norm: true,
        attn_step_size: 0.7,
        mlp_step_size: 0.6,
        ..equivalence_cfg(2, 8)
    };
    let two = BlockConfig {
        attn_steps: 2,
        mlp_steps: 2,
        ..base.clone()
    };
    let mut store = ParamStore::new();
    let attn2 = CemAttentionParams::init(&mut store, "a", &two, &mut r);
    let mlp2 = CemMlpParams::init(&mut store, "m", &two, &mut r);
    if let DiagonalIds::PerHead(ds) = &attn2.diagonal {
        for &d in ds {
            store.set(d, Tensor::randn(&[8], 0.3, &mut r)).unwrap();
        }
    }
    let attn1 = CemAttentionParams { steps: 1, ..attn2.clone() };
    let mlp1 = CemMlpParams { steps: 1, ..mlp2.clone() };
    let h = Tensor::randn(&[6, 8], 1.0, &mut r);
    let tape = Tape::new();
    let b = store.bind(&tape);
    let hv = tape.constant(h);
    let direct = cem_attention(&b, &attn2, hv, hv, None).unwrap();
    let once = cem_attention(&b, &attn1, hv, hv, None).unwrap();
    let twice = cem_attention(&b, &attn1, hv, once, None).unwrap();
    assert!(direct.value().max_abs_diff(&twice.value()).unwrap() < 1e-13);

    let direct = cem_mlp(&b, &mlp2, hv, hv, None).unwrap();
    let once = cem_mlp(&b, &mlp1, hv, hv, None).unwrap();
    let twice = cem_mlp(&b, &mlp1, hv, once, None).unwrap();
    assert!(direct.value().max_abs_diff(&twice.value()).unwrap() < 1e-13);
}

#[test]
fn observer_sees_every_iterate() {
    let cfg = BlockConfig {
        attn_steps: 3,
        ..equivalence_cfg(2, 8)
    };
    let mut store = ParamStore::new();
    let p = CemAttentionParams::init(&mut store, "a", &cfg, &mut rng(19));
    let h = Tensor::randn(&[4, 8], 1.0, &mut rng(20));
    let tape = Tape::new();
    let b = store.bind(&tape);
    let hv = tape.constant(h.clone());
    let mut seen = Vec::new();
    let mut record = |t: usize, x: &Tensor| seen.push((t, x.clone()));
    let out = cem_attention(&b, &p, hv, hv, Some(&mut record)).unwrap().value();
    assert_eq!(seen.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    assert_eq!(seen[0].1, h);
    assert_eq!(seen[3].1, out);
}

#[test]
fn mismatched_context_is_a_dimension_error() {
    let cfg = equivalence_cfg(1, 4);
    let mut store = ParamStore::new();
    let p = CemMlpParams::init(&mut store, "m", &cfg, &mut rng(21));
    let tape = Tape::new();
    let b = store.bind(&tape);
    let c = tape.constant(Tensor::zeros(&[3, 4]));
    let x = tape.constant(Tensor::zeros(&[2, 4]));
    assert!(matches!(cem_mlp(&b, &p, c, x, None), Err(LayerError::Tensor(_))));
}

#[test]
fn checkpoint_round_trip() {
    let cfg = BlockConfig {
        alibi: true,
        attn_preconditioner: PreconditionerMode::DiagLowRank,
        ..BlockConfig::default()
    };
    let mut store = ParamStore::new();
    CemAttentionParams::init(&mut store, "a", &cfg, &mut rng(22));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("block.bin");
    checkpoint::save_block(&path, &store, &cfg).unwrap();
    assert_eq!(checkpoint::load_block_config(&path).unwrap(), cfg);

    let mut fresh = ParamStore::new();
    CemAttentionParams::init(&mut fresh, "a", &cfg, &mut rng(99));
    assert_ne!(fresh, store);
    fresh.read_values(&mut std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(fresh, store);

    let mut bytes = Vec::new();
    store.write_to(&mut bytes).unwrap();
    bytes[0] = b'X';
    assert!(matches!(checkpoint::read_tensors(&mut bytes.as_slice()), Err(LayerError::Format(_))));
}
