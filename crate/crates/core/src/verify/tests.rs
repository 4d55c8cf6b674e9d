use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::config::{ModelConfig, PreconditionerMode};
use crate::model::{Example, Model};

#[test]
fn finite_differences_of_a_cubic() {
    let x = Tensor::vector(vec![0.5, -1.5, 2.0]);
    let g = finite_diff_grad(|p| p.data().iter().map(|v| v * v * v).sum(), &x, 1e-5).unwrap();
    for (gi, xi) in g.data().iter().zip(x.data()) {
        assert!((gi - 3.0 * xi * xi).abs() < 1e-9);
    }
    assert!(finite_diff_grad(|_| f64::NAN, &x, 1e-5).is_err());
}

#[test]
fn relative_error_floor() {
    assert_eq!(relative_error(0.0, 0.0), 0.0);
    assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
}

#[test]
fn energy_gradients_match_differences() {
    for seed in 0..20 {
        let e = energy_gradient_error(seed).unwrap();
        assert!(e < ENERGY_GRAD_TOLERANCE, "seed {seed}: {e}");
    }
}

#[test]
fn unit_step_is_negative_energy_gradient() {
    for seed in 0..20 {
        let e = energy_consistency_error(seed).unwrap();
        assert!(e < CONSISTENCY_TOLERANCE, "seed {seed}: {e}");
    }
}

#[test]
fn tied_layers_match_reference_and_control_does_not() {
    let opts = SweepOptions {
        configs: 10,
        exec: Exec::Sequential,
        ..SweepOptions::default()
    };
    for c in [Component::Attention, Component::Mlp] {
        let tied = tied_equivalence_check(c, &opts, false).unwrap();
        assert!(tied.passed, "{tied:?}");
        let control = SweepOptions {
            tolerance: 1e-6,
            ..opts.clone()
        };
        let untied = tied_equivalence_check(c, &control, true).unwrap();
        assert!(untied.passed, "{untied:?}");
    }
}

#[test]
fn descent_and_mutant() {
    for seed in 0..5 {
        let case = DescentCase::random(seed, 6, 2, 12, 5, 8);
        for kind in [EnergyKind::Interaction, EnergyKind::Elementwise] {
            let t = descent_trace(&case, kind, false).unwrap();
            assert_eq!(t.verdict, DescentVerdict::Decreasing, "{t:?}");
            assert_eq!(t.energies.len(), 9);
            let m = descent_trace(&case, kind, true).unwrap();
            assert_eq!(m.verdict, DescentVerdict::NoDescent);
        }
    }
}

#[test]
fn zero_context_is_stationary_for_mlp_energy() {
    let mut case = DescentCase::random(3, 4, 2, 8, 3, 4);
    case.context = Tensor::zeros(case.context.shape());
    let t = descent_trace(&case, EnergyKind::Elementwise, false).unwrap();
    assert_eq!(t.verdict, DescentVerdict::Stationary);
}

#[test]
fn every_variant_is_causal() {
    for (name, block) in causality_variants() {
        for steps in [1, 2] {
            let leak = causality_leak(&block, steps, 7).unwrap();
            assert!(leak <= CAUSALITY_TOLERANCE, "{name} T={steps}: {leak}");
        }
    }
}

#[test]
fn model_gradient_check_on_small_stack() {
    let mut cfg = ModelConfig {
        vocab_size: 9,
        ..ModelConfig::default()
    };
    cfg.block.d_model = 6;
    cfg.block.heads = 2;
    cfg.block.head_dim = 3;
    cfg.block.d_ff = 8;
    cfg.block.attn_steps = 2;
    cfg.block.attn_preconditioner = PreconditionerMode::DiagLowRank;
    cfg.block.attn_precond_rank = 2;
    let model = Model::build(&cfg, 5).unwrap();
    let tokens = [1, 4, 2, 8, 0];
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let rep = check_model_gradient(&model, Example::Tokens(&tokens), 1e-5, 6, &mut r).unwrap();
    assert!(rep.max_norm_rel_error() < 1e-5, "{:?}", rep.worst);
    assert!(rep.directional_rel_error.unwrap() < 1e-6);
}
