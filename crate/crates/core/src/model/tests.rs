use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::config::{BlockConfig, DiagonalMode, PreconditionerMode};

fn lm(block: BlockConfig, layers: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: 17,
        layers,
        block,
        task: TaskHead::LmLogits,
    }
}

#[test]
fn equal_seeds_give_identical_parameters() {
    let cfg = ModelConfig::default();
    assert_eq!(Model::build(&cfg, 5).unwrap().store, Model::build(&cfg, 5).unwrap().store);
    assert_ne!(Model::build(&cfg, 5).unwrap().store, Model::build(&cfg, 6).unwrap().store);
}

#[test]
fn zero_layers_is_a_config_error() {
    let cfg = ModelConfig {
        layers: 0,
        ..ModelConfig::default()
    };
    assert!(matches!(Model::build(&cfg, 0), Err(ModelError::Config(_))));
}

fn random_block(r: &mut ChaCha8Rng) -> BlockConfig {
    let heads = [1, 2, 4][r.gen_range(0..3)];
    let d = heads * r.gen_range(1..4);
    let pick_p = |x: usize| [PreconditionerMode::Identity, PreconditionerMode::Diagonal, PreconditionerMode::DiagLowRank][x];
    BlockConfig {
        d_model: d,
        heads,
        head_dim: r.gen_range(1..5),
        d_ff: r.gen_range(1..9),
        attention: [AttentionKind::None, AttentionKind::Reference, AttentionKind::Cem][r.gen_range(0..3)],
        mlp: [MlpKind::ReferenceGated, MlpKind::ReferencePlain, MlpKind::Cem][r.gen_range(0..3)],
        diagonal: [DiagonalMode::None, DiagonalMode::Shared, DiagonalMode::PerHead][r.gen_range(0..3)],
        attn_preconditioner: pick_p(r.gen_range(0..3)),
        mlp_preconditioner: pick_p(r.gen_range(0..3)),
        attn_precond_rank: r.gen_range(1..4),
        mlp_precond_rank: r.gen_range(1..4),
        alibi: r.gen(),
        inner_norm: r.gen(),
        block_norm: r.gen(),
        learnable_step_size: r.gen(),
        layer_reuse: r.gen_range(1..3),
        ..BlockConfig::default()
    }
}

#[test]
fn analytic_counts_match_stored_tensors() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let block = random_block(&mut r);
        let task = if block.attention == AttentionKind::None && r.gen() {
            TaskHead::RegressionScalar { input_dim: 3 }
        } else {
            TaskHead::LmLogits
        };
        let cfg = ModelConfig {
            vocab_size: 11,
            layers: r.gen_range(1..4),
            block,
            task,
        };
        let model = Model::build(&cfg, 0).unwrap();
        assert_eq!(count_parameters(&cfg), model.parameter_counts(), "{cfg:?}");
        assert_eq!(model.parameter_counts().total, model.store.num_elements());
    }
}

#[test]
fn core_ratios_are_exact() {
    for (heads, d, dm) in [(1, 8, 16), (2, 16, 40), (4, 64, 172)] {
        let block = BlockConfig {
            d_model: d,
            heads,
            head_dim: d / heads,
            d_ff: dm,
            ..BlockConfig::default()
        };
        let reference = count_parameters(&lm(
            BlockConfig {
                attention: AttentionKind::Reference,
                mlp: MlpKind::ReferenceGated,
                ..block.clone()
            },
            2,
        ));
        let cem = count_parameters(&lm(block, 2));
        assert_eq!(reference.group(ParamGroup::Attention), 2 * cem.group(ParamGroup::Attention));
        assert_eq!(reference.group(ParamGroup::Attention), 2 * 4 * d * d);
        assert_eq!(2 * reference.group(ParamGroup::Mlp), 3 * cem.group(ParamGroup::Mlp));
    }
}

#[test]
fn presets_land_on_their_nominal_sizes() {
    for (name, nominal) in [("86m", 86e6), ("108m", 108e6), ("134m", 134e6), ("162m", 162e6)] {
        let cfg = ModelConfig::preset(name).unwrap();
        cfg.validate().unwrap();
        let total = count_parameters(&cfg).total as f64;
        assert!((total / nominal - 1.0).abs() < 0.01, "{name}: {total}");
    }
    assert!(ModelConfig::preset("1b").is_none());
}

#[test]
fn layer_reuse_changes_flops_not_parameters() {
    let a = ModelConfig::default();
    let mut b = a.clone();
    b.block.layer_reuse = 3;
    assert_eq!(count_parameters(&a), count_parameters(&b));
    assert!(count_flops(&b, 16, 1) > count_flops(&a, 16, 1));
}

#[test]
fn flop_accounting_closed_forms() {
    for (d, m, j) in [(8, 16, 4), (32, 64, 16), (12, 40, 9)] {
        let mut cfg = lm(
            BlockConfig {
                d_model: d,
                d_ff: m,
                ..BlockConfig::default()
            },
            1,
        );
        let t1 = count_flops(&cfg, j, 1);
        cfg.block.mlp_steps = 2;
        let t2 = count_flops(&cfg, j, 1);
        assert_eq!(t2 - t1, (2 * 2 * j * m * d) as u64);
        assert_eq!(count_flops(&cfg, j, 2), 2 * count_flops(&cfg, j, 1));
    }
    let base = ModelConfig::default();
    let mut pre = base.clone();
    pre.block.attn_preconditioner = PreconditionerMode::Identity;
    pre.block.mlp_preconditioner = PreconditionerMode::Identity;
    assert_eq!(count_flops(&base, 8, 1), count_flops(&pre, 8, 1));
}

fn collapse_case(block_norm: bool, inner_norm: bool) -> f64 {
    let cfg = lm(
        BlockConfig {
            d_model: 8,
            heads: 2,
            head_dim: 4,
            d_ff: 12,
            alibi: true,
            block_norm,
            inner_norm,
            ..BlockConfig::default()
        },
        2,
    );
    let cem = Model::build(&cfg, 3).unwrap();
    let reference = cem.tied_reference();
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let len = r.gen_range(1..10);
        let tokens: Vec<usize> = (0..len).map(|_| r.gen_range(0..17)).collect();
        let tape = Tape::new();
        let b = cem.store.bind_frozen(&tape);
        let lhs = cem.logits(&b, &tokens).unwrap().value();
        let rhs = reference.logits(&b, &tokens).unwrap().value();
        worst = worst.max(lhs.max_abs_diff(&rhs).unwrap());
    }
    worst
}

#[test]
fn unit_step_cem_stack_collapses_to_tied_reference() {
    assert!(collapse_case(false, false) < 1e-8);
    assert!(collapse_case(true, true) < 1e-8);
    assert!(collapse_case(true, false) > 1e-6);
}

#[test]
fn checkpoint_round_trip() {
    let cfg = ModelConfig {
        block: BlockConfig {
            attn_preconditioner: PreconditionerMode::DiagLowRank,
            alibi: true,
            ..BlockConfig::default()
        },
        ..ModelConfig::default()
    };
    let model = Model::build(&cfg, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    model.save(&path).unwrap();
    assert_eq!(Model::load(&path).unwrap(), model);
}

#[test]
fn regression_loss_is_mean_squared_error() {
    let cfg = ModelConfig {
        block: BlockConfig {
            attention: AttentionKind::None,
            ..BlockConfig::default()
        },
        task: TaskHead::RegressionScalar { input_dim: 3 },
        ..ModelConfig::default()
    };
    let model = Model::build(&cfg, 1).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::randn(&[5, 3], 1.0, &mut r);
    let y = Tensor::randn(&[5, 1], 1.0, &mut r);
    let tape = Tape::new();
    let b = model.store.bind_frozen(&tape);
    let pred = model.predict(&b, tape.constant(x.clone())).unwrap().value();
    let mse = pred.sub(&y).unwrap().data().iter().map(|e| e * e).sum::<f64>() / 5.0;
    let loss = model.loss_value(Example::Points { inputs: &x, targets: &y }).unwrap();
    assert!((loss - mse).abs() < 1e-14);
    assert!(model.loss_value(Example::Tokens(&[1, 2])).is_err());
}

#[test]
fn uniform_logits_give_log_vocab_loss() {
    let mut model = Model::build(&lm(BlockConfig::default(), 1), 0).unwrap();
    let OutputHead::Logits(w) = model.head else { unreachable!() };
    model.store.set(w, Tensor::zeros(&[17, 32])).unwrap();
    let loss = model.loss_value(Example::Tokens(&[1, 5, 3, 3])).unwrap();
    assert!((loss - 17f64.ln()).abs() < 1e-12);
    assert!(model.loss_value(Example::Tokens(&[1, 99])).is_err());
}
