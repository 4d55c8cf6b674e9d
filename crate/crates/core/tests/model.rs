//! Whole-model behavior through the public API.

use cem::config::{BlockConfig, ModelConfig};
use cem::model::{count_parameters, Example, Model};
use cem::tensor::Tape;

fn small(inner_norm: bool, block_norm: bool) -> ModelConfig {
    ModelConfig {
        vocab_size: 13,
        layers: 2,
        block: BlockConfig {
            d_model: 8,
            heads: 2,
            head_dim: 4,
            d_ff: 12,
            inner_norm,
            block_norm,
            ..BlockConfig::default()
        },
        ..ModelConfig::default()
    }
}

fn logits(model: &Model, tokens: &[usize]) -> cem::Tensor {
    let tape = Tape::new();
    let b = model.store.bind_frozen(&tape);
    model.logits(&b, tokens).unwrap().value()
}

#[test]
fn one_step_stack_matches_tied_reference() {
    let tokens = [3, 1, 4, 1, 5, 9, 2, 6];
    for (inner, block) in [(false, false), (true, true)] {
        let model = Model::build(&small(inner, block), 7).unwrap();
        let reference = model.tied_reference();
        let d = logits(&model, &tokens).max_abs_diff(&logits(&reference, &tokens)).unwrap();
        assert!(d < 1e-10, "inner {inner} block {block}: {d:e}");
    }
}

#[test]
fn block_norm_without_inner_norm_breaks_the_tie() {
    let tokens = [3, 1, 4, 1, 5, 9, 2, 6];
    let model = Model::build(&small(false, true), 7).unwrap();
    let d = logits(&model, &tokens).max_abs_diff(&logits(&model.tied_reference(), &tokens)).unwrap();
    assert!(d > 1e-6);
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let model = Model::build(&small(true, true), 2).unwrap();
    model.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    assert_eq!(back.config, model.config);
    let tokens = [0, 12, 5, 5];
    assert_eq!(logits(&model, &tokens), logits(&back, &tokens));
    assert_eq!(
        model.loss_value(Example::Tokens(&tokens)).unwrap(),
        back.loss_value(Example::Tokens(&tokens)).unwrap()
    );
}

#[test]
fn recursion_depth_leaves_parameter_count_unchanged() {
    let base = small(true, true);
    let mut deep = base.clone();
    deep.block.attn_steps = 4;
    deep.block.mlp_steps = 3;
    assert_eq!(count_parameters(&base).total, count_parameters(&deep).total);
    assert_eq!(count_parameters(&base).total, Model::build(&base, 0).unwrap().parameter_counts().total);
}

#[test]
fn build_is_seed_deterministic() {
    let cfg = small(true, true);
    let (a, b, c) = (Model::build(&cfg, 4).unwrap(), Model::build(&cfg, 4).unwrap(), Model::build(&cfg, 5).unwrap());
    let tokens = [1, 2, 3];
    assert_eq!(logits(&a, &tokens), logits(&b, &tokens));
    assert_ne!(logits(&a, &tokens), logits(&c, &tokens));
}
