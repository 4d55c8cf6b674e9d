//! Optimizer, schedule and training-loop properties.

use cem::config::ModelConfig;
use cem::data::{TokenWindows, BUNDLED_CORPUS};
use cem::layers::{ParamGroup, ParamStore};
use cem::model::Model;
use cem::par::Exec;
use cem::train::{adamw_update, lr_schedule, train_loop, AdamState, OptimConfig, TrainData, TrainOptions};
use cem::Tensor;
use proptest::prelude::*;

fn tiny_lm() -> (Model, TrainData) {
    let mut cfg = ModelConfig::default();
    cfg.block.d_model = 8;
    cfg.block.heads = 2;
    cfg.block.head_dim = 4;
    cfg.block.d_ff = 12;
    cfg.block.attn_steps = 2;
    let model = Model::build(&cfg, 3).unwrap();
    let (train, test) = TokenWindows::from_bytes(&BUNDLED_CORPUS[..4000], 16).unwrap().split_holdout(0.2).unwrap();
    (model, TrainData::Lm { train, test })
}

#[test]
fn training_is_identical_across_execution_modes() {
    let cfg = OptimConfig {
        total_steps: 6,
        batch_size: 4,
        ..OptimConfig::default()
    };
    let run = |exec| {
        let (mut model, data) = tiny_lm();
        let opts = TrainOptions {
            seed: 9,
            exec,
            log_every: 2,
            ..TrainOptions::default()
        };
        let m = train_loop(&mut model, &data, &cfg, &opts).unwrap();
        (m.records, model.store)
    };
    let (ra, sa) = run(Exec::Sequential);
    let (rb, sb) = run(Exec::Parallel);
    assert_eq!(ra, rb);
    for id in sa.ids() {
        assert_eq!(sa.get(id), sb.get(id));
    }
}

#[test]
fn zero_gradients_decay_by_exact_factor() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::vector(vec![2.0, -4.0]), ParamGroup::Mlp, true);
    let g = store.add("g", Tensor::vector(vec![2.0]), ParamGroup::Mlp, false);
    let cfg = OptimConfig {
        weight_decay: 0.1,
        ..OptimConfig::default()
    };
    let mut state = AdamState::new(&store);
    let zeros = vec![Tensor::zeros(&[2]), Tensor::zeros(&[1])];
    let lr = 0.05;
    for _ in 0..3 {
        adamw_update(&mut store, &zeros, &mut state, &cfg, lr).unwrap();
    }
    let f = (1.0f64 - lr * 0.1).powi(3);
    assert!((store.get(w).data()[0] - 2.0 * f).abs() < 1e-15);
    assert!((store.get(w).data()[1] + 4.0 * f).abs() < 1e-15);
    assert_eq!(store.get(g).data(), &[2.0]);
}

proptest! {
    #[test]
    fn schedule_is_continuous_and_bounded(total in 10usize..5000, warm in 0.01f64..0.5, fin in 0.0f64..1.0) {
        let cfg = OptimConfig { lr: 3e-3, total_steps: total, warmup_fraction: warm, final_factor: fin, ..OptimConfig::default() };
        let junction = (warm * total as f64).floor() as usize;
        for s in 0..=total {
            let lr = lr_schedule(s, &cfg);
            prop_assert!(lr >= 0.0 && lr <= cfg.lr + 1e-15);
        }
        let a = lr_schedule(junction, &cfg);
        let b = lr_schedule(junction + 1, &cfg);
        prop_assert!((a - b).abs() <= cfg.lr / (warm * total as f64).max(1.0) + 1e-12);
        prop_assert!((lr_schedule(total, &cfg) - cfg.lr * fin).abs() < 1e-12);
    }
}
