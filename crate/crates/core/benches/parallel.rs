use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cem::data::{gp_sample, GpKernelSpec, KernelKind, TokenWindows, BUNDLED_CORPUS};
use cem::experiments::{gp_model_config, lm_model_config, GpExperiment, GpVariant};
use cem::model::Model;
use cem::par::{self, Exec};
use cem::train::{batch_loss_and_grad, TrainData};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn lm_batch(c: &mut Criterion) {
    let model = Model::build(&lm_model_config(), 0).unwrap();
    let windows = TokenWindows::from_bytes(BUNDLED_CORPUS, 32).unwrap();
    let (train, test) = windows.split_holdout(0.1).unwrap();
    let data = TrainData::Lm { train, test };
    let indices: Vec<usize> = (0..16).collect();
    let mut group = c.benchmark_group("lm_batch_loss_and_grad");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| batch_loss_and_grad(&model, &data, &indices, exec, 64).unwrap())
        });
    }
    group.finish();
}

fn gp_batch(c: &mut Criterion) {
    let exp = GpExperiment::default();
    let model = Model::build(&gp_model_config(&exp, GpVariant::Cem { steps: 2 }), 0).unwrap();
    let (train, test) = gp_sample(&GpKernelSpec::of(KernelKind::Rbf), 640, 0).unwrap();
    let data = TrainData::Regression { train, test };
    let indices: Vec<usize> = (0..256).collect();
    let mut group = c.benchmark_group("gp_batch_loss_and_grad");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| batch_loss_and_grad(&model, &data, &indices, exec, 32).unwrap())
        });
    }
    group.finish();
}

fn map_range(c: &mut Criterion) {
    let mut group = c.benchmark_group("map_range");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::map_range(exec, 64, |i| (0..20_000).map(|k| ((i * k) as f64).sin()).sum::<f64>()))
        });
    }
    group.finish();
}

criterion_group!(benches, lm_batch, gp_batch, map_range);
criterion_main!(benches);
