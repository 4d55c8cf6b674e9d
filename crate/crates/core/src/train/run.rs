use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TaskHead;
use crate::data::{RegressionBatch, TokenWindows};
use crate::model::{Example, Model};
use crate::par::{self, Exec};
use crate::tensor::{clip_global_norm, Tensor};

use super::optim::{adamw_step, AdamState, OptimConfig};
use super::TrainError;

pub enum TrainData {
    Lm { train: TokenWindows, test: TokenWindows },
    Regression { train: RegressionBatch, test: RegressionBatch },
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub seed: u64,
    pub exec: Exec,
    /// Evaluate every this many steps (0: only at start and end).
    pub eval_every: usize,
    /// Log training loss every this many steps.
    pub log_every: usize,
    /// Rows per gradient shard for regression batches.
    pub chunk_rows: usize,
    pub metrics_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            exec: Exec::default(),
            eval_every: 0,
            log_every: 10,
            chunk_rows: 64,
            metrics_path: None,
            checkpoint_path: None,
        }
    }
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub test_loss: f64,
    pub test_perplexity: Option<f64>,
    pub train_rmse: Option<f64>,
    pub test_rmse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub records: Vec<MetricRecord>,
    /// Mean batch loss over the first logging window.
    pub initial_train_loss: f64,
    /// Mean batch loss over the last logging window.
    pub final_train_loss: f64,
    pub initial: Evaluation,
    pub last: Evaluation,
    pub wall_time_s: f64,
}

impl RunMetrics {
    /// `(step, value)` series for one split and metric.
    pub fn series(&self, split: &str, metric: &str) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter(|r| r.split == split && r.metric == metric)
            .map(|r| (r.step, r.value))
            .collect()
    }
}

struct Sink {
    records: Vec<MetricRecord>,
    out: Option<BufWriter<File>>,
}

impl Sink {
    fn push(&mut self, step: usize, split: &str, metric: &str, value: f64) -> Result<(), TrainError> {
        let r = MetricRecord {
            step,
            split: split.into(),
            metric: metric.into(),
            value,
        };
        if let Some(w) = self.out.as_mut() {
            serde_json::to_writer(&mut *w, &r).map_err(|e| TrainError::Io(e.into()))?;
            w.write_all(b"\n")?;
        }
        self.records.push(r);
        Ok(())
    }

    fn eval(&mut self, step: usize, e: &Evaluation) -> Result<(), TrainError> {
        self.push(step, "test", "loss", e.test_loss)?;
        if let Some(p) = e.test_perplexity {
            self.push(step, "test", "perplexity", p)?;
        }
        if let Some(r) = e.train_rmse {
            self.push(step, "train", "rmse", r)?;
        }
        if let Some(r) = e.test_rmse {
            self.push(step, "test", "rmse", r)?;
        }
        Ok(())
    }
}

fn check_task(model: &Model, data: &TrainData) -> Result<(), TrainError> {
    match (&model.config.task, data) {
        (TaskHead::LmLogits, TrainData::Lm { .. }) | (TaskHead::RegressionScalar { .. }, TrainData::Regression { .. }) => Ok(()),
        _ => Err(TrainError::Config("model task head does not match the data kind".into())),
    }
}

/// Weighted mean of per-shard `(loss, grads)` with weights summing to one.
fn reduce(parts: Vec<(f64, f64, Vec<Tensor>)>) -> (f64, Vec<Tensor>) {
    let mut it = parts.into_iter();
    let (w0, l0, g0) = it.next().expect("non-empty batch");
    let mut loss = w0 * l0;
    let mut grads: Vec<Tensor> = g0.into_iter().map(|g| g.scale(w0)).collect();
    for (w, l, g) in it {
        loss += w * l;
        for (acc, gi) in grads.iter_mut().zip(&g) {
            acc.axpy(w, gi).expect("aligned gradients");
        }
    }
    (loss, grads)
}

fn chunks(n: usize, size: usize) -> Vec<(usize, usize)> {
    (0..n).step_by(size.max(1)).map(|s| (s, (s + size).min(n))).collect()
}

/// Mean loss over a regression set, sharded.
fn regression_loss(model: &Model, batch: &RegressionBatch, exec: Exec, chunk_rows: usize) -> Result<f64, TrainError> {
    let n = batch.len();
    let parts = par::map(exec, &chunks(n, chunk_rows), |&(s, e)| {
        let b = batch.slice(s, e)?;
        let l = model.loss_value(Example::Points {
            inputs: &b.inputs,
            targets: &b.targets,
        })?;
        Ok::<f64, TrainError>(l * (e - s) as f64 / n as f64)
    });
    parts.into_iter().sum()
}

pub fn evaluate(model: &Model, data: &TrainData, exec: Exec, chunk_rows: usize) -> Result<Evaluation, TrainError> {
    match data {
        TrainData::Lm { test, .. } => {
            let losses = par::map(exec, &test.windows, |w| model.loss_value(Example::Tokens(w)));
            let mut total = 0.0;
            for l in losses {
                total += l?;
            }
            let loss = total / test.len() as f64;
            Ok(Evaluation {
                test_loss: loss,
                test_perplexity: Some(loss.exp()),
                ..Evaluation::default()
            })
        }
        TrainData::Regression { train, test } => {
            let test_mse = regression_loss(model, test, exec, chunk_rows)?;
            let train_mse = regression_loss(model, train, exec, chunk_rows)?;
            Ok(Evaluation {
                test_loss: test_mse,
                test_perplexity: None,
                train_rmse: Some(train_mse.sqrt()),
                test_rmse: Some(test_mse.sqrt()),
            })
        }
    }
}

/// Draws batches by walking a per-epoch shuffled order.
struct Batcher {
    n: usize,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl Batcher {
    fn new(n: usize, seed: u64) -> Self {
        let mut b = Self {
            n,
            order: (0..n).collect(),
            cursor: n,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba7c),
        };
        b.refill();
        b
    }

    fn refill(&mut self) {
        self.order = (0..self.n).collect();
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        if size >= self.n {
            return (0..self.n).collect();
        }
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.n {
                self.refill();
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// Loss and gradient of the mean batch loss, sharded across `exec`.
pub fn batch_loss_and_grad(
    model: &Model,
    data: &TrainData,
    indices: &[usize],
    exec: Exec,
    chunk_rows: usize,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let parts: Vec<Result<(f64, f64, Vec<Tensor>), TrainError>> = match data {
        TrainData::Lm { train, .. } => {
            let w = 1.0 / indices.len() as f64;
            par::map(exec, indices, |&i| {
                let (l, g) = model.loss_and_grad(Example::Tokens(&train.windows[i]))?;
                Ok((w, l, g))
            })
        }
        TrainData::Regression { train, .. } => {
            let batch = if indices.len() == train.len() {
                train.clone()
            } else {
                train.select(indices)?
            };
            let n = batch.len();
            par::map(exec, &chunks(n, chunk_rows), |&(s, e)| {
                let b = batch.slice(s, e)?;
                let (l, g) = model.loss_and_grad(Example::Points {
                    inputs: &b.inputs,
                    targets: &b.targets,
                })?;
                Ok(((e - s) as f64 / n as f64, l, g))
            })
        }
    };
    Ok(reduce(parts.into_iter().collect::<Result<Vec<_>, _>>()?))
}

/// Trains in place. Deterministic for a given seed regardless of `exec`.
pub fn train_loop(
    model: &mut Model,
    data: &TrainData,
    cfg: &OptimConfig,
    opts: &TrainOptions,
) -> Result<RunMetrics, TrainError> {
    cfg.validate()?;
    check_task(model, data)?;
    let started = Instant::now();
    let n = match data {
        TrainData::Lm { train, .. } => train.len(),
        TrainData::Regression { train, .. } => train.len(),
    };
    let mut sink = Sink {
        records: Vec::new(),
        out: match &opts.metrics_path {
            Some(p) => Some(BufWriter::new(File::create(p)?)),
            None => None,
        },
    };
    let initial = evaluate(model, data, opts.exec, opts.chunk_rows)?;
    sink.eval(0, &initial)?;
    let mut state = AdamState::new(&model.store);
    let mut batcher = Batcher::new(n, opts.seed);
    let log_every = opts.log_every.max(1);
    let mut window = Vec::new();
    let mut first_window: Option<f64> = None;
    let mut last_window = f64::NAN;
    for step in 1..=cfg.total_steps {
        let idx = batcher.next(cfg.batch_size);
        let (loss, mut grads) = batch_loss_and_grad(model, data, &idx, opts.exec, opts.chunk_rows)?;
        if !loss.is_finite() {
            return Err(diverged(model, opts, step, format!("loss is {loss}")));
        }
        let norm = clip_global_norm(&mut grads, cfg.clip);
        let lr = match adamw_step(&mut model.store, &grads, &mut state, cfg, step) {
            Ok(lr) => lr,
            Err(TrainError::NonFinite { detail, .. }) => return Err(diverged(model, opts, step, detail)),
            Err(e) => return Err(e),
        };
        window.push(loss);
        if step % log_every == 0 || step == cfg.total_steps {
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            first_window.get_or_insert(mean);
            last_window = mean;
            window.clear();
            sink.push(step, "train", "loss", mean)?;
            sink.push(step, "train", "grad_norm", norm)?;
            sink.push(step, "train", "lr", lr)?;
        }
        if opts.eval_every > 0 && step % opts.eval_every == 0 && step != cfg.total_steps {
            let e = evaluate(model, data, opts.exec, opts.chunk_rows)?;
            sink.eval(step, &e)?;
        }
    }
    let last = if cfg.total_steps == 0 {
        initial.clone()
    } else {
        let e = evaluate(model, data, opts.exec, opts.chunk_rows)?;
        sink.eval(cfg.total_steps, &e)?;
        e
    };
    if let Some(p) = &opts.checkpoint_path {
        model.save(p)?;
    }
    if let Some(w) = sink.out.as_mut() {
        w.flush()?;
    }
    Ok(RunMetrics {
        records: sink.records,
        initial_train_loss: first_window.unwrap_or(f64::NAN),
        final_train_loss: last_window,
        initial,
        last,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// The parameters have not been touched by the failing step, so the store
/// is the last good state.
fn diverged(model: &Model, opts: &TrainOptions, step: usize, detail: String) -> TrainError {
    let mut detail = detail;
    if let Some(p) = &opts.checkpoint_path {
        if let Err(e) = model.save(p) {
            detail.push_str(&format!("; saving last-good checkpoint failed: {e}"));
        }
    }
    TrainError::NonFinite {
        step,
        detail,
        last_good: Some(Box::new(model.store.clone())),
    }
}
