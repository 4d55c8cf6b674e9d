//! Executes specs into `<out>/<spec-hash>/seed-<s>/` directories.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Child, Command};

use serde::{Deserialize, Serialize};

use cem::data::BUNDLED_CORPUS;
use cem::experiments::{
    count_table, lm_smoke, lr_sweep, prepare_run_dir, run_gp, CountTable, GpRunResult,
    LmSmokeResult, LrSweepResult, RunMeta, SweepTask,
};
use cem::model::count_parameters;
use cem::config::ModelConfig;
use cem::verify::{run_suite, SuiteOptions, Verdict};

use crate::error::CliError;
use crate::spec::{ExperimentSpec, SweepTarget, TaskKind};

pub const SPEC_FILE: &str = "spec.json";
pub const RESULT_FILE: &str = "result.json";
pub const LOG_FILE: &str = "run.log";

/// Lines go to stderr and to the run log.
pub struct Log {
    file: Option<File>,
}

impl Log {
    pub fn open(path: &Path) -> Self {
        let file = OpenOptions::new().create(true).append(true).open(path).ok();
        Self { file }
    }

    pub fn line(&mut self, msg: &str) {
        eprintln!("{msg}");
        if let Some(f) = self.file.as_mut() {
            let _ = writeln!(f, "{msg}");
        }
    }
}

/// Everything one seed produced.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "kebab-case")]
pub enum SeedResult {
    GpRegression { runs: Vec<GpRunResult> },
    LmSmoke { result: LmSmokeResult },
    Verify { verdicts: Vec<Verdict> },
    LrSweep { sweep: LrSweepResult },
    Count { table: CountTable, presets: Vec<PresetRow> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PresetRow {
    pub name: String,
    pub parameters: usize,
}

pub fn run_dir(out_root: &Path, spec: &ExperimentSpec) -> PathBuf {
    out_root.join(spec.hash())
}

pub fn seed_dir(out_root: &Path, spec: &ExperimentSpec, seed: u64) -> PathBuf {
    run_dir(out_root, spec).join(format!("seed-{seed}"))
}

fn corpus(spec: &ExperimentSpec) -> Result<Vec<u8>, CliError> {
    Ok(match &spec.corpus {
        Some(p) => fs::read(p)?,
        None => BUNDLED_CORPUS.to_vec(),
    })
}

/// Runs one seed in-process and writes its artifacts.
pub fn run_seed(spec: &ExperimentSpec, seed: u64, out_root: &Path) -> Result<SeedResult, CliError> {
    let dir = seed_dir(out_root, spec, seed);
    fs::create_dir_all(&dir)?;
    let mut single = spec.clone();
    single.seeds = vec![seed];
    single.out = Some(out_root.to_path_buf());
    fs::write(dir.join(SPEC_FILE), single.to_pretty_json())?;
    let mut log = Log::open(&dir.join(LOG_FILE));
    log.line(&format!("[{}] seed {seed} -> {}", task_name(spec.task), dir.display()));
    let exec = spec.exec;
    let result = match spec.task {
        TaskKind::GpRegression => {
            let mut runs = Vec::new();
            for kernel in &spec.gp.kernels {
                let kname = serde_json::to_value(kernel.kind)?.as_str().unwrap_or("kernel").to_string();
                for &variant in &spec.gp.variants {
                    let meta = RunMeta {
                        label: format!("{kname}-{}", variant.name()),
                        seed,
                        lr: spec.gp.optim.lr,
                        steps: variant.steps(),
                        kernel: Some(kernel.kind),
                        variant: Some(variant.name()),
                        metric: "test/rmse".into(),
                    };
                    let metrics = prepare_run_dir(&dir.join("runs").join(&meta.label), &meta)?;
                    let r = run_gp(&spec.gp, kernel, variant, seed, exec, Some(&metrics))?;
                    log.line(&format!(
                        "  {:<24} params {:>7}  train rmse {:.5}  test rmse {:.5}  ({:.1}s)",
                        meta.label, r.parameters, r.train_rmse, r.test_rmse, r.wall_time_s
                    ));
                    runs.push(r);
                }
            }
            SeedResult::GpRegression { runs }
        }
        TaskKind::LmSmoke => {
            let meta = RunMeta {
                label: "lm-smoke".into(),
                seed,
                lr: spec.lm.optim.lr,
                steps: Some(spec.lm.model.block.attn_steps),
                metric: "test/perplexity".into(),
                ..RunMeta::default()
            };
            let run = dir.join("runs").join("lm-smoke");
            let metrics = prepare_run_dir(&run, &meta)?;
            let r = lm_smoke(&spec.lm, &corpus(spec)?, seed, exec, Some(&metrics), Some(&run.join("checkpoint.bin")))?;
            log.line(&format!(
                "  train loss {:.4} -> {:.4} ({:.1}% lower), test perplexity {:.2} -> {:.2} ({:.1}s)",
                r.initial_train_loss,
                r.final_train_loss,
                100.0 * r.reduction,
                r.initial_test_perplexity,
                r.final_test_perplexity,
                r.wall_time_s
            ));
            SeedResult::LmSmoke { result: r }
        }
        TaskKind::Verify => {
            let verdicts = run_suite(&SuiteOptions {
                base_seed: seed,
                instances: spec.verify.instances,
                exec,
            })?;
            for v in &verdicts {
                log.line(&format!("  {} {}", if v.passed { "PASS" } else { "FAIL" }, v.check));
            }
            fs::write(dir.join("verdicts.json"), serde_json::to_vec_pretty(&verdicts)?)?;
            SeedResult::Verify { verdicts }
        }
        TaskKind::LrSweep => {
            let task = match spec.sweep.target {
                SweepTarget::LmSmoke => SweepTask::LmSmoke { spec: spec.lm.clone() },
                SweepTarget::Gp => SweepTask::Gp {
                    experiment: spec.gp.clone(),
                    kernel: spec.sweep.kernel.clone(),
                    variant: spec.sweep.variant,
                },
            };
            let sweep = lr_sweep(&task, &spec.sweep.lrs, &corpus(spec)?, seed, exec, Some(&dir.join("runs")))?;
            for (lr, v) in sweep.lrs.iter().zip(&sweep.values) {
                log.line(&format!("  lr {lr:.3e}  {} {v:.5}", sweep.metric));
            }
            log.line(&format!("  interpolated optimum lr {:.3e} ({:.5})", sweep.argmin_lr, sweep.argmin_value));
            SeedResult::LrSweep { sweep }
        }
        TaskKind::Count => {
            let table = count_table(&spec.count.model, spec.count.seq_len);
            let presets = if spec.count.presets {
                ModelConfig::PRESETS
                    .iter()
                    .map(|n| PresetRow {
                        name: n.to_string(),
                        parameters: count_parameters(&ModelConfig::preset(n).expect("known preset")).total,
                    })
                    .collect()
            } else {
                Vec::new()
            };
            SeedResult::Count { table, presets }
        }
    };
    fs::write(dir.join(RESULT_FILE), serde_json::to_vec_pretty(&result)?)?;
    Ok(result)
}

pub fn task_name(t: TaskKind) -> &'static str {
    match t {
        TaskKind::GpRegression => "gp-regression",
        TaskKind::LmSmoke => "lm-smoke",
        TaskKind::Verify => "verify",
        TaskKind::LrSweep => "lr-sweep",
        TaskKind::Count => "count",
    }
}

/// Runs every seed, fanning out to child processes when `jobs > 1`, then
/// writes the cross-seed summary. Returns the run directory.
pub fn run(spec: &ExperimentSpec, out_root: &Path, jobs: usize, exe: Option<&Path>) -> Result<PathBuf, CliError> {
    let dir = run_dir(out_root, spec);
    fs::create_dir_all(&dir)?;
    let mut root = spec.clone();
    root.out = Some(out_root.to_path_buf());
    fs::write(dir.join(SPEC_FILE), root.to_pretty_json())?;
    let mut results = Vec::with_capacity(spec.seeds.len());
    match exe {
        Some(exe) if jobs > 1 && spec.seeds.len() > 1 => {
            fan_out(exe, &dir.join(SPEC_FILE), &spec.seeds, out_root, jobs)?;
            for &s in &spec.seeds {
                let path = seed_dir(out_root, spec, s).join(RESULT_FILE);
                let text = fs::read_to_string(&path)
                    .map_err(|e| CliError::Failed(format!("seed {s} left no result at {}: {e}", path.display())))?;
                results.push((s, serde_json::from_str(&text)?));
            }
        }
        _ => {
            for &s in &spec.seeds {
                results.push((s, run_seed(spec, s, out_root)?));
            }
        }
    }
    crate::summary::write_summary(spec, &dir, &results)?;
    Ok(dir)
}

fn fan_out(exe: &Path, spec_path: &Path, seeds: &[u64], out_root: &Path, jobs: usize) -> Result<(), CliError> {
    let mut pending: Vec<u64> = seeds.iter().rev().copied().collect();
    let mut running: Vec<(u64, Child)> = Vec::new();
    let mut failed = Vec::new();
    while !pending.is_empty() || !running.is_empty() {
        while running.len() < jobs {
            let Some(s) = pending.pop() else { break };
            let child = Command::new(exe)
                .arg("run")
                .arg("--spec")
                .arg(spec_path)
                .arg("--seeds")
                .arg(s.to_string())
                .arg("--jobs")
                .arg("1")
                .arg("--out")
                .arg(out_root)
                .spawn()?;
            running.push((s, child));
        }
        let (s, mut child) = running.remove(0);
        let status = child.wait()?;
        if !status.success() {
            failed.push(s);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("seeds {failed:?} failed; see their {LOG_FILE}")))
    }
}
