//! Cross-seed CSV summaries and the console report.

use std::fs;
use std::path::Path;

use serde::Serialize;

use cem::data::KernelKind;
use cem::experiments::{paired_wins, summarize_gp, GpRunResult};

use crate::error::CliError;
use crate::runner::SeedResult;
use crate::spec::ExperimentSpec;

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct GpRow<'a> {
    kernel: &'a str,
    variant: &'a str,
    seed: u64,
    parameters: usize,
    flops_per_point: u64,
    train_rmse: f64,
    test_rmse: f64,
    wall_time_s: f64,
}

#[derive(Serialize)]
struct Ordering {
    kernel: KernelKind,
    better: String,
    worse: String,
    wins: usize,
    seeds: usize,
}

fn kernel_name(k: KernelKind) -> String {
    serde_json::to_value(k).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn gp_summary(dir: &Path, runs: &[GpRunResult]) -> Result<(), CliError> {
    let names: Vec<String> = runs.iter().map(|r| kernel_name(r.kernel)).collect();
    let rows: Vec<GpRow> = runs
        .iter()
        .zip(&names)
        .map(|(r, k)| GpRow {
            kernel: k,
            variant: &r.variant,
            seed: r.seed,
            parameters: r.parameters,
            flops_per_point: r.flops_per_point,
            train_rmse: r.train_rmse,
            test_rmse: r.test_rmse,
            wall_time_s: r.wall_time_s,
        })
        .collect();
    write_rows(&dir.join("runs.csv"), &rows)?;
    let summary = summarize_gp(runs);
    write_rows(&dir.join("summary.csv"), &summary)?;
    println!(
        "{:<20} {:<10} {:>9} {:>10} {:>22} {:>22}",
        "kernel", "model", "params", "flops/pt", "train rmse", "test rmse"
    );
    for s in &summary {
        println!(
            "{:<20} {:<10} {:>9} {:>10} {:>12.5} ± {:<7.5} {:>12.5} ± {:<7.5}",
            kernel_name(s.kernel),
            s.variant,
            s.parameters,
            s.flops_per_point,
            s.train_rmse_mean,
            s.train_rmse_std,
            s.test_rmse_mean,
            s.test_rmse_std
        );
    }
    let mut orderings = Vec::new();
    let mut kernels: Vec<KernelKind> = Vec::new();
    for r in runs {
        if !kernels.contains(&r.kernel) {
            kernels.push(r.kernel);
        }
    }
    for &k in &kernels {
        let variants: Vec<&str> = summary.iter().filter(|s| s.kernel == k).map(|s| s.variant.as_str()).collect();
        for &v in &variants {
            if v.starts_with("cem-t") && v != "cem-t1" && variants.contains(&"cem-t1") {
                let (wins, seeds) = paired_wins(runs, k, v, "cem-t1");
                orderings.push(Ordering {
                    kernel: k,
                    better: v.into(),
                    worse: "cem-t1".into(),
                    wins,
                    seeds,
                });
            }
        }
    }
    for o in &orderings {
        println!(
            "{}: {} beats {} on test rmse in {}/{} seeds",
            kernel_name(o.kernel),
            o.better,
            o.worse,
            o.wins,
            o.seeds
        );
    }
    fs::write(dir.join("ordering.json"), serde_json::to_vec_pretty(&orderings)?)?;
    Ok(())
}

pub fn write_summary(spec: &ExperimentSpec, dir: &Path, results: &[(u64, SeedResult)]) -> Result<(), CliError> {
    let _ = spec;
    let mut gp = Vec::new();
    let mut failed = Vec::new();
    let mut lm_rows = Vec::new();
    let mut sweep_rows = Vec::new();
    let mut verdicts = Vec::new();
    for (seed, r) in results {
        match r {
            SeedResult::GpRegression { runs } => gp.extend(runs.iter().cloned()),
            SeedResult::LmSmoke { result } => lm_rows.push((seed, result.clone())),
            SeedResult::Verify { verdicts: v } => {
                for x in v {
                    if !x.passed {
                        failed.push(format!("seed {seed}: {}", x.check));
                    }
                }
                verdicts.push(serde_json::json!({ "seed": seed, "verdicts": v }));
            }
            SeedResult::LrSweep { sweep } => {
                for (lr, v) in sweep.lrs.iter().zip(&sweep.values) {
                    sweep_rows.push((*seed, "knot", *lr, *v));
                }
                sweep_rows.push((*seed, "argmin", sweep.argmin_lr, sweep.argmin_value));
                println!("seed {seed}: interpolated optimum lr {:.4e} ({} {:.5})", sweep.argmin_lr, sweep.metric, sweep.argmin_value);
            }
            SeedResult::Count { table, presets } => {
                println!("{:<10} {:>14} {:>10} {:>10} {:>14}", "model", "attention core", "mlp core", "total", "flops");
                for row in &table.rows {
                    println!(
                        "{:<10} {:>14} {:>10} {:>10} {:>14}",
                        row.name, row.attention_core, row.mlp_core, row.total, row.flops
                    );
                }
                let show = |r: &Option<cem::experiments::Ratio>| r.map_or("n/a".to_string(), |r| r.to_string());
                println!("attention core ratio {}", show(&table.attention_ratio));
                println!("mlp core ratio {}", show(&table.mlp_ratio));
                println!("total ratio {:.4}", table.total_ratio);
                for p in presets {
                    println!("preset {:<6} {:>12} parameters", p.name, p.parameters);
                }
                write_rows(&dir.join("count.csv"), &table.rows)?;
                fs::write(dir.join("count.json"), serde_json::to_vec_pretty(&(table, presets))?)?;
            }
        }
    }
    if !gp.is_empty() {
        gp_summary(dir, &gp)?;
    }
    if !lm_rows.is_empty() {
        #[derive(Serialize)]
        struct Row {
            seed: u64,
            steps: usize,
            initial_train_loss: f64,
            final_train_loss: f64,
            reduction: f64,
            initial_test_perplexity: f64,
            final_test_perplexity: f64,
            wall_time_s: f64,
        }
        let rows: Vec<Row> = lm_rows
            .iter()
            .map(|(s, r)| Row {
                seed: **s,
                steps: r.steps,
                initial_train_loss: r.initial_train_loss,
                final_train_loss: r.final_train_loss,
                reduction: r.reduction,
                initial_test_perplexity: r.initial_test_perplexity,
                final_test_perplexity: r.final_test_perplexity,
                wall_time_s: r.wall_time_s,
            })
            .collect();
        for r in &rows {
            println!(
                "seed {}: train loss {:.4} -> {:.4} ({:.1}% lower), test perplexity {:.2}",
                r.seed,
                r.initial_train_loss,
                r.final_train_loss,
                100.0 * r.reduction,
                r.final_test_perplexity
            );
        }
        write_rows(&dir.join("summary.csv"), &rows)?;
    }
    if !sweep_rows.is_empty() {
        #[derive(Serialize)]
        struct Row {
            seed: u64,
            kind: &'static str,
            lr: f64,
            value: f64,
        }
        let rows: Vec<Row> = sweep_rows
            .into_iter()
            .map(|(seed, kind, lr, value)| Row { seed, kind, lr, value })
            .collect();
        write_rows(&dir.join("lr_sweep.csv"), &rows)?;
    }
    if !verdicts.is_empty() {
        fs::write(dir.join("verdicts.json"), serde_json::to_vec_pretty(&verdicts)?)?;
        let total: usize = results
            .iter()
            .map(|(_, r)| match r {
                SeedResult::Verify { verdicts } => verdicts.len(),
                _ => 0,
            })
            .sum();
        println!("{} of {total} checks passed", total - failed.len());
        if !failed.is_empty() {
            return Err(CliError::Failed(format!("verification failed: {}", failed.join(", "))));
        }
    }
    Ok(())
}
