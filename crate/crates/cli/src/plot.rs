//! Tidy CSVs for learning-rate and recursion-depth plots.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use walkdir::WalkDir;

use cem::experiments::{RunMeta, META_FILE, METRICS_FILE};
use cem::train::{akima_interpolate, MetricRecord, MIN_KNOTS};

use crate::error::CliError;

/// Points on the interpolant between the extreme knots.
pub const CURVE_POINTS: usize = 50;

#[derive(Clone, Debug)]
pub struct RunMetrics {
    pub dir: PathBuf,
    pub meta: RunMeta,
    pub records: Vec<MetricRecord>,
}

impl RunMetrics {
    /// Last value of `split/metric`.
    pub fn final_value(&self, key: &str) -> Result<f64, CliError> {
        let (split, metric) = key
            .split_once('/')
            .ok_or_else(|| CliError::Data(format!("metric key `{key}` must look like split/metric")))?;
        self.records
            .iter()
            .filter(|r| r.split == split && r.metric == metric)
            .max_by_key(|r| r.step)
            .map(|r| r.value)
            .ok_or_else(|| {
                CliError::Data(format!(
                    "metric `{key}` missing from {}",
                    self.dir.join(METRICS_FILE).display()
                ))
            })
    }
}

/// Every run directory (one holding a sidecar) under `root`.
pub fn collect_runs(root: &Path) -> Result<Vec<RunMetrics>, CliError> {
    let mut out = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| CliError::Data(e.to_string()))?;
        if entry.file_name() != META_FILE {
            continue;
        }
        let dir = entry.path().parent().unwrap_or(root).to_path_buf();
        let meta: RunMeta = serde_json::from_str(&fs::read_to_string(entry.path())?)?;
        let metrics_path = dir.join(METRICS_FILE);
        let text = fs::read_to_string(&metrics_path)
            .map_err(|e| CliError::Data(format!("{}: {e}", metrics_path.display())))?;
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<MetricRecord>, _>>()?;
        out.push(RunMetrics { dir, meta, records });
    }
    Ok(out)
}

#[derive(Serialize)]
struct RunRow<'a> {
    label: &'a str,
    seed: u64,
    lr: f64,
    steps: Option<usize>,
    kernel: Option<String>,
    variant: Option<&'a str>,
    metric: &'a str,
    value: f64,
}

#[derive(Serialize)]
struct LrRow {
    group: String,
    kind: &'static str,
    lr: f64,
    value: f64,
}

/// What was written.
#[derive(Clone, Debug, Default)]
pub struct PlotFiles {
    pub files: Vec<PathBuf>,
    pub argmins: Vec<(String, f64, f64)>,
}

fn write<T: Serialize>(path: PathBuf, rows: &[T], files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    files.push(path);
    Ok(())
}

/// Writes `runs.csv` (final metric per run), `lr_curve.csv` (knots,
/// interpolant and argmin per group with at least five learning rates),
/// `steps.csv` (metric against recursion depth) and, for a single run,
/// `metrics.csv` as a passthrough of its stream.
///
/// `metric` overrides each run's own primary metric.
pub fn emit_plotdata(metrics_dir: &Path, out_dir: &Path, metric: Option<&str>) -> Result<PlotFiles, CliError> {
    let runs = collect_runs(metrics_dir)?;
    if runs.is_empty() {
        return Err(CliError::Data(format!("no runs with metrics under {}", metrics_dir.display())));
    }
    fs::create_dir_all(out_dir)?;
    let mut out = PlotFiles::default();

    let mut rows = Vec::with_capacity(runs.len());
    for r in &runs {
        let key = metric.unwrap_or(&r.meta.metric);
        rows.push(RunRow {
            label: &r.meta.label,
            seed: r.meta.seed,
            lr: r.meta.lr,
            steps: r.meta.steps,
            kernel: r.meta.kernel.and_then(|k| serde_json::to_value(k).ok()).and_then(|v| v.as_str().map(String::from)),
            variant: r.meta.variant.as_deref(),
            metric: key,
            value: r.final_value(key)?,
        });
    }

    if runs.len() == 1 {
        write(out_dir.join("metrics.csv"), &runs[0].records, &mut out.files)?;
    }

    // Group by everything except the learning rate.
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for row in &rows {
        let g = format!(
            "{}|{}|{}|seed{}|{}",
            row.kernel.as_deref().unwrap_or("-"),
            row.variant.unwrap_or("-"),
            row.steps.map_or("-".into(), |s| format!("T{s}")),
            row.seed,
            row.metric
        );
        groups.entry(g).or_default().push((row.lr, row.value));
    }
    let mut lr_rows = Vec::new();
    for (g, mut pts) in groups {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.dedup_by(|a, b| a.0 == b.0);
        if pts.len() < MIN_KNOTS {
            continue;
        }
        let xs: Vec<f64> = pts.iter().map(|p| p.0.log10()).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let curve = akima_interpolate(&xs, &ys).map_err(|e| CliError::Data(e.to_string()))?;
        for &(lr, v) in &pts {
            lr_rows.push(LrRow { group: g.clone(), kind: "knot", lr, value: v });
        }
        let (lo, hi) = curve.span();
        for i in 0..CURVE_POINTS {
            let x = lo + (hi - lo) * i as f64 / (CURVE_POINTS - 1) as f64;
            lr_rows.push(LrRow { group: g.clone(), kind: "interp", lr: 10f64.powf(x), value: curve.eval(x) });
        }
        let (x, y) = curve.argmin();
        lr_rows.push(LrRow { group: g.clone(), kind: "argmin", lr: 10f64.powf(x), value: y });
        out.argmins.push((g, 10f64.powf(x), y));
    }
    if !lr_rows.is_empty() {
        write(out_dir.join("lr_curve.csv"), &lr_rows, &mut out.files)?;
    }

    let step_rows: Vec<&RunRow> = rows.iter().filter(|r| r.steps.is_some()).collect();
    if !step_rows.is_empty() {
        write(out_dir.join("steps.csv"), &step_rows, &mut out.files)?;
    }
    write(out_dir.join("runs.csv"), &rows, &mut out.files)?;
    Ok(out)
}
