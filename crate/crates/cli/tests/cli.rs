use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn cem(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cem"))
        .args(args)
        .env("CEM_OUT_ROOT", out_root)
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn write_spec(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn result_dir(stdout: &str) -> PathBuf {
    let line = stdout.lines().find(|l| l.starts_with("results in ")).expect("result line");
    PathBuf::from(line.trim_start_matches("results in "))
}

const TINY_GP: &str = r#"{
  "version": 1,
  "task": "gp-regression",
  "gp": {
    "n_points": 40, "d_model": 4, "d_ff": 6, "layers": 1,
    "optim": { "total_steps": 6, "batch_size": 8 }
  }
}"#;

#[test]
fn count_prints_exact_core_ratios() {
    let tmp = tempfile::tempdir().unwrap();
    let repo = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs/count.json");
    let out = cem(&["run", repo.to_str().unwrap()], tmp.path());
    let so = text(&out.stdout);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(so.contains("attention core ratio 1/2"), "{so}");
    assert!(so.contains("mlp core ratio 2/3"), "{so}");
    assert!(so.contains("preset 86m"));
    let dir = result_dir(&so);
    assert!(dir.starts_with(tmp.path()), "env var sets the root");
    assert!(dir.join("count.csv").is_file());
}

#[test]
fn invalid_specs_exit_2_naming_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "s.json", TINY_GP);
    let s = spec.to_str().unwrap();
    let out = cem(&["run", s, "--set", "gp.optim.lr=-1"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("gp"), "{}", text(&out.stderr));

    let out = cem(&["run", s, "--set", "gp.d_model=\"wide\""], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("gp.d_model"), "{}", text(&out.stderr));

    let out = cem(&["run", s, "--kernel", "triangle"], tmp.path());
    assert_eq!(out.status.code(), Some(2));

    let missing = tmp.path().join("missing.json");
    let out = cem(&["run", missing.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gp_run_writes_per_seed_rmse_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "gp.json", TINY_GP);
    let args = ["run", "--spec", spec.to_str().unwrap(), "--kernel", "rbf", "--T", "1,2", "--seeds", "0..2"];
    let first = cem(&args, tmp.path());
    assert!(first.status.success(), "{}", text(&first.stderr));
    let dir = result_dir(&text(&first.stdout));
    let runs = fs::read_to_string(dir.join("runs.csv")).unwrap();
    assert!(runs.starts_with("kernel,variant,seed,parameters,flops_per_point,train_rmse,test_rmse"));
    assert_eq!(runs.lines().count(), 1 + 2 * 3, "{runs}");
    assert!(runs.contains("cem-t2"));
    assert!(dir.join("seed-1/runs/rbf-cem-t2/metrics.jsonl").is_file());

    // Same spec and seed: same directory, same numbers.
    let second = cem(&args, tmp.path());
    assert_eq!(result_dir(&text(&second.stdout)), dir);
    let rmse = |s: &str| -> Vec<String> { s.lines().map(|l| l.split(',').take(7).collect::<Vec<_>>().join(",")).collect() };
    assert_eq!(rmse(&runs), rmse(&fs::read_to_string(dir.join("runs.csv")).unwrap()));

    // The effective spec re-parses to an identical run.
    let eff = dir.join("spec.json");
    let third = cem(&["run", eff.to_str().unwrap()], tmp.path());
    assert!(third.status.success());
    assert_eq!(result_dir(&text(&third.stdout)), dir);
}

#[test]
fn process_fan_out_matches_in_process() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "gp.json", TINY_GP);
    let s = spec.to_str().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let one = cem(&["run", s, "--seeds", "0,1", "--out", a.to_str().unwrap()], tmp.path());
    let two = cem(&["run", s, "--seeds", "0,1", "--jobs", "2", "--out", b.to_str().unwrap()], tmp.path());
    assert!(one.status.success() && two.status.success(), "{}", text(&two.stderr));
    let cut = |p: PathBuf| -> Vec<String> {
        fs::read_to_string(p.join("runs.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(cut(result_dir(&text(&one.stdout))), cut(result_dir(&text(&two.stdout))));
}

#[test]
fn verify_suite_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let repo = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs/verify.json");
    let out = cem(&["run", repo.to_str().unwrap(), "--set", "verify.instances=4"], tmp.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    let dir = result_dir(&text(&out.stdout));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("verdicts.json")).unwrap()).unwrap();
    assert!(v[0]["verdicts"].as_array().unwrap().len() > 10);
}

#[test]
fn plotdata_from_a_learning_rate_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(
        tmp.path(),
        "sweep.json",
        r#"{
  "version": 1,
  "task": "lr-sweep",
  "gp": { "n_points": 40, "d_model": 4, "d_ff": 6, "layers": 1, "optim": { "total_steps": 5, "batch_size": 8 } },
  "sweep": { "target": "gp", "lrs": [0.0005, 0.001, 0.002, 0.004, 0.008] }
}"#,
    );
    let out = cem(&["run", spec.to_str().unwrap()], tmp.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    let dir = result_dir(&text(&out.stdout));
    assert!(dir.join("lr_sweep.csv").is_file());

    let plot = cem(&["emit-plotdata", dir.to_str().unwrap()], tmp.path());
    assert!(plot.status.success(), "{}", text(&plot.stderr));
    let curve = fs::read_to_string(dir.join("plotdata/lr_curve.csv")).unwrap();
    assert_eq!(curve.lines().filter(|l| l.contains(",knot,")).count(), 5);
    assert_eq!(curve.lines().filter(|l| l.contains(",argmin,")).count(), 1);
    assert!(dir.join("plotdata/steps.csv").is_file());

    let missing = cem(&["emit-plotdata", dir.to_str().unwrap(), "--metric", "test/accuracy"], tmp.path());
    assert_eq!(missing.status.code(), Some(1));
    assert!(text(&missing.stderr).contains("test/accuracy"));

    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let none = cem(&["emit-plotdata", empty.to_str().unwrap()], tmp.path());
    assert_eq!(none.status.code(), Some(1));
}

#[test]
fn plotdata_single_run_passthrough() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = write_spec(tmp.path(), "gp.json", TINY_GP);
    let out = cem(&["run", spec.to_str().unwrap(), "--kernel", "rbf", "--set", r#"gp.variants=[{"kind": "cem", "steps": 1}]"#], tmp.path());
    assert!(out.status.success(), "{}", text(&out.stderr));
    let dir = result_dir(&text(&out.stdout));
    let plot = cem(&["emit-plotdata", dir.to_str().unwrap()], tmp.path());
    assert!(plot.status.success(), "{}", text(&plot.stderr));
    let m = fs::read_to_string(dir.join("plotdata/metrics.csv")).unwrap();
    assert!(m.starts_with("step,split,metric,value"));
    assert!(m.contains(",test,rmse,"));
}
