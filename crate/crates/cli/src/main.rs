use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cem_cli::spec::{parse_kernels, parse_seeds, parse_steps};
use cem_cli::{emit_plotdata, run, CliError, ExperimentSpec, DEFAULT_OUT_ROOT, OUT_ROOT_ENV};

#[derive(Parser)]
#[command(name = "cem", version, about = "Energy-minimization transformer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment spec.
    Run {
        /// Spec file (same as --spec).
        spec_file: Option<PathBuf>,
        #[arg(long = "spec")]
        spec: Option<PathBuf>,
        /// Dotted-path override, e.g. gp.optim.lr=1e-3. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output root; one directory per spec hash is created inside.
        #[arg(long, env = OUT_ROOT_ENV)]
        out: Option<PathBuf>,
        /// Seeds as `0,1,2` or `0..5`.
        #[arg(long)]
        seeds: Option<String>,
        /// Worker processes, one seed each.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// GP kernels to run, e.g. rbf,periodic.
        #[arg(long)]
        kernel: Option<String>,
        /// CEM recursion depths for GP runs, e.g. 1,2.
        #[arg(long = "T", value_name = "STEPS")]
        steps: Option<String>,
    },
    /// Turn run metrics into plot-ready CSVs.
    EmitPlotdata {
        metrics_dir: PathBuf,
        /// Defaults to `<metrics_dir>/plotdata`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Metric key `split/metric`; defaults to each run's primary metric.
        #[arg(long)]
        metric: Option<String>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Cmd::Run {
            spec_file,
            spec,
            set,
            out,
            seeds,
            jobs,
            kernel,
            steps,
        } => {
            let path = match (spec_file, spec) {
                (Some(_), Some(_)) => return Err(CliError::spec("--spec", "given twice")),
                (Some(p), None) | (None, Some(p)) => p,
                (None, None) => return Err(CliError::spec("--spec", "no spec file given")),
            };
            let mut spec = ExperimentSpec::load(&path, &set)?;
            if let Some(s) = seeds {
                spec.seeds = parse_seeds(&s)?;
            }
            if let Some(k) = kernel {
                spec.restrict_kernels(&parse_kernels(&k)?);
            }
            if let Some(t) = steps {
                spec.set_recursion_steps(&parse_steps(&t)?);
            }
            spec.validate()?;
            let root = out
                .or_else(|| spec.out.clone())
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT));
            let exe = std::env::current_exe().ok();
            let dir = run(&spec, &root, jobs.max(1), exe.as_deref())?;
            println!("results in {}", dir.display());
            Ok(())
        }
        Cmd::EmitPlotdata { metrics_dir, out, metric } => {
            let out = out.unwrap_or_else(|| metrics_dir.join("plotdata"));
            let files = emit_plotdata(&metrics_dir, &out, metric.as_deref())?;
            for (g, lr, v) in &files.argmins {
                println!("{g}: interpolated optimum lr {lr:.4e} ({v:.5})");
            }
            for f in &files.files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
    }
}
