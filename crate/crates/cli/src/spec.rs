//! Versioned JSON experiment specs with dotted-path overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use cem::config::ModelConfig;
use cem::data::{GpKernelSpec, KernelKind};
use cem::experiments::{log_spaced, GpExperiment, GpVariant, LmSmoke};
use cem::par::Exec;

use crate::error::CliError;

pub const SPEC_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    GpRegression,
    LmSmoke,
    Verify,
    LrSweep,
    Count,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Random instances per check.
    pub instances: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self { instances: 100 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepTarget {
    #[default]
    LmSmoke,
    Gp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Which section supplies the base run.
    pub target: SweepTarget,
    pub lrs: Vec<f64>,
    /// Kernel and variant for GP sweeps.
    pub kernel: GpKernelSpec,
    pub variant: GpVariant,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            target: SweepTarget::LmSmoke,
            lrs: log_spaced(5e-4, 8e-3, 5),
            kernel: GpKernelSpec {
                lengthscale: 2.0,
                ..GpKernelSpec::of(KernelKind::Rbf)
            },
            variant: GpVariant::Cem { steps: 1 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CountSection {
    pub model: ModelConfig,
    pub seq_len: usize,
    /// Also list the built-in reference presets.
    pub presets: bool,
}

impl Default for CountSection {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            seq_len: 128,
            presets: false,
        }
    }
}

/// A declarative run description. Only the section named by `task` is
/// used; the others keep their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub version: u32,
    pub task: TaskKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Output root; the CLI flag and environment variable take precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub exec: Exec,
    /// Byte corpus for LM runs; the bundled text when absent.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default)]
    pub gp: GpExperiment,
    #[serde(default)]
    pub lm: LmSmoke,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub count: CountSection,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentSpec {
    pub fn new(task: TaskKind) -> Self {
        Self {
            version: SPEC_VERSION,
            task,
            seeds: default_seeds(),
            out: None,
            exec: Exec::default(),
            corpus: None,
            gp: GpExperiment::default(),
            lm: LmSmoke::default(),
            verify: VerifySection::default(),
            sweep: SweepSection::default(),
            count: CountSection::default(),
        }
    }

    /// Parses JSON text, applies `key=value` overrides, then validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut value: Value =
            serde_json::from_str(text).map_err(|e| CliError::spec("<root>", format!("not valid JSON: {e}")))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let spec: Self = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            CliError::spec(if path == "." { "<root>".into() } else { path }, e.into_inner().to_string())
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::spec("<file>", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != SPEC_VERSION {
            return Err(CliError::spec(
                "version",
                format!("unsupported version {}, expected {SPEC_VERSION}", self.version),
            ));
        }
        if self.seeds.is_empty() {
            return Err(CliError::spec("seeds", "at least one seed is required"));
        }
        let nested = |section: &str, e: String| CliError::spec(section, e);
        match self.task {
            TaskKind::GpRegression => self.gp.validate().map_err(|e| nested("gp", e.to_string()))?,
            TaskKind::LmSmoke => self.validate_lm()?,
            TaskKind::Verify => {
                if self.verify.instances == 0 {
                    return Err(CliError::spec("verify.instances", "must be >= 1"));
                }
            }
            TaskKind::LrSweep => {
                if self.sweep.lrs.len() < cem::train::MIN_KNOTS {
                    return Err(CliError::spec(
                        "sweep.lrs",
                        format!("need at least {} learning rates", cem::train::MIN_KNOTS),
                    ));
                }
                if self.sweep.lrs.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
                    return Err(CliError::spec("sweep.lrs", "learning rates must be positive and finite"));
                }
                if self.sweep.lrs.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(CliError::spec("sweep.lrs", "learning rates must be strictly increasing"));
                }
                match self.sweep.target {
                    SweepTarget::LmSmoke => self.validate_lm()?,
                    SweepTarget::Gp => {
                        self.gp.validate().map_err(|e| nested("gp", e.to_string()))?;
                        self.sweep.kernel.validate().map_err(|e| nested("sweep.kernel", e.to_string()))?;
                    }
                }
            }
            TaskKind::Count => {
                self.count
                    .model
                    .validate()
                    .map_err(|e| CliError::spec(format!("count.model.{}", e.field), e.reason))?;
                if self.count.seq_len == 0 {
                    return Err(CliError::spec("count.seq_len", "must be >= 1"));
                }
            }
        }
        Ok(())
    }

    fn validate_lm(&self) -> Result<(), CliError> {
        self.lm
            .model
            .validate()
            .map_err(|e| CliError::spec(format!("lm.model.{}", e.field), e.reason))?;
        self.lm.optim.validate().map_err(|e| CliError::spec("lm.optim", e.to_string()))?;
        if self.lm.seq_len < 2 {
            return Err(CliError::spec("lm.seq_len", "must be >= 2"));
        }
        if !(self.lm.holdout > 0.0 && self.lm.holdout < 1.0) {
            return Err(CliError::spec("lm.holdout", "must lie in (0, 1)"));
        }
        if let Some(p) = &self.corpus {
            if !p.is_file() {
                return Err(CliError::spec("corpus", format!("{} is not a readable file", p.display())));
            }
        }
        Ok(())
    }

    /// Keeps only the listed GP kernels, adding defaults for new kinds.
    pub fn restrict_kernels(&mut self, kinds: &[KernelKind]) {
        let defaults = GpExperiment::default().kernels;
        self.gp.kernels = kinds
            .iter()
            .map(|&k| {
                self.gp
                    .kernels
                    .iter()
                    .chain(&defaults)
                    .find(|s| s.kind == k)
                    .cloned()
                    .unwrap_or_else(|| GpKernelSpec::of(k))
            })
            .collect();
    }

    /// Replaces the CEM variants with one per recursion depth.
    pub fn set_recursion_steps(&mut self, steps: &[usize]) {
        self.gp.variants.retain(|v| v.steps().is_none());
        self.gp.variants.extend(steps.iter().map(|&s| GpVariant::Cem { steps: s }));
    }

    /// Hash of everything that affects results, so seeds and output
    /// location do not change it.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("spec serializes");
        if let Value::Object(m) = &mut v {
            m.remove("seeds");
            m.remove("out");
            m.remove("exec");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_pretty_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

/// `a.b.c=value`; the value is parsed as JSON, falling back to a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::spec(assignment, "override must look like key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(CliError::spec(key, "empty path segment"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| CliError::spec(key, format!("`{part}` indexes an array and must be a number")))?;
                let len = items.len();
                items
                    .get_mut(idx)
                    .ok_or_else(|| CliError::spec(key, format!("index {idx} out of range (length {len})")))?
            }
            Value::Object(map) => map.entry(part.to_string()).or_insert(Value::Null),
            other => {
                if other.is_null() {
                    *other = Value::Object(Default::default());
                    match other {
                        Value::Object(map) => map.entry(part.to_string()).or_insert(Value::Null),
                        _ => unreachable!(),
                    }
                } else {
                    return Err(CliError::spec(key, format!("`{part}` is inside a non-object value")));
                }
            }
        };
        if last {
            *cur = value;
            return Ok(());
        }
    }
    Ok(())
}

/// `0,1,4` or a half-open range `0..5`.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = |r: String| CliError::spec("--seeds", r);
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| bad(format!("{e}")))?;
        let b: u64 = b.trim().parse().map_err(|e| bad(format!("{e}")))?;
        if b <= a {
            return Err(bad(format!("empty range {s}")));
        }
        return Ok((a..b).collect());
    }
    s.split(',')
        .map(|t| t.trim().parse().map_err(|e| bad(format!("`{t}`: {e}"))))
        .collect()
}

pub fn parse_kernels(s: &str) -> Result<Vec<KernelKind>, CliError> {
    s.split(',')
        .map(|t| {
            serde_json::from_value(Value::String(t.trim().to_string()))
                .map_err(|_| CliError::spec("--kernel", format!("unknown kernel `{t}`")))
        })
        .collect()
}

pub fn parse_steps(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|t| match t.trim().parse::<usize>() {
            Ok(0) | Err(_) => Err(CliError::spec("--T", format!("`{t}` is not a positive integer"))),
            Ok(v) => Ok(v),
        })
        .collect()
}
