//! Spec-driven experiment runner.

pub mod error;
pub mod plot;
pub mod runner;
pub mod spec;
pub mod summary;

pub use error::CliError;
pub use plot::emit_plotdata;
pub use runner::{run, run_seed, SeedResult};
pub use spec::{ExperimentSpec, TaskKind, SPEC_VERSION};

/// Environment variable holding the default output root.
pub const OUT_ROOT_ENV: &str = "CEM_OUT_ROOT";
pub const DEFAULT_OUT_ROOT: &str = "cem-out";
