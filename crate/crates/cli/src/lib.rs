//! Experiment harness for `safari-core`: configuration files and presets,
//! batch restoration runs, sweeps, theory checks and CSV/PNG reports.

pub mod config;
pub mod experiment;
pub mod gallery;
pub mod presets;
pub mod report;
pub mod sweep;
pub mod verify;

pub use config::{load_config, parse_config, ConfigError, ExperimentConfig, Task};
pub use experiment::{run_experiment, Summary};
pub use sweep::{run_sweep, SweepAxis};

/// Top-level failure, split by exit code.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Run(#[from] anyhow::Error),
}

impl HarnessError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Run(_) => 1,
        }
    }
}
