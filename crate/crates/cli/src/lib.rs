//! Config-driven generate / fit / report pipeline over `udeuq-core`.

mod commands;
pub mod config;
mod report;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use commands::{cmd_fit, cmd_generate, load_dataset, FitOutcome};
pub use config::{MethodConfig, NutsRun, PtRun, ReportConfig, RunConfig, ViRun, OUTPUT_ROOT_VAR};
pub use report::{cmd_report, ComparisonRow, ReportOutcome};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] udeuq_core::Error),
}

impl CliError {
    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// 2 configuration, 3 data, 4 numerical failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use udeuq_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io { .. } => 3,
            CliError::Core(e) => match e {
                E::Config(_) | E::Unsupported(_) => 2,
                E::Data(_) | E::Io { .. } | E::Json(_) | E::Csv(_) | E::DimensionMismatch { .. } => 3,
                E::EmptyEnsemble
                | E::AllSimulationsFailed(_)
                | E::Initialization(_)
                | E::SimulationFailure(_)
                | E::DegenerateState(_) => 4,
                _ => 1,
            },
        }
    }
}

/// Directory layout of one run.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            root: cfg.resolved_output_dir(),
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn fit_dir(&self, method: &str) -> PathBuf {
        self.root.join("fit").join(method)
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

pub const DATASET_STEM: &str = "dataset";

/// Methods in the order they are reported.
pub const METHODS: [&str; 4] = ["ensemble", "nuts", "pt", "vi"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    pub config_sha256: String,
    pub wall_time_s: f64,
    pub versions: Versions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub udeuq: String,
    pub format: u32,
}

impl Manifest {
    pub fn new(command: &str, cfg: &RunConfig, wall_time_s: f64) -> Self {
        Self {
            command: command.to_string(),
            config: cfg.clone(),
            config_sha256: cfg.sha256(),
            wall_time_s,
            versions: Versions {
                udeuq: env!("CARGO_PKG_VERSION").to_string(),
                format: 1,
            },
        }
    }

    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("bad manifest {}: {e}", path.display())))
    }
}

pub(crate) fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}
