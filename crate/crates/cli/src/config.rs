use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use udeuq_core::ensemble::EnsembleConfig;
use udeuq_core::mcmc::{geometric_ladder, NutsConfig, WarmStartConfig};
use udeuq_core::predict::DEFAULT_LEVELS;
use udeuq_core::vi::ViConfig;
use udeuq_core::{ModelOptions, NoiseModel, Scenario, SolverConfig};

use crate::CliError;

/// Environment variable naming the root for relative output directories.
pub const OUTPUT_ROOT_VAR: &str = "UDEUQ_OUTPUT_ROOT";

/// One declarative run: a scenario, its data and one UQ method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub noise: NoiseModel,
    /// Allow noise settings outside the scenario catalog.
    #[serde(default)]
    pub custom: bool,
    /// Base seed for data generation and every method.
    #[serde(default)]
    pub seed: u64,
    pub method: MethodConfig,
    #[serde(default)]
    pub model: ModelOptions,
    /// Training solver; defaults to fixed-step RK4 with span/1000 steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    pub output_dir: PathBuf,
    #[serde(default = "one")]
    pub parallelism: usize,
    #[serde(default)]
    pub report: ReportConfig,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodConfig {
    Ensemble(EnsembleConfig),
    Nuts(NutsRun),
    Pt(PtRun),
    Vi(ViRun),
}

impl MethodConfig {
    pub fn name(&self) -> &'static str {
        match self {
            MethodConfig::Ensemble(_) => "ensemble",
            MethodConfig::Nuts(_) => "nuts",
            MethodConfig::Pt(_) => "pt",
            MethodConfig::Vi(_) => "vi",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NutsRun {
    #[serde(flatten)]
    pub sampler: NutsConfig,
    pub chains: usize,
    pub warm_start: WarmStartConfig,
}

impl Default for NutsRun {
    fn default() -> Self {
        Self {
            sampler: NutsConfig::default(),
            chains: 1,
            warm_start: WarmStartConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PtRun {
    #[serde(flatten)]
    pub sampler: NutsConfig,
    /// Explicit ladder; when empty a geometric ladder of `n_temperatures`
    /// rungs up to `t_max` is used.
    pub temperatures: Vec<f64>,
    pub n_temperatures: usize,
    pub t_max: f64,
    pub warm_start: WarmStartConfig,
}

impl Default for PtRun {
    fn default() -> Self {
        Self {
            sampler: NutsConfig::default(),
            temperatures: Vec::new(),
            n_temperatures: 8,
            t_max: 30.0,
            warm_start: WarmStartConfig::default(),
        }
    }
}

impl PtRun {
    pub fn ladder(&self) -> Vec<f64> {
        if self.temperatures.is_empty() {
            geometric_ladder(self.n_temperatures, self.t_max)
        } else {
            self.temperatures.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViRun {
    #[serde(flatten)]
    pub vi: ViConfig,
    /// Start the mean at a short optimization instead of a prior draw.
    pub warm_start: Option<WarmStartConfig>,
}

impl Default for ViRun {
    fn default() -> Self {
        Self {
            vi: ViConfig::default(),
            warm_start: Some(WarmStartConfig::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    pub grid_points: usize,
    pub levels: Vec<f64>,
    /// Noise realizations per draw and time in full predictive bands.
    pub noise_draws: usize,
    /// Draws taken from a variational posterior.
    pub vi_draws: usize,
    /// Sample-based methods are thinned evenly to at most this many draws.
    pub max_draws: usize,
    pub x0_override: Option<Vec<f64>>,
    pub charts: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            grid_points: 200,
            levels: DEFAULT_LEVELS.to_vec(),
            noise_draws: 20,
            vi_draws: 1000,
            max_draws: 1000,
            x0_override: None,
            charts: true,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.noise.validate()?;
        if !self.custom && !self.scenario.in_catalog(&self.noise) {
            return Err(CliError::Config(format!(
                "noise {:?} is not in the catalog for {}; set \"custom\": true to use it",
                self.noise,
                self.scenario.name()
            )));
        }
        if self.parallelism == 0 {
            return Err(CliError::Config("parallelism must be at least 1".into()));
        }
        if let Some(s) = &self.solver {
            s.validate()?;
        }
        match &self.method {
            MethodConfig::Ensemble(c) => c.validate()?,
            MethodConfig::Nuts(c) => {
                c.sampler.validate()?;
                c.warm_start.fit.validate()?;
                if c.chains == 0 {
                    return Err(CliError::Config("nuts needs at least one chain".into()));
                }
            }
            MethodConfig::Pt(c) => {
                c.sampler.validate()?;
                c.warm_start.fit.validate()?;
                if c.temperatures.is_empty() && (c.n_temperatures == 0 || !(c.t_max >= 1.0)) {
                    return Err(CliError::Config("pt needs a ladder or n_temperatures ≥ 1 and t_max ≥ 1".into()));
                }
            }
            MethodConfig::Vi(c) => {
                c.vi.validate()?;
                if let Some(w) = &c.warm_start {
                    w.fit.validate()?;
                }
            }
        }
        let r = &self.report;
        if r.grid_points < 2 || r.max_draws < 2 || r.vi_draws < 2 {
            return Err(CliError::Config("report needs at least 2 grid points and draws".into()));
        }
        if r.levels.is_empty() || r.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return Err(CliError::Config(format!("band levels must lie in (0, 1), got {:?}", r.levels)));
        }
        Ok(())
    }

    /// Canonical JSON form (also what the manifest stores).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn solver_config(&self) -> SolverConfig {
        self.solver.clone().unwrap_or_else(|| SolverConfig::training(self.scenario.t_span()))
    }

    /// Output directory, relative paths taken against the output root
    /// variable when it is set.
    pub fn resolved_output_dir(&self) -> PathBuf {
        if self.output_dir.is_absolute() {
            return self.output_dir.clone();
        }
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) if !root.is_empty() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}
