//! Posterior predictive bands, parameter summaries and diagnostics.

mod bias_variance;
mod params;
pub mod svg;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bias_variance::{bias_variance, bias_variance_study, BiasVarianceConfig, BiasVarianceReport, BiasVarianceRow};
pub use params::{parameter_posteriors, write_parameter_csvs, Histogram, ParameterSummary};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::likelihood::{LikelihoodModel, NoiseModel};
use crate::model::{compose_ude_rhs, ParamSpace, UdeProblem, UdeRhs};
use crate::ode::{integrate, SolverConfig, Trajectory};
use crate::stats::quantile_sorted;

/// Means below this are raised before count sampling.
const NEGBIN_MEAN_FLOOR: f64 = 1e-6;

/// Quantile levels reported by default.
pub const DEFAULT_LEVELS: [f64; 3] = [0.5, 0.8, 0.99];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMethod {
    Ensemble,
    Mcmc,
    Vi,
}

impl SampleMethod {
    pub fn name(self) -> &'static str {
        match self {
            SampleMethod::Ensemble => "ensemble",
            SampleMethod::Mcmc => "mcmc",
            SampleMethod::Vi => "vi",
        }
    }
}

/// Equally weighted raw parameter draws from one UQ method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub draws: Vec<Vec<f64>>,
    pub method: SampleMethod,
}

impl PosteriorSamples {
    pub fn new(draws: Vec<Vec<f64>>, method: SampleMethod) -> Self {
        Self { draws, method }
    }

    /// The accepted members' parameters.
    pub fn from_ensemble(ens: &Ensemble) -> Self {
        Self::new(ens.draws(), SampleMethod::Ensemble)
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandKind {
    EpistemicOnly,
    FullPredictive,
}

impl BandKind {
    pub fn name(self) -> &'static str {
        match self {
            BandKind::EpistemicOnly => "epistemic_only",
            BandKind::FullPredictive => "full_predictive",
        }
    }
}

/// Central interval containing `level` of the mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelBand {
    pub level: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateBand {
    pub name: String,
    pub median: Vec<f64>,
    /// Pointwise envelope over all values.
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub levels: Vec<LevelBand>,
}

impl StateBand {
    pub fn level(&self, level: f64) -> Option<&LevelBand> {
        self.levels.iter().find(|l| (l.level - level).abs() < 1e-12)
    }

    /// Time-averaged width of the band at `level`.
    pub fn mean_width(&self, level: f64) -> Option<f64> {
        let b = self.level(level)?;
        let n = b.lower.len() as f64;
        Some(b.upper.iter().zip(&b.lower).map(|(u, l)| u - l).sum::<f64>() / n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBand {
    pub kind: BandKind,
    pub times: Vec<f64>,
    pub states: Vec<StateBand>,
    /// Draws whose simulation succeeded.
    pub n_draws: usize,
    pub failed_draws: Vec<usize>,
}

impl PredictionBand {
    /// Quantile summary of `values[state][time]` (the values at one point).
    fn from_values(
        kind: BandKind,
        times: Vec<f64>,
        names: &[String],
        mut values: Vec<Vec<Vec<f64>>>,
        levels: &[f64],
        n_draws: usize,
        failed_draws: Vec<usize>,
    ) -> Self {
        let states = names
            .iter()
            .zip(values.iter_mut())
            .map(|(name, per_time)| {
                let nt = per_time.len();
                let mut sb = StateBand {
                    name: name.clone(),
                    median: Vec::with_capacity(nt),
                    min: Vec::with_capacity(nt),
                    max: Vec::with_capacity(nt),
                    levels: levels
                        .iter()
                        .map(|&level| LevelBand {
                            level,
                            lower: Vec::with_capacity(nt),
                            upper: Vec::with_capacity(nt),
                        })
                        .collect(),
                };
                for v in per_time.iter_mut() {
                    v.sort_by(|a, b| a.total_cmp(b));
                    sb.median.push(quantile_sorted(v, 0.5));
                    sb.min.push(v[0]);
                    sb.max.push(v[v.len() - 1]);
                    for lb in &mut sb.levels {
                        let tail = 0.5 * (1.0 - lb.level);
                        lb.lower.push(quantile_sorted(v, tail));
                        lb.upper.push(quantile_sorted(v, 1.0 - tail));
                    }
                }
                sb
            })
            .collect();
        Self {
            kind,
            times,
            states,
            n_draws,
            failed_draws,
        }
    }

    pub fn state(&self, name: &str) -> Option<&StateBand> {
        self.states.iter().find(|s| s.name == name)
    }

    /// Write rows `t,state,level,lower,median,upper,kind`. The min/max
    /// envelope appears with level `envelope`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "state", "level", "lower", "median", "upper", "kind"])?;
        self.write_rows(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    fn write_rows<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        let kind = self.kind.name();
        for s in &self.states {
            for lb in &s.levels {
                for (i, t) in self.times.iter().enumerate() {
                    w.write_record([
                        t.to_string(),
                        s.name.clone(),
                        lb.level.to_string(),
                        lb.lower[i].to_string(),
                        s.median[i].to_string(),
                        lb.upper[i].to_string(),
                        kind.to_string(),
                    ])?;
                }
            }
            for (i, t) in self.times.iter().enumerate() {
                w.write_record([
                    t.to_string(),
                    s.name.clone(),
                    "envelope".to_string(),
                    s.min[i].to_string(),
                    s.median[i].to_string(),
                    s.max[i].to_string(),
                    kind.to_string(),
                ])?;
            }
        }
        Ok(())
    }
}

/// `n` evenly spaced points covering `span`, both ends included.
pub fn uniform_grid(span: (f64, f64), n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![span.0],
        _ => (0..n)
            .map(|i| span.0 + (span.1 - span.0) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Largest |Σx(t) − Σx0| / |Σx0| over a trajectory.
pub fn conservation_error(traj: &Trajectory, x0: &[f64]) -> f64 {
    let total: f64 = x0.iter().sum();
    traj.states
        .iter()
        .map(|x| (x.iter().sum::<f64>() - total).abs() / total.abs())
        .fold(0.0, f64::max)
}

/// Simulates parameter draws of one UDE.
#[derive(Debug, Clone)]
pub struct Predictor {
    problem: UdeProblem,
    space: ParamSpace,
    rhs: UdeRhs,
    solver: SolverConfig,
    parallelism: usize,
}

impl Predictor {
    pub fn new(problem: UdeProblem, space: ParamSpace, solver: SolverConfig) -> Result<Self> {
        solver.validate()?;
        let rhs = compose_ude_rhs(&problem, &space)?;
        Ok(Self {
            problem,
            space,
            rhs,
            solver,
            parallelism: 1,
        })
    }

    pub fn from_model(model: &LikelihoodModel) -> Self {
        Self {
            problem: model.problem().clone(),
            space: model.space().clone(),
            rhs: model.rhs().clone(),
            solver: model.solver().clone(),
            parallelism: 1,
        }
    }

    pub fn with_parallelism(mut self, n: usize) -> Self {
        self.parallelism = n.max(1);
        self
    }

    pub fn problem(&self) -> &UdeProblem {
        &self.problem
    }

    pub fn space(&self) -> &ParamSpace {
        &self.space
    }

    /// Noise model encoded in a raw parameter vector.
    pub fn noise_of(&self, theta: &[f64]) -> Result<NoiseModel> {
        let (seg, range) = self
            .space
            .noise_segment()
            .ok_or_else(|| Error::Config("parameter space lacks a noise segment".into()))?;
        Ok(self.problem.noise_from_natural(seg.transform.to_natural(theta[range.start])))
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.parallelism)
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
    }

    /// Solve every draw on `grid` from `x0` (the problem's own initial state
    /// when `None`). Failed solves come back as `None`.
    pub fn simulate_draws(&self, draws: &[Vec<f64>], x0: Option<&[f64]>, grid: &[f64]) -> Result<Vec<Option<Trajectory>>> {
        let x0 = x0.unwrap_or(&self.problem.x0);
        Error::check_len("initial state", self.problem.n_x, x0.len())?;
        for d in draws {
            Error::check_len("parameter draw", self.space.total_dim(), d.len())?;
        }
        let t0 = self.problem.t_span.0;
        self.pool()?.install(|| {
            draws
                .par_iter()
                .map(|theta| {
                    let traj = integrate(&self.rhs, x0, t0, grid, theta, &self.solver)?;
                    Ok(traj.success.then_some(traj))
                })
                .collect()
        })
    }

    /// Quantile bands of all states over `grid`. The full predictive kind adds
    /// `noise_draws` noise realizations per draw and time to the observed
    /// states; unobserved states have no measurement model and keep their
    /// epistemic band.
    #[allow(clippy::too_many_arguments)]
    pub fn trajectory_bands(
        &self,
        samples: &PosteriorSamples,
        x0: Option<&[f64]>,
        grid: &[f64],
        levels: &[f64],
        kind: BandKind,
        noise_draws: usize,
        seed: u64,
    ) -> Result<PredictionBand> {
        check_levels(levels)?;
        if samples.is_empty() {
            return Err(Error::Contract("bands need at least one draw".into()));
        }
        if kind == BandKind::FullPredictive && noise_draws == 0 {
            return Err(Error::Config("full predictive bands need noise draws".into()));
        }
        let sims = self.simulate_draws(&samples.draws, x0, grid)?;
        let failed: Vec<usize> = sims.iter().enumerate().filter(|(_, s)| s.is_none()).map(|(i, _)| i).collect();
        if failed.len() == sims.len() {
            return Err(Error::AllSimulationsFailed(failed));
        }
        let n_x = self.problem.n_x;
        let nt = grid.len();
        let per_point = match kind {
            BandKind::EpistemicOnly => 1,
            BandKind::FullPredictive => noise_draws,
        };
        let mut values: Vec<Vec<Vec<f64>>> = (0..n_x)
            .map(|j| {
                let cap = if self.problem.observed.contains(&j) { per_point } else { 1 };
                vec![Vec::with_capacity(cap * sims.len()); nt]
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (theta, sim) in samples.draws.iter().zip(&sims) {
            let Some(traj) = sim else { continue };
            let noise = match kind {
                BandKind::FullPredictive => Some(self.noise_of(theta)?),
                BandKind::EpistemicOnly => None,
            };
            for (ti, x) in traj.states.iter().enumerate() {
                for (j, &xj) in x.iter().enumerate() {
                    match &noise {
                        Some(nm) if self.problem.observed.contains(&j) => {
                            let mean = match nm {
                                NoiseModel::NegBin { .. } => xj.max(NEGBIN_MEAN_FLOOR),
                                NoiseModel::Gaussian { .. } => xj,
                            };
                            for _ in 0..noise_draws {
                                values[j][ti].push(nm.sample(mean, &mut rng));
                            }
                        }
                        _ => values[j][ti].push(xj),
                    }
                }
            }
        }
        Ok(PredictionBand::from_values(
            kind,
            grid.to_vec(),
            &self.problem.state_names,
            values,
            levels,
            sims.len() - failed.len(),
            failed,
        ))
    }

    /// Bands started from a different initial state.
    #[allow(clippy::too_many_arguments)]
    pub fn predict_new_ic(
        &self,
        samples: &PosteriorSamples,
        x0_new: &[f64],
        grid: &[f64],
        levels: &[f64],
        kind: BandKind,
        noise_draws: usize,
        seed: u64,
    ) -> Result<PredictionBand> {
        Error::check_len("new initial state", self.problem.n_x, x0_new.len())?;
        self.trajectory_bands(samples, Some(x0_new), grid, levels, kind, noise_draws, seed)
    }

    /// Bands of the network-driven transmission rate β(t).
    pub fn beta_bands(&self, samples: &PosteriorSamples, grid: &[f64], levels: &[f64]) -> Result<PredictionBand> {
        check_levels(levels)?;
        if samples.is_empty() {
            return Err(Error::Contract("bands need at least one draw".into()));
        }
        let net = self
            .space
            .network_range()
            .ok_or_else(|| Error::Config("parameter space has no network segment".into()))?;
        let mut values = vec![vec![Vec::with_capacity(samples.len()); grid.len()]];
        for theta in &samples.draws {
            for (ti, &t) in grid.iter().enumerate() {
                values[0][ti].push(self.problem.beta_of(&theta[net.clone()], t)?);
            }
        }
        Ok(PredictionBand::from_values(
            BandKind::EpistemicOnly,
            grid.to_vec(),
            &["beta".to_string()],
            values,
            levels,
            samples.len(),
            Vec::new(),
        ))
    }
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() || levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(Error::Config(format!("band levels must lie in (0, 1), got {levels:?}")));
    }
    Ok(())
}

/// Write several bands into one CSV.
pub fn write_bands_csv(path: &Path, bands: &[&PredictionBand]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "state", "level", "lower", "median", "upper", "kind"])?;
    for b in bands {
        b.write_rows(&mut w)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
