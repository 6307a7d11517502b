//! Posterior sampling: NUTS, parallel tempering, diagnostics and I/O.

mod diagnostics;
mod nuts;
mod tempering;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use diagnostics::{chain_diagnostics, ChainDiagnostics};
pub use nuts::{nuts_chains, nuts_sample, NutsConfig};
pub use tempering::{geometric_ladder, parallel_tempering, PtConfig, PtLadder, PtResult};

use crate::error::{Error, Result};
use crate::ensemble::sample_start_points;
use crate::likelihood::prior::LOG_DENSITY_SENTINEL;
use crate::likelihood::LikelihoodModel;
use crate::model::NetInit;
use crate::optimize::{adam_run, bfgs_run, AdamConfig, Evaluation, FitConfig, QuasiNewtonConfig, StopReason};
use crate::target::LogDensity;

/// Summary of the sampling-phase transitions of one chain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub mean_accept_prob: f64,
    pub mean_tree_depth: f64,
    pub mean_leapfrog: f64,
    /// Adapted step size.
    pub step_size: f64,
    /// Adapted inverse metric (diagonal).
    pub inv_metric: Vec<f64>,
}

impl AcceptanceStats {
    fn record(&mut self, info: &nuts::TransitionInfo) {
        self.mean_accept_prob += info.accept_stat;
        self.mean_tree_depth += info.depth as f64;
        self.mean_leapfrog += info.n_leapfrog as f64;
    }

    fn finish(&mut self, n: usize, step: f64, minv: &[f64]) {
        let n = n.max(1) as f64;
        self.mean_accept_prob /= n;
        self.mean_tree_depth /= n;
        self.mean_leapfrog /= n;
        self.step_size = step;
        self.inv_metric = minv.to_vec();
    }
}

/// Draws of one chain on the raw scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    pub samples: Vec<Vec<f64>>,
    /// Untempered log density of every draw.
    pub log_posts: Vec<f64>,
    pub chain_id: usize,
    pub temperature: f64,
    pub acceptance_stats: AcceptanceStats,
    pub divergence_count: usize,
}

impl ChainResult {
    fn empty(chain_id: usize, temperature: f64) -> Self {
        Self {
            samples: Vec::new(),
            log_posts: Vec::new(),
            chain_id,
            temperature,
            acceptance_stats: AcceptanceStats::default(),
            divergence_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Write `draw,logpost,<columns>` rows.
    pub fn write_csv(&self, path: &Path, columns: &[String]) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["draw".to_string(), "logpost".to_string()];
        header.extend(columns.iter().cloned());
        w.write_record(&header)?;
        for (i, (x, lp)) in self.samples.iter().zip(&self.log_posts).enumerate() {
            Error::check_len("sample row", columns.len(), x.len())?;
            let mut row = vec![i.to_string(), lp.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Draws and log densities read back from a samples CSV.
pub fn read_samples_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>, Vec<f64>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 2 || &header[0] != "draw" || &header[1] != "logpost" {
        return Err(Error::Data(format!("{} is not a samples file", path.display())));
    }
    let columns = header.iter().skip(2).map(str::to_string).collect();
    let mut draws = Vec::new();
    let mut lps = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Data(format!("bad number `{s}` in {}", path.display())))
        };
        lps.push(parse(&rec[1])?);
        draws.push(rec.iter().skip(2).map(parse).collect::<Result<Vec<_>>>()?);
    }
    Ok((columns, draws, lps))
}

/// A log density divided by a temperature. Sentinel values pass through.
pub struct Tempered<T> {
    pub inner: T,
    pub temperature: f64,
}

impl<T: LogDensity> LogDensity for Tempered<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let v = self.inner.log_density(x);
        if v <= LOG_DENSITY_SENTINEL {
            v
        } else {
            v / self.temperature
        }
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let v = self.inner.log_density_grad(x, grad);
        if v <= LOG_DENSITY_SENTINEL {
            return v;
        }
        grad.iter_mut().for_each(|g| *g /= self.temperature);
        v / self.temperature
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WarmStartConfig {
    /// Budget, learning rate and seed of the short optimization; the penalty
    /// and split settings are not used.
    pub fit: FitConfig,
    /// Prior draws to optimize from; the lowest full negLL wins.
    pub starts: usize,
    pub net_init: NetInit,
}

impl Default for WarmStartConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig {
                adam_epochs: 500,
                qn_max_iters: 100,
                ..FitConfig::default()
            },
            starts: 4,
            net_init: NetInit::default(),
        }
    }
}

/// Sampler starting point: a short MAP optimization (ADAM, then BFGS on the
/// negative log posterior) from each of a few prior draws, keeping the highest
/// log posterior. A single draw can start in a basin the optimizer never
/// leaves.
pub fn warm_start(model: &LikelihoodModel, cfg: &WarmStartConfig) -> Result<Vec<f64>> {
    if cfg.starts == 0 {
        return Err(Error::Config("warm start needs at least one start".into()));
    }
    cfg.fit.validate()?;
    let objective = |theta: &[f64]| -> Evaluation {
        let mut grad = vec![0.0; theta.len()];
        let lp = model.log_posterior_grad(theta, &mut grad);
        if !(lp > LOG_DENSITY_SENTINEL) {
            return None;
        }
        grad.iter_mut().for_each(|g| *g = -*g);
        Some((-lp, grad))
    };
    let starts = sample_start_points(model.space(), &model.problem().mlp, cfg.starts, cfg.fit.seed, cfg.net_init)?;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in &starts {
        let mut keep = |theta: &[f64], value: f64| {
            if best.as_ref().is_none_or(|(b, _)| value < *b) {
                best = Some((value, theta.to_vec()));
            }
        };
        let adam = adam_run(
            objective,
            start,
            cfg.fit.adam_epochs,
            AdamConfig {
                lr: cfg.fit.adam_lr,
                ..Default::default()
            },
            &mut keep,
        );
        if adam.stop == StopReason::FailedStart {
            continue;
        }
        let qn = QuasiNewtonConfig {
            max_iters: cfg.fit.qn_max_iters,
            ..Default::default()
        };
        bfgs_run(objective, &adam.x, qn, &mut keep);
    }
    best.map(|(_, theta)| theta)
        .ok_or_else(|| Error::Initialization("no warm-start draw reached a finite log posterior".into()))
}
