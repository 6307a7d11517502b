use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::sample_start_points;
use crate::error::{Error, Result};
use crate::likelihood::dataset::generate_custom_dataset;
use crate::likelihood::LikelihoodModel;
use crate::model::NetInit;
use crate::optimize::{fit_single, FitConfig};

/// Error terms at one (time, observable) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceRow {
    pub t: f64,
    pub state: String,
    pub bias2: f64,
    pub variance: f64,
    pub noise: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasVarianceReport {
    pub rows: Vec<BiasVarianceRow>,
    /// Point averages of the row terms.
    pub bias2: f64,
    pub variance: f64,
    pub noise: f64,
    pub mse: f64,
    pub n_replicates: usize,
    pub failed_replicates: Vec<usize>,
}

impl BiasVarianceReport {
    /// |bias² + variance + noise − MSE| / MSE.
    pub fn relative_gap(&self) -> f64 {
        (self.bias2 + self.variance + self.noise - self.mse).abs() / self.mse
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "state", "bias2", "variance", "noise", "mse"])?;
        for r in &self.rows {
            w.write_record([
                r.t.to_string(),
                r.state.clone(),
                r.bias2.to_string(),
                r.variance.to_string(),
                r.noise.to_string(),
                r.mse.to_string(),
            ])?;
        }
        w.write_record([
            String::new(),
            "total".to_string(),
            self.bias2.to_string(),
            self.variance.to_string(),
            self.noise.to_string(),
            self.mse.to_string(),
        ])?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Decompose the error of replicate predictions against the truth `f`.
///
/// `predictions[r]`, `train_obs[r]` and `fresh_obs[r]` hold replicate `r` at
/// every point of `labels`. Bias and variance use population moments over
/// replicates, the noise term is the mean of (y − f)² over the training
/// observations and the MSE compares predictions with independent
/// observations.
pub fn bias_variance(
    labels: &[(f64, String)],
    truth: &[f64],
    predictions: &[Vec<f64>],
    train_obs: &[Vec<f64>],
    fresh_obs: &[Vec<f64>],
) -> Result<BiasVarianceReport> {
    let n_rep = predictions.len();
    if n_rep == 0 {
        return Err(Error::Contract("bias-variance needs at least one replicate".into()));
    }
    Error::check_len("truth", labels.len(), truth.len())?;
    Error::check_len("training replicates", n_rep, train_obs.len())?;
    Error::check_len("fresh replicates", n_rep, fresh_obs.len())?;
    for r in 0..n_rep {
        Error::check_len("replicate predictions", labels.len(), predictions[r].len())?;
        Error::check_len("replicate observations", labels.len(), train_obs[r].len())?;
        Error::check_len("replicate observations", labels.len(), fresh_obs[r].len())?;
    }
    let nr = n_rep as f64;
    let rows: Vec<BiasVarianceRow> = labels
        .iter()
        .enumerate()
        .map(|(p, (t, state))| {
            let f = truth[p];
            let m = predictions.iter().map(|y| y[p]).sum::<f64>() / nr;
            BiasVarianceRow {
                t: *t,
                state: state.clone(),
                bias2: (m - f).powi(2),
                variance: predictions.iter().map(|y| (y[p] - m).powi(2)).sum::<f64>() / nr,
                noise: train_obs.iter().map(|y| (y[p] - f).powi(2)).sum::<f64>() / nr,
                mse: predictions.iter().zip(fresh_obs).map(|(y, z)| (z[p] - y[p]).powi(2)).sum::<f64>() / nr,
            }
        })
        .collect();
    let np = rows.len().max(1) as f64;
    let avg = |g: fn(&BiasVarianceRow) -> f64| rows.iter().map(g).sum::<f64>() / np;
    Ok(BiasVarianceReport {
        bias2: avg(|r| r.bias2),
        variance: avg(|r| r.variance),
        noise: avg(|r| r.noise),
        mse: avg(|r| r.mse),
        rows,
        n_replicates: n_rep,
        failed_replicates: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasVarianceConfig {
    pub replicates: usize,
    /// Multistart fits per replicate; the best full-data fit is kept.
    pub starts_per_replicate: usize,
    pub fit: FitConfig,
    pub net_init: NetInit,
    pub seed: u64,
}

impl Default for BiasVarianceConfig {
    fn default() -> Self {
        Self {
            replicates: 50,
            starts_per_replicate: 4,
            fit: FitConfig {
                adam_epochs: 1000,
                qn_max_iters: 200,
                ..FitConfig::default()
            },
            net_init: NetInit::default(),
            seed: 0,
        }
    }
}

struct Replicate {
    prediction: Vec<f64>,
    train: Vec<f64>,
    fresh: Vec<f64>,
}

/// Regenerate the synthetic dataset of `model` under new noise seeds, refit
/// each replicate and decompose the prediction error at the observation
/// points. Each replicate keeps the best of `starts_per_replicate` fits, since
/// single starts from the prior occasionally diverge. Replicates without a
/// usable fit or whose fitted model cannot be simulated are dropped and listed
/// in the report.
pub fn bias_variance_study(model: &LikelihoodModel, cfg: &BiasVarianceConfig, parallelism: usize) -> Result<BiasVarianceReport> {
    cfg.fit.validate()?;
    if cfg.replicates == 0 || cfg.starts_per_replicate == 0 {
        return Err(Error::Config("bias-variance needs replicates and starts".into()));
    }
    let data = model.data();
    let gt = data
        .ground_truth
        .as_ref()
        .ok_or_else(|| Error::Unsupported("bias-variance needs a synthetic dataset with known truth".into()))?;
    let problem = model.problem();
    let names = &problem.state_names;
    let mut labels = Vec::new();
    let mut truth = Vec::new();
    for (t, x) in data.times.iter().zip(&gt.reference.states) {
        for &j in &problem.observed {
            labels.push((*t, names[j].clone()));
            truth.push(x[j]);
        }
    }

    let run = |r: usize| -> Result<Option<Replicate>> {
        let base = cfg.seed.wrapping_add(2 * r as u64);
        let train = generate_custom_dataset(data.scenario, data.noise, base)?;
        let fresh = generate_custom_dataset(data.scenario, data.noise, base.wrapping_add(1))?;
        let rep_model = LikelihoodModel::new(problem.clone(), model.space().clone(), train.clone(), model.solver().clone())?;
        // start and split seeds live past the data seeds, one block per replicate
        let fit_base = cfg
            .seed
            .wrapping_add(2 * cfg.replicates as u64)
            .wrapping_add((r * cfg.starts_per_replicate) as u64);
        let starts = sample_start_points(model.space(), &problem.mlp, cfg.starts_per_replicate, fit_base, cfg.net_init)?;
        let mut best: Option<crate::optimize::FitResult> = None;
        for (k, s) in starts.iter().enumerate() {
            let fit_cfg = FitConfig {
                seed: fit_base.wrapping_add(k as u64),
                ..cfg.fit.clone()
            };
            let fit = fit_single(&rep_model, &fit_cfg, s)?;
            if best.as_ref().map_or(true, |b| fit.negll_full < b.negll_full) {
                best = Some(fit);
            }
        }
        let best = best.expect("at least one start");
        if best.is_sentinel() {
            return Ok(None);
        }
        let traj = rep_model.simulate(&best.theta_best_raw)?;
        if !traj.success {
            return Ok(None);
        }
        let prediction = traj.states.iter().flat_map(|x| problem.observe(x)).collect();
        Ok(Some(Replicate {
            prediction,
            train: train.observations.concat(),
            fresh: fresh.observations.concat(),
        }))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let results: Vec<Result<Option<Replicate>>> = pool.install(|| (0..cfg.replicates).into_par_iter().map(run).collect());

    let mut preds = Vec::new();
    let mut trains = Vec::new();
    let mut freshes = Vec::new();
    let mut failed = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res? {
            Some(rep) => {
                preds.push(rep.prediction);
                trains.push(rep.train);
                freshes.push(rep.fresh);
            }
            None => failed.push(r),
        }
    }
    if preds.is_empty() {
        return Err(Error::AllSimulationsFailed(failed));
    }
    let mut report = bias_variance(&labels, &truth, &preds, &trains, &freshes)?;
    report.failed_replicates = failed;
    Ok(report)
}
