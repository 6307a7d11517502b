//! Multistart ensembles with likelihood-ratio member selection.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};
use crate::likelihood::LikelihoodModel;
use crate::model::{MlpSpec, NetInit, ParamSpace, SegmentRole};
use crate::optimize::{fit_single, FitConfig, FitResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    /// Number of starts.
    pub m: usize,
    pub alpha: f64,
    pub df: usize,
    pub net_init: NetInit,
    /// Per-member schedule; its seed is the base seed.
    pub fit: FitConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            m: 100,
            alpha: 0.05,
            df: 1,
            net_init: NetInit::default(),
            fit: FitConfig::default(),
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("an ensemble needs at least one start".into()));
        }
        check_alpha_df(self.alpha, self.df)?;
        self.fit.validate()
    }
}

fn check_alpha_df(alpha: f64, df: usize) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) || df == 0 {
        return Err(Error::Config(format!(
            "significance level must lie in (0, 1) and df be positive, got alpha={alpha}, df={df}"
        )));
    }
    Ok(())
}

/// Draw `m` starting points. Member `i` uses seed `seed + i`: mechanistic and
/// noise entries come from their start distribution (the prior unless the
/// segment overrides it), network entries from `mlp.init`.
pub fn sample_start_points(
    space: &ParamSpace,
    mlp: &MlpSpec,
    m: usize,
    seed: u64,
    net_init: NetInit,
) -> Result<Vec<Vec<f64>>> {
    (0..m as u64)
        .map(|i| {
            let member_seed = seed.wrapping_add(i);
            let mut rng = ChaCha8Rng::seed_from_u64(member_seed);
            let mut theta = vec![0.0; space.total_dim()];
            for (seg, range) in space.iter() {
                if seg.role == SegmentRole::Network {
                    Error::check_len("network segment", mlp.n_params(), range.len())?;
                    theta[range].copy_from_slice(&mlp.init(member_seed, net_init));
                    continue;
                }
                let dist = seg.start.unwrap_or(seg.prior);
                for x in &mut theta[range] {
                    *x = dist.sample_raw(&seg.transform, &mut rng);
                }
            }
            Ok(theta)
        })
        .collect()
}

/// Fit every start with `cfg`, member `i` using seed `cfg.seed + i`. Results
/// come back in start order whatever the scheduling.
pub fn run_multistart(
    model: &LikelihoodModel,
    starts: &[Vec<f64>],
    cfg: &FitConfig,
    parallelism: usize,
) -> Result<Vec<FitResult>> {
    cfg.validate()?;
    for s in starts {
        Error::check_len("start point", model.n_params(), s.len())?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    pool.install(|| {
        starts
            .par_iter()
            .enumerate()
            .map(|(i, start)| {
                let member = FitConfig {
                    seed: cfg.seed.wrapping_add(i as u64),
                    ..cfg.clone()
                };
                fit_single(model, &member, start)
            })
            .collect()
    })
}

/// Upper `alpha` quantile of χ²(df), i.e. the (1 − alpha) quantile, found by
/// inverting the regularized lower incomplete gamma function.
pub fn chi2_quantile(alpha: f64, df: usize) -> Result<f64> {
    check_alpha_df(alpha, df)?;
    let k = df as f64 / 2.0;
    let target = 1.0 - alpha;
    let cdf = |x: f64| gamma_lr(k, x / 2.0);
    let mut hi = df as f64 + 10.0;
    while cdf(hi) < target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Fits together with the likelihood-ratio acceptance decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub fits: Vec<FitResult>,
    pub mle_index: usize,
    pub threshold: f64,
    pub accepted: Vec<bool>,
    pub alpha: f64,
    pub df: usize,
}

/// Summary written next to the member list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub threshold: f64,
    pub alpha: f64,
    pub df: usize,
    pub mle_index: usize,
    pub mle_negll: f64,
    pub accepted: Vec<usize>,
    pub n_fits: usize,
}

impl Ensemble {
    /// Likelihood-ratio statistic of every fit against the best one.
    pub fn statistics(&self) -> Vec<f64> {
        let best = self.fits[self.mle_index].negll_full;
        self.fits.iter().map(|f| 2.0 * (f.negll_full - best)).collect()
    }

    pub fn accepted_indices(&self) -> Vec<usize> {
        (0..self.fits.len()).filter(|&i| self.accepted[i]).collect()
    }

    pub fn accepted_fits(&self) -> impl Iterator<Item = &FitResult> {
        self.fits.iter().zip(&self.accepted).filter(|(_, a)| **a).map(|(f, _)| f)
    }

    /// Parameter vectors of the accepted members.
    pub fn draws(&self) -> Vec<Vec<f64>> {
        self.accepted_fits().map(|f| f.theta_best_raw.clone()).collect()
    }

    pub fn summary(&self) -> EnsembleSummary {
        EnsembleSummary {
            threshold: self.threshold,
            alpha: self.alpha,
            df: self.df,
            mle_index: self.mle_index,
            mle_negll: self.fits[self.mle_index].negll_full,
            accepted: self.accepted_indices(),
            n_fits: self.fits.len(),
        }
    }

    /// Write `members.jsonl`, `ensemble.json` and `waterfall.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("members.jsonl");
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = BufWriter::new(file);
        for fit in &self.fits {
            serde_json::to_writer(&mut w, fit)?;
            w.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("ensemble.json");
        let text = serde_json::to_string_pretty(&self.summary())?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;

        write_waterfall(&dir.join("waterfall.csv"), &self.fits)
    }

    /// Read back an ensemble written by [`Ensemble::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("members.jsonl");
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut fits = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(&path, e))?;
            if !line.trim().is_empty() {
                fits.push(serde_json::from_str(&line)?);
            }
        }
        let path = dir.join("ensemble.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let summary: EnsembleSummary = serde_json::from_str(&text)?;
        let mut ens = select_members(fits, summary.alpha, summary.df)?;
        // keep the stored decision even if thresholds were computed differently
        ens.accepted = (0..ens.fits.len()).map(|i| summary.accepted.contains(&i)).collect();
        Ok(ens)
    }
}

/// Accept every fit whose likelihood-ratio statistic against the best fit is
/// within the χ²(df) quantile at level `alpha`.
pub fn select_members(fits: Vec<FitResult>, alpha: f64, df: usize) -> Result<Ensemble> {
    let threshold = chi2_quantile(alpha, df)?;
    let mle_index = fits
        .iter()
        .enumerate()
        .filter(|(_, f)| !f.is_sentinel() && f.negll_full.is_finite())
        .min_by(|a, b| a.1.negll_full.total_cmp(&b.1.negll_full))
        .map(|(i, _)| i)
        .ok_or(Error::EmptyEnsemble)?;
    let best = fits[mle_index].negll_full;
    let accepted = fits
        .iter()
        .enumerate()
        .map(|(i, f)| {
            i == mle_index
                || (!f.is_sentinel() && f.negll_full.is_finite() && 2.0 * (f.negll_full - best) <= threshold)
        })
        .collect();
    Ok(Ensemble {
        fits,
        mle_index,
        threshold,
        accepted,
        alpha,
        df,
    })
}

/// Sorted negLLs shifted by the minimum, as (rank, value) pairs. Ranks start
/// at 1. Fits without a finite likelihood sort last.
pub fn waterfall(fits: &[FitResult]) -> Vec<(usize, f64)> {
    let mut v: Vec<f64> = fits.iter().map(|f| f.negll_full).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    let min = v.first().copied().unwrap_or(0.0);
    v.into_iter().enumerate().map(|(i, x)| (i + 1, x - min)).collect()
}

fn write_waterfall(path: &Path, fits: &[FitResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rank", "delta_negll"])?;
    for (rank, delta) in waterfall(fits) {
        w.write_record([rank.to_string(), delta.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Draw starts, fit them all and select members.
pub fn build_ensemble(model: &LikelihoodModel, cfg: &EnsembleConfig, parallelism: usize) -> Result<Ensemble> {
    cfg.validate()?;
    let starts = sample_start_points(model.space(), &model.problem().mlp, cfg.m, cfg.fit.seed, cfg.net_init)?;
    let fits = run_multistart(model, &starts, &cfg.fit, parallelism)?;
    select_members(fits, cfg.alpha, cfg.df)
}
