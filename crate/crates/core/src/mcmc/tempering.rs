//! Replica-exchange NUTS with deterministic even/odd swap rounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::nuts::{Chain, NutsConfig, State};
use super::{AcceptanceStats, ChainResult, Tempered};
use crate::error::{Error, Result};
use crate::target::LogDensity;

/// `n` temperatures from 1 to `t_max`, evenly spaced in log scale.
pub fn geometric_ladder(n: usize, t_max: f64) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..n)
            .map(|i| t_max.powf(i as f64 / (n - 1) as f64))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PtConfig {
    pub temperatures: Vec<f64>,
    /// Kernel settings shared by all rungs; warmup and sample counts are in
    /// sweeps.
    pub nuts: NutsConfig,
}

impl Default for PtConfig {
    fn default() -> Self {
        Self {
            temperatures: geometric_ladder(8, 30.0),
            nuts: NutsConfig::default(),
        }
    }
}

impl PtConfig {
    pub fn validate(&self) -> Result<()> {
        self.nuts.validate()?;
        let t = &self.temperatures;
        if t.first() != Some(&1.0) || t.windows(2).any(|w| !(w[1] > w[0])) || t.iter().any(|x| !x.is_finite()) {
            return Err(Error::Config(format!(
                "temperatures must start at 1 and increase strictly, got {t:?}"
            )));
        }
        Ok(())
    }
}

/// Ladder with the swap statistics of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtLadder {
    pub temperatures: Vec<f64>,
    /// Swaps are proposed after every sweep, alternating even and odd pairs.
    pub swap_schedule: String,
    /// Per adjacent pair (k, k+1): proposed swaps.
    pub swap_attempts: Vec<usize>,
    /// Per adjacent pair (k, k+1): accepted swaps.
    pub swap_accepts: Vec<usize>,
}

impl PtLadder {
    pub fn swap_rates(&self) -> Vec<f64> {
        self.swap_attempts
            .iter()
            .zip(&self.swap_accepts)
            .map(|(&n, &a)| if n == 0 { f64::NAN } else { a as f64 / n as f64 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtResult {
    /// Draws of the unit-temperature rung.
    pub chain: ChainResult,
    pub ladder: PtLadder,
    /// Mean NUTS acceptance statistic per rung over the sampling sweeps.
    pub rung_accept: Vec<f64>,
    /// Mean squared distance moved per sweep, per rung, over the sampling
    /// sweeps (swaps included).
    pub rung_jump: Vec<f64>,
}

/// Parallel tempering with a NUTS kernel on each rung of `target^(1/T)`.
/// Only the T = 1 chain is returned.
pub fn parallel_tempering<T: LogDensity>(
    target: &T,
    theta0: &[f64],
    cfg: &PtConfig,
    parallelism: usize,
) -> Result<PtResult> {
    cfg.validate()?;
    let temps = &cfg.temperatures;
    let targets: Vec<Tempered<&T>> = temps
        .iter()
        .map(|&t| Tempered {
            inner: target,
            temperature: t,
        })
        .collect();
    let mut chains = targets
        .iter()
        .enumerate()
        .map(|(k, tg)| Chain::new(tg, theta0, &cfg.nuts, k as u64))
        .collect::<Result<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let mut swap_rng = ChaCha8Rng::seed_from_u64(cfg.nuts.seed);
    swap_rng.set_stream(u64::MAX);

    let n_pairs = temps.len().saturating_sub(1);
    let mut ladder = PtLadder {
        temperatures: temps.clone(),
        swap_schedule: "every_sweep".into(),
        swap_attempts: vec![0; n_pairs],
        swap_accepts: vec![0; n_pairs],
    };
    let mut result = ChainResult::empty(0, 1.0);
    let mut acc = AcceptanceStats::default();
    let mut rung_accept = vec![0.0; temps.len()];
    let mut rung_jump = vec![0.0; temps.len()];
    if cfg.nuts.n_samples == 0 {
        return Ok(PtResult {
            chain: result,
            ladder,
            rung_accept,
            rung_jump,
        });
    }

    let sweeps = cfg.nuts.n_warmup + cfg.nuts.n_samples;
    for sweep in 0..sweeps {
        let sampling = sweep >= cfg.nuts.n_warmup;
        let before: Vec<Vec<f64>> = chains.iter().map(|c| c.state.q.clone()).collect();
        let infos: Vec<_> = pool.install(|| {
            chains
                .par_iter_mut()
                .zip(targets.par_iter())
                .map(|(c, tg)| c.step(tg))
                .collect()
        });

        for k in (sweep % 2..n_pairs).step_by(2) {
            ladder.swap_attempts[k] += 1;
            let (ta, tb) = (temps[k], temps[k + 1]);
            let ua = chains[k].state.logp * ta;
            let ub = chains[k + 1].state.logp * tb;
            let log_r = (1.0 / ta - 1.0 / tb) * (ub - ua);
            if swap_rng.random::<f64>().ln() < log_r {
                ladder.swap_accepts[k] += 1;
                let sa = chains[k].state.clone();
                let sb = chains[k + 1].state.clone();
                chains[k].set_state(retemper(sb, tb, ta));
                chains[k + 1].set_state(retemper(sa, ta, tb));
            }
        }

        if sampling {
            for (k, c) in chains.iter().enumerate() {
                rung_accept[k] += infos[k].accept_stat;
                rung_jump[k] += c.state.q.iter().zip(&before[k]).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
            acc.record(&infos[0]);
            if infos[0].divergent {
                result.divergence_count += 1;
            }
            let s = &chains[0].state;
            result.samples.push(s.q.clone());
            result.log_posts.push(s.logp);
        }
    }
    let n = cfg.nuts.n_samples as f64;
    rung_accept.iter_mut().for_each(|v| *v /= n);
    rung_jump.iter_mut().for_each(|v| *v /= n);
    acc.finish(cfg.nuts.n_samples, chains[0].kernel.step, &chains[0].kernel.minv);
    result.acceptance_stats = acc;
    Ok(PtResult {
        chain: result,
        ladder,
        rung_accept,
        rung_jump,
    })
}

/// State evaluated at temperature `from`, re-expressed at temperature `to`.
fn retemper(mut s: State, from: f64, to: f64) -> State {
    let f = from / to;
    s.logp *= f;
    s.grad.iter_mut().for_each(|g| *g *= f);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_shape() {
        let t = geometric_ladder(8, 30.0);
        assert_eq!(t.len(), 8);
        assert_eq!(t[0], 1.0);
        assert!((t[7] - 30.0).abs() < 1e-12);
        let r = t[1] / t[0];
        assert!(t.windows(2).all(|w| (w[1] / w[0] - r).abs() < 1e-12));
        assert_eq!(geometric_ladder(1, 30.0), vec![1.0]);
    }

    #[test]
    fn invalid_ladders_rejected() {
        for temps in [vec![], vec![2.0, 3.0], vec![1.0, 1.0], vec![1.0, 3.0, 2.0]] {
            let cfg = PtConfig {
                temperatures: temps,
                ..Default::default()
            };
            assert!(cfg.validate().is_err());
        }
    }
}
