//! Rank-normalized split-R̂ and bulk effective sample size.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::ChainResult;
use crate::error::{Error, Result};

/// Per-dimension convergence summary over a set of chains. Dimensions where
/// every draw is identical report NaN for both R̂ and ESS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub n_chains: usize,
    pub n_draws: usize,
    pub rhat: Vec<f64>,
    pub ess_bulk: Vec<f64>,
    pub divergences: Vec<usize>,
}

impl ChainDiagnostics {
    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().filter(|r| !r.is_nan()).fold(f64::NAN, f64::max)
    }

    pub fn min_ess(&self) -> f64 {
        self.ess_bulk.iter().copied().filter(|r| !r.is_nan()).fold(f64::NAN, f64::min)
    }
}

pub fn chain_diagnostics(chains: &[ChainResult]) -> Result<ChainDiagnostics> {
    let first = chains
        .first()
        .ok_or_else(|| Error::Contract("diagnostics need at least one chain".into()))?;
    let n = first.len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::Contract("chains have different lengths".into()));
    }
    let dim = first.samples.first().map_or(0, Vec::len);
    let mut rhat = Vec::with_capacity(dim);
    let mut ess = Vec::with_capacity(dim);
    for d in 0..dim {
        let draws: Vec<Vec<f64>> = chains.iter().map(|c| c.samples.iter().map(|x| x[d]).collect()).collect();
        rhat.push(rank_rhat(&draws));
        ess.push(ess_bulk(&draws));
    }
    Ok(ChainDiagnostics {
        n_chains: chains.len(),
        n_draws: n,
        rhat,
        ess_bulk: ess,
        divergences: chains.iter().map(|c| c.divergence_count).collect(),
    })
}

/// Split each chain in half (dropping the middle draw of odd lengths).
fn split(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let half = c.len() / 2;
        out.push(c[..half].to_vec());
        out.push(c[c.len() - half..].to_vec());
    }
    out
}

/// Normal scores of the pooled ranks, with average ranks for ties.
fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut pooled: Vec<(f64, usize, usize)> = Vec::new();
    for (c, chain) in chains.iter().enumerate() {
        pooled.extend(chain.iter().enumerate().map(|(i, &x)| (x, c, i)));
    }
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = pooled.len() as f64;
    let normal = Normal::standard();
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1].0 == pooled[i].0 {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let z = normal.inverse_cdf((rank - 0.375) / (s + 0.25));
        for &(_, c, k) in &pooled[i..=j] {
            out[c][k] = z;
        }
        i = j + 1;
    }
    out
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Classic R̂ of (already split) chains.
fn basic_rhat(chains: &[Vec<f64>]) -> f64 {
    let n = chains[0].len() as f64;
    if chains.len() < 2 || n < 2.0 {
        return f64::NAN;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let b = n * var(&means);
    let w = mean(&chains.iter().map(|c| var(c)).collect::<Vec<_>>());
    if !(w > 0.0) {
        return f64::NAN;
    }
    (((n - 1.0) / n * w + b / n) / w).sqrt()
}

fn is_constant(chains: &[Vec<f64>]) -> bool {
    let first = chains.iter().flatten().next();
    first.is_none_or(|f| chains.iter().flatten().all(|x| x == f))
}

/// Maximum of the rank-normalized split-R̂ of the draws and of their
/// distance to the median.
pub(crate) fn rank_rhat(chains: &[Vec<f64>]) -> f64 {
    if is_constant(chains) {
        return f64::NAN;
    }
    let s = split(chains);
    let bulk = basic_rhat(&rank_normalize(&s));
    let mut all: Vec<f64> = chains.iter().flatten().copied().collect();
    let med = crate::stats::quantile(&mut all, 0.5);
    let folded: Vec<Vec<f64>> = s.iter().map(|c| c.iter().map(|x| (x - med).abs()).collect()).collect();
    let tail = basic_rhat(&rank_normalize(&folded));
    bulk.max(tail)
}

/// Bulk ESS: ESS of the rank-normalized split chains.
pub(crate) fn ess_bulk(chains: &[Vec<f64>]) -> f64 {
    if is_constant(chains) {
        return f64::NAN;
    }
    ess(&rank_normalize(&split(chains)))
}

fn autocovariance(x: &[f64], lag: usize) -> f64 {
    let m = mean(x);
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Multi-chain ESS with Geyer's initial monotone sequence.
fn ess(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len() as f64;
    let n = chains[0].len();
    if n < 4 {
        return f64::NAN;
    }
    let nf = n as f64;
    let acov0: Vec<f64> = chains.iter().map(|c| autocovariance(c, 0)).collect();
    let chain_var: Vec<f64> = acov0.iter().map(|a| a * nf / (nf - 1.0)).collect();
    let mean_var = mean(&chain_var);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if chains.len() > 1 {
        let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
        var_plus += var(&means);
    }
    if !(var_plus > 0.0) {
        return f64::NAN;
    }
    let rho = |t: usize| -> f64 {
        let a = mean(&chains.iter().map(|c| autocovariance(c, t)).collect::<Vec<_>>());
        1.0 - (mean_var - a) / var_plus
    };
    let mut rhos = vec![1.0, rho(1)];
    let mut t = 1;
    // pairs (rho[t-1] + rho[t]) while positive
    while t + 2 < n {
        let even = rho(t + 1);
        let odd = rho(t + 2);
        if even + odd <= 0.0 {
            break;
        }
        rhos.push(even);
        rhos.push(odd);
        t += 2;
    }
    let max_t = rhos.len() - 1;
    // make the sequence of pair sums monotone
    let mut k = 2;
    while k + 1 <= max_t {
        let prev = rhos[k - 2] + rhos[k - 1];
        if rhos[k] + rhos[k + 1] > prev {
            rhos[k] = prev / 2.0;
            rhos[k + 1] = prev / 2.0;
        }
        k += 2;
    }
    let tau = -1.0 + 2.0 * rhos.iter().take(max_t + 1).sum::<f64>();
    let tau = tau.max(1.0 / (m * nf).log10());
    m * nf / tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_chains(n_chains: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_chains)
            .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn iid_chains_have_rhat_near_one_and_full_ess() {
        let c = normal_chains(4, 1000, 3);
        let r = rank_rhat(&c);
        assert!((0.99..=1.01).contains(&r), "{r}");
        let e = ess_bulk(&c);
        assert!(e > 3000.0 && e < 5000.0, "{e}");
    }

    #[test]
    fn autocorrelated_chain_has_small_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = 0.0;
        let chain: Vec<f64> = (0..4000)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = 0.9 * x + e;
                x
            })
            .collect();
        // AR(1) with phi = 0.9: ESS/N = (1 - phi) / (1 + phi)
        let e = ess_bulk(&[chain]);
        let expected = 4000.0 * 0.1 / 1.9;
        assert!((e / expected - 1.0).abs() < 0.35, "{e} vs {expected}");
    }

    #[test]
    fn offset_chain_is_flagged() {
        let mut c = normal_chains(2, 1000, 4);
        c[1].iter_mut().for_each(|x| *x += 10.0);
        assert!(rank_rhat(&c) > 1.2);
    }

    #[test]
    fn constant_chains_give_nan() {
        let c = vec![vec![2.0; 100], vec![2.0; 100]];
        assert!(rank_rhat(&c).is_nan());
        assert!(ess_bulk(&c).is_nan());
    }
}
