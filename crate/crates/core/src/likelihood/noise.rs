//! Observation noise models and their negative log-likelihoods.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    #[serde(rename = "negbin")]
    NegBin,
}

/// Noise model with its natural parameter: standard deviation σ for
/// Gaussian noise, dispersion d (variance d·μ) for negative binomial counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Gaussian { sigma: f64 },
    #[serde(rename = "negbin")]
    NegBin { dispersion: f64 },
}

impl NoiseModel {
    pub fn kind(&self) -> NoiseKind {
        match self {
            NoiseModel::Gaussian { .. } => NoiseKind::Gaussian,
            NoiseModel::NegBin { .. } => NoiseKind::NegBin,
        }
    }

    pub fn parameter(&self) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } => sigma,
            NoiseModel::NegBin { dispersion } => dispersion,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                Error::Domain(format!("Gaussian standard deviation must be positive, got {sigma}")),
            ),
            NoiseModel::NegBin { dispersion } if !(dispersion > 1.0 && dispersion.is_finite()) => {
                Err(Error::Domain(format!(
                    "negative binomial dispersion must exceed 1, got {dispersion}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Summed negative log-likelihood of `obs` given predicted means.
    pub fn negll(&self, pred: &[f64], obs: &[f64]) -> Result<f64> {
        match *self {
            NoiseModel::Gaussian { sigma } => negll_gaussian(pred, obs, sigma),
            NoiseModel::NegBin { dispersion } => negll_negbin(pred, obs, dispersion),
        }
    }

    /// One noisy observation around `mean`.
    pub fn sample<R: Rng + ?Sized>(&self, mean: f64, rng: &mut R) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } => {
                mean + sigma * Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
            }
            NoiseModel::NegBin { dispersion } => sample_negbin(mean, dispersion, rng),
        }
    }
}

fn check_shapes(pred: &[f64], obs: &[f64]) -> Result<()> {
    Error::check_len("observations", pred.len(), obs.len())
}

pub fn negll_gaussian(pred: &[f64], obs: &[f64], sigma: f64) -> Result<f64> {
    NoiseModel::Gaussian { sigma }.validate()?;
    check_shapes(pred, obs)?;
    let norm = 0.5 * (LN_2PI + 2.0 * sigma.ln());
    let inv = 0.5 / (sigma * sigma);
    Ok(pred
        .iter()
        .zip(obs)
        .map(|(p, y)| norm + (y - p) * (y - p) * inv)
        .sum())
}

/// Gaussian negLL with derivatives with respect to each prediction and σ.
pub fn negll_gaussian_grad(pred: &[f64], obs: &[f64], sigma: f64) -> Result<(f64, Vec<f64>, f64)> {
    let value = negll_gaussian(pred, obs, sigma)?;
    let s2 = sigma * sigma;
    let mut d_sigma = 0.0;
    let d_pred = pred
        .iter()
        .zip(obs)
        .map(|(p, y)| {
            let r = y - p;
            d_sigma += 1.0 / sigma - r * r / (s2 * sigma);
            -r / s2
        })
        .collect();
    Ok((value, d_pred, d_sigma))
}

/// Negative log-pmf of count `k` under mean `mu` and success probability
/// `q = 1/d`, with derivatives in `mu` and `q`.
pub fn negbin_term(k: f64, mu: f64, q: f64) -> Result<(f64, f64, f64)> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::SimulationFailure(format!(
            "negative binomial mean must be positive, got {mu}"
        )));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("success probability {q} outside (0, 1)")));
    }
    if !(k >= 0.0 && k.fract() == 0.0) {
        return Err(Error::Data(format!("count observation {k} is not a non-negative integer")));
    }
    let one_m_q = 1.0 - q;
    let r = mu * q / one_m_q;
    let value = -ln_gamma(k + r) + ln_gamma(r) + ln_gamma(k + 1.0) - r * q.ln() - k * one_m_q.ln();
    let d_r = -digamma(k + r) + digamma(r) - q.ln();
    let d_mu = d_r * q / one_m_q;
    let d_q = d_r * mu / (one_m_q * one_m_q) - r / q + k / one_m_q;
    Ok((value, d_mu, d_q))
}

pub fn negll_negbin(pred: &[f64], obs: &[f64], dispersion: f64) -> Result<f64> {
    NoiseModel::NegBin { dispersion }.validate()?;
    check_shapes(pred, obs)?;
    let q = 1.0 / dispersion;
    pred.iter()
        .zip(obs)
        .map(|(&mu, &k)| negbin_term(k, mu, q).map(|t| t.0))
        .sum()
}

/// NegBin negLL with derivatives with respect to each mean and to q = 1/d.
pub fn negll_negbin_grad(pred: &[f64], obs: &[f64], q: f64) -> Result<(f64, Vec<f64>, f64)> {
    check_shapes(pred, obs)?;
    let mut value = 0.0;
    let mut d_q = 0.0;
    let mut d_pred = Vec::with_capacity(pred.len());
    for (&mu, &k) in pred.iter().zip(obs) {
        let (v, dm, dq) = negbin_term(k, mu, q)?;
        value += v;
        d_q += dq;
        d_pred.push(dm);
    }
    Ok((value, d_pred, d_q))
}

/// Gamma–Poisson mixture draw with mean `mu` and variance `d·mu`.
pub fn sample_negbin<R: Rng + ?Sized>(mu: f64, dispersion: f64, rng: &mut R) -> f64 {
    if !(mu > 0.0) {
        return 0.0;
    }
    let shape = mu / (dispersion - 1.0);
    let scale = dispersion - 1.0;
    let lambda = Gamma::new(shape, scale).expect("positive shape and scale").sample(rng);
    if !(lambda > 0.0) {
        return 0.0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng)
}
