use rand::Rng;
use rand_distr::{Beta, Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};
use crate::model::Transform;

/// Finite stand-in for log(0): out-of-support priors and failed simulations.
pub const LOG_DENSITY_SENTINEL: f64 = -1e10;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorKind {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    Beta { a: f64, b: f64 },
    /// Zero-mean normal with the same standard deviation in every entry.
    IsotropicNormal { sd: f64 },
}

/// Which scale a prior density is declared on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorScale {
    Raw,
    Natural,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    #[serde(flatten)]
    pub kind: PriorKind,
    pub applies_on: PriorScale,
}

impl PriorSpec {
    pub fn raw(kind: PriorKind) -> Self {
        Self {
            kind,
            applies_on: PriorScale::Raw,
        }
    }

    pub fn natural(kind: PriorKind) -> Self {
        Self {
            kind,
            applies_on: PriorScale::Natural,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            PriorKind::Normal { sd, mean } => sd > 0.0 && mean.is_finite(),
            PriorKind::IsotropicNormal { sd } => sd > 0.0,
            PriorKind::Uniform { lo, hi } => lo < hi,
            PriorKind::LogUniform { lo, hi } => lo > 0.0 && lo < hi,
            PriorKind::Beta { a, b } => a > 0.0 && b > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid prior parameters {:?}", self.kind)))
        }
    }

    /// Log density and its derivative at `x` on the declared scale. `None`
    /// when `x` lies outside the support.
    pub fn log_density(&self, x: f64) -> Option<(f64, f64)> {
        match self.kind {
            PriorKind::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                Some((-LN_SQRT_2PI - sd.ln() - 0.5 * z * z, -z / sd))
            }
            PriorKind::IsotropicNormal { sd } => {
                let z = x / sd;
                Some((-LN_SQRT_2PI - sd.ln() - 0.5 * z * z, -z / sd))
            }
            PriorKind::Uniform { lo, hi } => {
                (lo..=hi).contains(&x).then(|| (-(hi - lo).ln(), 0.0))
            }
            PriorKind::LogUniform { lo, hi } => (lo..=hi)
                .contains(&x)
                .then(|| (-x.ln() - (hi / lo).ln().ln(), -1.0 / x)),
            PriorKind::Beta { a, b } => (x > 0.0 && x < 1.0).then(|| {
                (
                    (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta(a, b),
                    (a - 1.0) / x - (b - 1.0) / (1.0 - x),
                )
            }),
        }
    }

    /// Log density of the raw value, including the change of variables when
    /// the prior is declared on the natural scale. Returns value and
    /// derivative with respect to raw.
    pub fn log_density_raw(&self, transform: &Transform, raw: f64) -> Option<(f64, f64)> {
        match self.applies_on {
            PriorScale::Raw => self.log_density(raw),
            PriorScale::Natural => {
                let natural = transform.to_natural(raw);
                let (lp, dlp) = self.log_density(natural)?;
                Some((
                    lp + transform.log_abs_derivative(raw),
                    dlp * transform.derivative(raw) + transform.log_abs_derivative_grad(raw),
                ))
            }
        }
    }

    /// One draw on the declared scale.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            PriorKind::Normal { mean, sd } => Normal::new(mean, sd).expect("validated").sample(rng),
            PriorKind::IsotropicNormal { sd } => {
                Normal::new(0.0, sd).expect("validated").sample(rng)
            }
            PriorKind::Uniform { lo, hi } => rng.random_range(lo..hi),
            PriorKind::LogUniform { lo, hi } => rng.random_range(lo.ln()..hi.ln()).exp(),
            PriorKind::Beta { a, b } => Beta::new(a, b).expect("validated").sample(rng),
        }
    }

    /// One draw mapped onto the raw scale. Natural-scale draws that land on a
    /// transform bound through rounding are nudged inside.
    pub fn sample_raw<R: Rng + ?Sized>(&self, transform: &Transform, rng: &mut R) -> f64 {
        let x = self.sample(rng);
        match self.applies_on {
            PriorScale::Raw => x,
            PriorScale::Natural => {
                let (lo, hi) = transform.bounds();
                let span = if (hi - lo).is_finite() { hi - lo } else { 1.0 };
                let eps = 1e-12 * span;
                let clamped = x.clamp(lo + eps, hi - eps);
                transform
                    .to_raw(clamped)
                    .expect("clamped value lies inside the transform image")
            }
        }
    }
}
