use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Elementwise map from the unconstrained (raw) optimization scale to the
/// natural parameter scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// natural = exp(raw)
    Log,
    /// natural = a·tanh(raw − c) + b, image (b − a, b + a)
    TanhBox { a: f64, b: f64, c: f64 },
}

impl Transform {
    /// Box with center offset fixed to zero.
    pub fn tanh_box(lower: f64, upper: f64) -> Self {
        Transform::TanhBox {
            a: 0.5 * (upper - lower),
            b: 0.5 * (upper + lower),
            c: 0.0,
        }
    }

    pub fn to_natural(&self, raw: f64) -> f64 {
        match *self {
            Transform::Identity => raw,
            Transform::Log => raw.exp(),
            Transform::TanhBox { a, b, c } => a * (raw - c).tanh() + b,
        }
    }

    pub fn to_raw(&self, natural: f64) -> Result<f64> {
        match *self {
            Transform::Identity => Ok(natural),
            Transform::Log => {
                if natural > 0.0 && natural.is_finite() {
                    Ok(natural.ln())
                } else {
                    Err(self.out_of_domain(natural))
                }
            }
            Transform::TanhBox { a, b, c } => {
                let z = (natural - b) / a;
                if z.abs() < 1.0 {
                    Ok(z.atanh() + c)
                } else {
                    Err(self.out_of_domain(natural))
                }
            }
        }
    }

    /// d natural / d raw.
    pub fn derivative(&self, raw: f64) -> f64 {
        match *self {
            Transform::Identity => 1.0,
            Transform::Log => raw.exp(),
            Transform::TanhBox { a, c, .. } => {
                let t = (raw - c).tanh();
                a * (1.0 - t * t)
            }
        }
    }

    /// log |d natural / d raw|, the change-of-variables correction for
    /// densities declared on the natural scale.
    pub fn log_abs_derivative(&self, raw: f64) -> f64 {
        match *self {
            Transform::Identity => 0.0,
            Transform::Log => raw,
            Transform::TanhBox { a, c, .. } => {
                // log(1 - tanh²(u)) = 2·(log 2 - |u| - log1p(e^{-2|u|}))
                let u = (raw - c).abs();
                a.abs().ln() + 2.0 * (std::f64::consts::LN_2 - u - (-2.0 * u).exp().ln_1p())
            }
        }
    }

    /// d/d raw of `log_abs_derivative`.
    pub fn log_abs_derivative_grad(&self, raw: f64) -> f64 {
        match *self {
            Transform::Identity => 0.0,
            Transform::Log => 1.0,
            Transform::TanhBox { c, .. } => -2.0 * (raw - c).tanh(),
        }
    }

    /// Open interval containing every natural value.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Transform::Identity => (f64::NEG_INFINITY, f64::INFINITY),
            Transform::Log => (0.0, f64::INFINITY),
            Transform::TanhBox { a, b, .. } => (b - a.abs(), b + a.abs()),
        }
    }

    fn out_of_domain(&self, value: f64) -> Error {
        Error::OutOfDomain {
            what: format!("{self:?}"),
            value,
        }
    }
}
