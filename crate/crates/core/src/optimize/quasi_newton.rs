use serde::{Deserialize, Serialize};

use super::{Evaluation, OptimTrace, StopReason};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiNewtonConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Stop when |Δf| falls below this fraction of |f|.
    pub rel_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub c1: f64,
    pub max_backtracks: usize,
}

impl Default for QuasiNewtonConfig {
    fn default() -> Self {
        Self {
            max_iters: 1000,
            grad_tol: 1e-8,
            rel_tol: 1e-12,
            c1: 1e-4,
            max_backtracks: 40,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Dense inverse-Hessian approximation, row-major.
struct InverseHessian {
    n: usize,
    h: Vec<f64>,
}

impl InverseHessian {
    fn scaled_identity(n: usize, scale: f64) -> Self {
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            h[i * n + i] = scale;
        }
        Self { n, h }
    }

    fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.h.chunks_exact(self.n).map(|row| dot(row, v)).collect()
    }

    /// H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
    fn update(&mut self, s: &[f64], y: &[f64], rho: f64) {
        let n = self.n;
        let hy = self.apply(y);
        let yhy = dot(y, &hy);
        let coef = rho * rho * yhy + rho;
        for i in 0..n {
            for j in 0..n {
                self.h[i * n + j] += coef * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
            }
        }
    }
}

/// BFGS with Armijo backtracking. `monitor` sees every accepted iterate,
/// including the start.
///
/// Trial points that cannot be evaluated are treated as failing the Armijo
/// test. When backtracking fails the inverse Hessian is reset once and the
/// search retried along steepest descent before giving up.
pub fn bfgs_run<F, M>(mut f: F, x0: &[f64], cfg: QuasiNewtonConfig, mut monitor: M) -> OptimTrace
where
    F: FnMut(&[f64]) -> Evaluation,
    M: FnMut(&[f64], f64),
{
    let n = x0.len();
    let mut evaluations = 1;
    let (mut fx, mut g) = match f(x0) {
        Some((v, g)) if v.is_finite() && g.iter().all(|gi| gi.is_finite()) => (v, g),
        _ => {
            return OptimTrace {
                x: x0.to_vec(),
                value: f64::NAN,
                values: Vec::new(),
                iterations: 0,
                evaluations,
                stop: StopReason::FailedStart,
            }
        }
    };
    let mut x = x0.to_vec();
    monitor(&x, fx);
    let mut values = vec![fx];
    let mut hess = InverseHessian::scaled_identity(n, 1.0);
    let mut fresh = true;
    let mut iterations = 0;
    let stop = loop {
        if inf_norm(&g) < cfg.grad_tol {
            break StopReason::GradientTolerance;
        }
        if iterations >= cfg.max_iters {
            break StopReason::MaxIterations;
        }
        let mut d: Vec<f64> = hess.apply(&g).iter().map(|v| -v).collect();
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hess = InverseHessian::scaled_identity(n, 1.0);
            fresh = true;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let mut alpha = if fresh { (1.0 / inf_norm(&g)).min(1.0) } else { 1.0 };
        let mut accepted = None;
        let mut retried = false;
        loop {
            for _ in 0..=cfg.max_backtracks {
                let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
                evaluations += 1;
                if let Some((v, gt)) = f(&trial) {
                    if v.is_finite() && gt.iter().all(|gi| gi.is_finite()) && v <= fx + cfg.c1 * alpha * slope {
                        accepted = Some((trial, v, gt));
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if accepted.is_some() || retried || fresh {
                break;
            }
            retried = true;
            hess = InverseHessian::scaled_identity(n, 1.0);
            fresh = true;
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
            alpha = (1.0 / inf_norm(&g)).min(1.0);
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            break StopReason::LineSearchFailure;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                hess = InverseHessian::scaled_identity(n, sy / dot(&y, &y));
            }
            hess.update(&s, &y, 1.0 / sy);
            fresh = false;
        }
        let df = (fx - f_new).abs();
        let scale = fx.abs().max(f_new.abs());
        x = x_new;
        fx = f_new;
        g = g_new;
        iterations += 1;
        monitor(&x, fx);
        values.push(fx);
        if df <= cfg.rel_tol * scale && inf_norm(&g) >= cfg.grad_tol {
            break StopReason::ObjectiveTolerance;
        }
    };
    OptimTrace {
        x,
        value: fx,
        values,
        iterations,
        evaluations,
        stop,
    }
}
