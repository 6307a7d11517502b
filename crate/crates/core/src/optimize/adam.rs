use serde::{Deserialize, Serialize};

use super::{Evaluation, OptimTrace, StopReason};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// ADAM moment state for a parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u32,
}

impl Adam {
    pub fn new(dim: usize, cfg: AdamConfig) -> Self {
        Self {
            cfg,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// Gradient-descent update of `x` (minimization).
    pub fn step(&mut self, x: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let AdamConfig { beta1, beta2, .. } = self.cfg;
        for ((m, v), g) in self.m.iter_mut().zip(&mut self.v).zip(grad) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
        }
        self.apply(x, self.cfg.lr);
    }

    /// Move `x` along the current bias-corrected moments with step `lr`.
    fn apply(&self, x: &mut [f64], lr: f64) {
        let c1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for ((xi, m), v) in x.iter_mut().zip(&self.m).zip(&self.v) {
            *xi -= lr * (m / c1) / ((v / c2).sqrt() + self.cfg.eps);
        }
    }
}

/// Run `epochs` full-batch ADAM steps from `x0`.
///
/// An iterate that cannot be evaluated is abandoned: the run returns to the
/// previous iterate and retakes the last step with half the learning rate.
/// `monitor` sees every evaluated iterate.
pub fn adam_run<F, M>(mut f: F, x0: &[f64], epochs: usize, cfg: AdamConfig, mut monitor: M) -> OptimTrace
where
    F: FnMut(&[f64]) -> Evaluation,
    M: FnMut(&[f64], f64),
{
    let mut x = x0.to_vec();
    let mut opt = Adam::new(x.len(), cfg);
    let mut values = Vec::with_capacity(epochs + 1);
    let mut evaluations = 0;
    let mut lr = cfg.lr;
    let mut last_good: Option<(Vec<f64>, f64)> = None;
    let mut iterations = 0;
    let mut stop = StopReason::MaxIterations;
    loop {
        evaluations += 1;
        match f(&x) {
            Some((v, g)) if v.is_finite() && g.iter().all(|gi| gi.is_finite()) => {
                monitor(&x, v);
                values.push(v);
                last_good = Some((x.clone(), v));
                if iterations == epochs {
                    break;
                }
                opt.cfg.lr = lr;
                opt.step(&mut x, &g);
                iterations += 1;
            }
            _ => {
                let Some((prev, _)) = &last_good else {
                    stop = StopReason::FailedStart;
                    break;
                };
                lr *= 0.5;
                if lr < cfg.lr * 1e-12 {
                    stop = StopReason::StepCollapse;
                    break;
                }
                x.copy_from_slice(prev);
                opt.apply(&mut x, lr);
            }
        }
    }
    let (x, value) = last_good.unwrap_or((x, f64::NAN));
    OptimTrace {
        x,
        value,
        values,
        iterations,
        evaluations,
        stop,
    }
}
