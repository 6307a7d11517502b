//! Likelihood and posterior of a UDE problem on a dataset, with gradients.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::likelihood::dataset::Dataset;
use crate::likelihood::noise::{negll_gaussian_grad, negll_negbin_grad, NoiseKind};
use crate::likelihood::prior::LOG_DENSITY_SENTINEL;
use crate::model::{compose_ude_rhs, ParamSpace, Transform, UdeProblem, UdeRhs};
use crate::ode::{gradient_of, integrate, LossGrad, SolverConfig, Trajectory};
use crate::target::LogDensity;

/// Negative log-likelihood reported for failed simulations.
pub const NEGLL_SENTINEL: f64 = 1e10;

/// Negative log-likelihoods of one forward solve on several row sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitEval {
    pub train: f64,
    pub val: f64,
    pub full: f64,
    /// Gradient of the train negLL when requested.
    pub grad: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct LikelihoodModel {
    problem: UdeProblem,
    space: ParamSpace,
    rhs: UdeRhs,
    data: Dataset,
    solver: SolverConfig,
    noise_idx: usize,
    noise_transform: Transform,
    all_rows: Vec<usize>,
}

impl LikelihoodModel {
    pub fn new(problem: UdeProblem, space: ParamSpace, data: Dataset, solver: SolverConfig) -> Result<Self> {
        data.validate()?;
        solver.validate()?;
        if data.n_y() != problem.n_y() {
            return Err(Error::Data(format!(
                "dataset has {} observables, the problem observes {}",
                data.n_y(),
                problem.n_y()
            )));
        }
        if data.noise.kind() != problem.noise {
            return Err(Error::Data(format!(
                "dataset noise {:?} does not match the problem's {:?}",
                data.noise.kind(),
                problem.noise
            )));
        }
        if data.times.first().is_some_and(|&t| t < problem.t_span.0) {
            return Err(Error::Data("observation before the initial time".into()));
        }
        let rhs = compose_ude_rhs(&problem, &space)?;
        let (seg, range) = space
            .noise_segment()
            .ok_or_else(|| Error::Config("parameter space lacks a noise segment".into()))?;
        if range.len() != 1 {
            return Err(Error::Config("noise segment must be scalar".into()));
        }
        let noise_transform = seg.transform;
        let all_rows = (0..data.len()).collect();
        Ok(Self {
            noise_idx: range.start,
            noise_transform,
            problem,
            space,
            rhs,
            data,
            solver,
            all_rows,
        })
    }

    pub fn problem(&self) -> &UdeProblem {
        &self.problem
    }

    pub fn space(&self) -> &ParamSpace {
        &self.space
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn solver(&self) -> &SolverConfig {
        &self.solver
    }

    pub fn rhs(&self) -> &UdeRhs {
        &self.rhs
    }

    pub fn n_params(&self) -> usize {
        self.space.total_dim()
    }

    /// States at the observation times.
    pub fn simulate(&self, theta: &[f64]) -> Result<Trajectory> {
        integrate(&self.rhs, &self.problem.x0, self.problem.t_span.0, &self.data.times, theta, &self.solver)
    }

    /// negLL over `rows` of a solved trajectory, with derivatives in the
    /// states and in the raw noise parameter.
    fn rows_negll(&self, states: &[Vec<f64>], theta: &[f64], rows: &[usize], grad: bool) -> Result<(f64, Vec<Vec<f64>>, f64)> {
        let mut pred = Vec::with_capacity(rows.len() * self.problem.n_y());
        let mut obs = Vec::with_capacity(pred.capacity());
        for &i in rows {
            pred.extend(self.problem.observe(&states[i]));
            obs.extend_from_slice(&self.data.observations[i]);
        }
        let s = theta[self.noise_idx];
        let natural = self.noise_transform.to_natural(s);
        let (value, d_pred, d_nat) = match self.problem.noise {
            NoiseKind::Gaussian => negll_gaussian_grad(&pred, &obs, natural)?,
            NoiseKind::NegBin => negll_negbin_grad(&pred, &obs, natural)?,
        };
        let mut d_states = Vec::new();
        if grad {
            d_states = vec![vec![0.0; self.problem.n_x]; states.len()];
            let n_y = self.problem.n_y();
            for (r, &i) in rows.iter().enumerate() {
                for (j, &k) in self.problem.observed.iter().enumerate() {
                    d_states[i][k] += d_pred[r * n_y + j];
                }
            }
        }
        Ok((value, d_states, d_nat * self.noise_transform.derivative(s)))
    }

    /// negLL on train, validation and all rows from a single solve; the
    /// gradient (when asked) is that of the train rows.
    pub fn evaluate_split(&self, theta: &[f64], train: &[usize], val: &[usize], want_grad: bool) -> Result<SplitEval> {
        Error::check_len("parameter vector", self.n_params(), theta.len())?;
        if !want_grad {
            let traj = self.simulate(theta)?;
            if !traj.success {
                return Err(Error::SimulationFailure(traj.failure_reason.unwrap_or_default()));
            }
            let f = |rows: &[usize]| self.rows_negll(&traj.states, theta, rows, false).map(|r| r.0);
            return Ok(SplitEval {
                train: f(train)?,
                val: f(val)?,
                full: f(&self.all_rows)?,
                grad: None,
            });
        }
        let side = RefCell::new((f64::NAN, f64::NAN));
        let loss = |traj: &Trajectory, th: &[f64]| -> Result<LossGrad> {
            let (value, d_states, d_noise) = self.rows_negll(&traj.states, th, train, true)?;
            let v = self.rows_negll(&traj.states, th, val, false)?.0;
            let full = self.rows_negll(&traj.states, th, &self.all_rows, false)?.0;
            *side.borrow_mut() = (v, full);
            let mut d_theta = vec![0.0; th.len()];
            d_theta[self.noise_idx] = d_noise;
            Ok(LossGrad {
                value,
                d_states,
                d_theta,
            })
        };
        let (value, grad, _) = gradient_of(
            &self.rhs,
            &self.problem.x0,
            self.problem.t_span.0,
            &self.data.times,
            theta,
            &self.solver,
            &loss,
        )?;
        let (val_v, full) = side.into_inner();
        Ok(SplitEval {
            train: value,
            val: val_v,
            full,
            grad: Some(grad),
        })
    }

    /// negLL on all rows; failures give [`NEGLL_SENTINEL`].
    pub fn negll(&self, theta: &[f64]) -> f64 {
        match self.evaluate_split(theta, &self.all_rows, &[], false) {
            Ok(e) if e.full.is_finite() => e.full,
            _ => NEGLL_SENTINEL,
        }
    }

    /// negLL on all rows and its gradient; propagates simulation failures.
    pub fn negll_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let e = self.evaluate_split(theta, &self.all_rows, &[], true)?;
        Ok((e.train, e.grad.expect("gradient requested")))
    }

    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        (-self.negll(theta)).max(LOG_DENSITY_SENTINEL)
    }

    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        self.space.log_prior(theta).unwrap_or(LOG_DENSITY_SENTINEL)
    }

    pub fn log_posterior(&self, theta: &[f64]) -> f64 {
        let lp = self.log_prior(theta);
        if lp <= LOG_DENSITY_SENTINEL {
            return LOG_DENSITY_SENTINEL;
        }
        let ll = self.log_likelihood(theta);
        if ll <= LOG_DENSITY_SENTINEL {
            return LOG_DENSITY_SENTINEL;
        }
        (ll + lp).max(LOG_DENSITY_SENTINEL)
    }

    /// Log posterior and its gradient. Sentinel values come with a zero gradient.
    pub fn log_posterior_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let lp = match self.space.log_prior_with_grad(theta, Some(grad)) {
            Ok(v) if v > LOG_DENSITY_SENTINEL => v,
            _ => return LOG_DENSITY_SENTINEL,
        };
        match self.negll_grad(theta) {
            Ok((v, g)) if lp - v > LOG_DENSITY_SENTINEL && g.iter().all(|x| x.is_finite()) => {
                for (gi, li) in grad.iter_mut().zip(&g) {
                    *gi -= li;
                }
                lp - v
            }
            _ => {
                grad.iter_mut().for_each(|g| *g = 0.0);
                LOG_DENSITY_SENTINEL
            }
        }
    }
}

impl LogDensity for LikelihoodModel {
    fn dim(&self) -> usize {
        self.n_params()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_posterior(x)
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.log_posterior_grad(x, grad)
    }
}
