use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use super::adam::{adam_run, AdamConfig};
use super::quasi_newton::{bfgs_run, QuasiNewtonConfig};
use super::{Evaluation, StopReason};
use crate::error::Result;
use crate::likelihood::dataset::split_indices;
use crate::likelihood::posterior::{LikelihoodModel, SplitEval, NEGLL_SENTINEL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub adam_epochs: usize,
    pub adam_lr: f64,
    pub qn_max_iters: usize,
    /// Weight of ‖θ_net‖² added to the training objective.
    pub l2_penalty: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            adam_epochs: 4000,
            adam_lr: 1e-3,
            qn_max_iters: 1000,
            l2_penalty: 1e-5,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2_penalty >= 0.0 && self.adam_lr > 0.0) {
            return Err(crate::Error::Config(format!(
                "l2 penalty must be non-negative and the learning rate positive: {self:?}"
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(crate::Error::Config(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IterationCounts {
    pub adam: usize,
    pub quasi_newton: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_best_raw: Vec<f64>,
    pub negll_train: f64,
    pub negll_val: f64,
    pub negll_full: f64,
    /// Validation negLL at the last accepted iterate of the schedule.
    pub negll_val_last: f64,
    /// Both phases ended normally (tolerance or budget), without a failed
    /// line search or an unusable start.
    pub converged: bool,
    pub stop_reason: StopReason,
    pub seed: u64,
    pub iterations_used: IterationCounts,
}

impl FitResult {
    pub fn is_sentinel(&self) -> bool {
        !(self.negll_full < NEGLL_SENTINEL)
    }
}

struct Checkpoint {
    last: Option<(Vec<f64>, SplitEval)>,
    val_last: f64,
    best: Option<(Vec<f64>, SplitEval)>,
}

/// Train one UDE from `start`: ADAM, then BFGS, keeping the iterate with the
/// lowest validation negLL. The split is drawn from `cfg.seed`.
pub fn fit_single(model: &LikelihoodModel, cfg: &FitConfig, start: &[f64]) -> Result<FitResult> {
    cfg.validate()?;
    crate::Error::check_len("start point", model.n_params(), start.len())?;
    let (train, val) = split_indices(model.data().len(), cfg.seed, cfg.val_fraction)?;
    let net = model.space().network_range();
    let state = RefCell::new(Checkpoint {
        last: None,
        val_last: NEGLL_SENTINEL,
        best: None,
    });

    let objective = |theta: &[f64]| -> Evaluation {
        let eval = model.evaluate_split(theta, &train, &val, true).ok()?;
        let mut grad = eval.grad.clone()?;
        let mut value = eval.train;
        if let Some(r) = &net {
            for i in r.clone() {
                value += cfg.l2_penalty * theta[i] * theta[i];
                grad[i] += 2.0 * cfg.l2_penalty * theta[i];
            }
        }
        if !value.is_finite() {
            return None;
        }
        state.borrow_mut().last = Some((theta.to_vec(), eval));
        Some((value, grad))
    };
    let monitor = |theta: &[f64], _value: f64| {
        let mut st = state.borrow_mut();
        let Some((x, eval)) = st.last.take() else { return };
        debug_assert_eq!(x.as_slice(), theta);
        st.val_last = eval.val;
        let better = st.best.as_ref().is_none_or(|(_, b)| eval.val < b.val);
        if better {
            st.best = Some((x, eval));
        }
    };

    let adam = adam_run(
        &objective,
        start,
        cfg.adam_epochs,
        AdamConfig {
            lr: cfg.adam_lr,
            ..Default::default()
        },
        &monitor,
    );
    let (qn_iters, stop) = if adam.stop == StopReason::FailedStart {
        (0, StopReason::FailedStart)
    } else {
        let qn = bfgs_run(
            &objective,
            &adam.x,
            QuasiNewtonConfig {
                max_iters: cfg.qn_max_iters,
                ..Default::default()
            },
            &monitor,
        );
        let stop = if adam.stop.is_clean() { qn.stop } else { adam.stop };
        (qn.iterations, stop)
    };

    let Checkpoint { best, val_last, .. } = state.into_inner();
    let iterations_used = IterationCounts {
        adam: adam.iterations,
        quasi_newton: qn_iters,
    };
    Ok(match best {
        Some((theta, e)) => FitResult {
            theta_best_raw: theta,
            negll_train: e.train,
            negll_val: e.val,
            negll_full: e.full,
            negll_val_last: val_last,
            converged: stop.is_clean(),
            stop_reason: stop,
            seed: cfg.seed,
            iterations_used,
        },
        None => FitResult {
            theta_best_raw: start.to_vec(),
            negll_train: NEGLL_SENTINEL,
            negll_val: NEGLL_SENTINEL,
            negll_full: NEGLL_SENTINEL,
            negll_val_last: NEGLL_SENTINEL,
            converged: false,
            stop_reason: StopReason::FailedStart,
            seed: cfg.seed,
            iterations_used,
        },
    })
}
