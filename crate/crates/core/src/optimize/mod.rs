//! Gradient-based training of a single UDE.

pub mod adam;
pub mod fit;
pub mod quasi_newton;

pub use adam::{adam_run, Adam, AdamConfig};
pub use fit::{fit_single, FitConfig, FitResult, IterationCounts};
pub use quasi_newton::{bfgs_run, QuasiNewtonConfig};

use serde::{Deserialize, Serialize};

/// Why an optimizer stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    ObjectiveTolerance,
    MaxIterations,
    LineSearchFailure,
    /// The objective could not be evaluated at the start point.
    FailedStart,
    /// Repeated failed evaluations shrank the step size to nothing.
    StepCollapse,
}

impl StopReason {
    /// Normal termination: a tolerance was met or the budget ran out.
    pub fn is_clean(self) -> bool {
        matches!(
            self,
            StopReason::GradientTolerance | StopReason::ObjectiveTolerance | StopReason::MaxIterations
        )
    }
}

/// Outcome of one optimizer run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimTrace {
    pub x: Vec<f64>,
    pub value: f64,
    /// Objective at every accepted iterate, starting with x0.
    pub values: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: StopReason,
}

/// Objective value with gradient, `None` where it cannot be evaluated.
pub type Evaluation = Option<(f64, Vec<f64>)>;
