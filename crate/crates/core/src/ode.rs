//! Explicit Runge–Kutta integration on fixed output grids and exact
//! gradients of the discretized solution (discrete adjoint).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Right-hand side f(t, x, θ) of an ODE with a vector-Jacobian product.
pub trait VectorField: Sync {
    fn dim(&self) -> usize;

    fn n_params(&self) -> usize;

    fn eval(&self, t: f64, x: &[f64], theta: &[f64], dx: &mut [f64]) -> Result<()>;

    /// Accumulate `wᵀ ∂f/∂x` into `grad_x` and `wᵀ ∂f/∂θ` into `grad_theta`.
    fn vjp(
        &self,
        t: f64,
        x: &[f64],
        theta: &[f64],
        w: &[f64],
        grad_x: &mut [f64],
        grad_theta: &mut [f64],
    ) -> Result<()>;

    /// Times at which the field is discontinuous; steps never straddle them.
    fn breakpoints(&self) -> &[f64] {
        &[]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    Rk4Fixed,
    Dopri45Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: SolverMethod,
    pub fixed_step: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_steps: usize,
}

impl SolverConfig {
    pub fn rk4(step: f64) -> Self {
        Self {
            method: SolverMethod::Rk4Fixed,
            fixed_step: step,
            abs_tol: 1e-8,
            rel_tol: 1e-8,
            max_steps: 1_000_000,
        }
    }

    pub fn dopri(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            method: SolverMethod::Dopri45Adaptive,
            fixed_step: 1e-2,
            abs_tol,
            rel_tol,
            max_steps: 1_000_000,
        }
    }

    /// Fixed-step RK4 with span/1000, the default during training.
    pub fn training(t_span: (f64, f64)) -> Self {
        Self::rk4((t_span.1 - t_span.0) / 1000.0)
    }

    /// Tight adaptive solver used for data generation.
    pub fn reference() -> Self {
        Self::dopri(1e-8, 1e-8)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fixed_step > 0.0 && self.abs_tol > 0.0 && self.rel_tol > 0.0 && self.max_steps > 0)
        {
            return Err(Error::Config(format!(
                "solver settings must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// One row per output time (fewer rows when the solve failed).
    pub states: Vec<Vec<f64>>,
    pub success: bool,
    pub failure_reason: Option<String>,
}

impl Trajectory {
    fn failed(times: &[f64], states: Vec<Vec<f64>>, reason: String) -> Self {
        Self {
            times: times.to_vec(),
            states,
            success: false,
            failure_reason: Some(reason),
        }
    }
}

struct Tableau {
    c: &'static [f64],
    a: &'static [&'static [f64]],
    b: &'static [f64],
    /// b − b̂ for embedded error estimation.
    err: Option<&'static [f64]>,
    /// Last stage equals f at the step end.
    fsal: bool,
}

const RK4: Tableau = Tableau {
    c: &[0.0, 0.5, 0.5, 1.0],
    a: &[&[], &[0.5], &[0.0, 0.5], &[0.0, 0.0, 1.0]],
    b: &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
    err: None,
    fsal: false,
};

const DOPRI5: Tableau = Tableau {
    c: &[0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0],
    a: &[
        &[],
        &[0.2],
        &[3.0 / 40.0, 9.0 / 40.0],
        &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
        &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
        &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
        &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ],
    b: &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0],
    err: Some(&[
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ]),
    fsal: true,
};

/// One accepted step; its stage inputs live in `Forward::stage_inputs`.
struct StepRecord {
    t: f64,
    h: f64,
}

struct Forward {
    trajectory: Trajectory,
    steps: Vec<StepRecord>,
    /// Stage inputs of all recorded steps, step-major then stage-major.
    stage_inputs: Vec<f64>,
    /// Number of accepted steps preceding each output time.
    output_after: Vec<usize>,
}

fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

fn validate_times(t0: f64, out_times: &[f64]) -> Result<()> {
    if let Some(&first) = out_times.first() {
        if first < t0 {
            return Err(Error::Contract(format!(
                "first output time {first} precedes initial time {t0}"
            )));
        }
    }
    if out_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Contract("output times must be strictly increasing".into()));
    }
    Ok(())
}

/// Sorted stop times: outputs plus breakpoints inside (t0, t_end).
fn stop_times(t0: f64, out_times: &[f64], breakpoints: &[f64]) -> Vec<(f64, bool)> {
    let t_end = out_times.last().copied().unwrap_or(t0);
    let mut stops: Vec<(f64, bool)> = out_times
        .iter()
        .filter(|&&t| t > t0)
        .map(|&t| (t, true))
        .collect();
    for &b in breakpoints {
        if b > t0 && b < t_end && !out_times.contains(&b) {
            stops.push((b, false));
        }
    }
    stops.sort_by(|a, b| a.0.total_cmp(&b.0));
    stops
}

struct Stepper<'a, F: VectorField + ?Sized> {
    field: &'a F,
    theta: &'a [f64],
    tab: &'static Tableau,
    /// Keep stage times strictly inside the step (fields with breakpoints).
    nudge: bool,
}

fn stage_time(t: f64, c: f64, h: f64, nudge: bool) -> f64 {
    let tau = t + c * h;
    if nudge {
        tau.clamp(t + 1e-9 * h, t + h - 1e-9 * h)
    } else {
        tau
    }
}

/// `x += incr` with compensated summation; `comp` carries the low-order
/// bits lost so far.
fn compensated_add(x: &mut [f64], incr: &[f64], comp: &mut [f64]) {
    for ((xi, di), ci) in x.iter_mut().zip(incr).zip(comp.iter_mut()) {
        let y = di - *ci;
        let s = *xi + y;
        *ci = (s - *xi) - y;
        *xi = s;
    }
}

impl<F: VectorField + ?Sized> Stepper<'_, F> {
    /// Take one step, leaving the increment, stage derivatives and stage
    /// inputs in `buf`.
    fn step(&self, t: f64, h: f64, x: &[f64], first_stage: Option<&[f64]>, buf: &mut StepBuf) -> Result<()> {
        let s = self.tab.c.len();
        for i in 0..s {
            let (done, rest) = buf.ks.split_at_mut(i);
            let y = &mut buf.ys[i];
            y.copy_from_slice(x);
            for (j, aij) in self.tab.a[i].iter().enumerate() {
                if *aij != 0.0 {
                    for (yv, kv) in y.iter_mut().zip(&done[j]) {
                        *yv += h * aij * kv;
                    }
                }
            }
            let k = &mut rest[0];
            match (i, first_stage) {
                (0, Some(k0)) => k.copy_from_slice(k0),
                _ => self.field.eval(stage_time(t, self.tab.c[i], h, self.nudge), y, self.theta, k)?,
            }
            if !all_finite(k) {
                return Err(Error::SimulationFailure(format!(
                    "non-finite derivative at t = {}",
                    t + self.tab.c[i] * h
                )));
            }
        }
        buf.incr.iter_mut().for_each(|v| *v = 0.0);
        for (bi, k) in self.tab.b.iter().zip(&buf.ks) {
            if *bi != 0.0 {
                for (dv, kv) in buf.incr.iter_mut().zip(k) {
                    *dv += h * bi * kv;
                }
            }
        }
        Ok(())
    }
}

struct StepBuf {
    ks: Vec<Vec<f64>>,
    ys: Vec<Vec<f64>>,
    incr: Vec<f64>,
}

impl StepBuf {
    fn new(stages: usize, n: usize) -> Self {
        Self {
            ks: vec![vec![0.0; n]; stages],
            ys: vec![vec![0.0; n]; stages],
            incr: vec![0.0; n],
        }
    }
}

fn forward<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    t0: f64,
    out_times: &[f64],
    theta: &[f64],
    cfg: &SolverConfig,
    record: bool,
) -> Result<Forward> {
    cfg.validate()?;
    validate_times(t0, out_times)?;
    Error::check_len("initial state", field.dim(), x0.len())?;
    Error::check_len("parameter vector", field.n_params(), theta.len())?;

    let tab = match cfg.method {
        SolverMethod::Rk4Fixed => &RK4,
        SolverMethod::Dopri45Adaptive => &DOPRI5,
    };
    let nudge = !field.breakpoints().is_empty();
    let stepper = Stepper {
        field,
        theta,
        tab,
        nudge,
    };
    let mut comp = vec![0.0; x0.len()];
    let mut buf = StepBuf::new(tab.c.len(), x0.len());
    let mut states = Vec::with_capacity(out_times.len());
    let mut output_after = Vec::with_capacity(out_times.len());
    if out_times.first() == Some(&t0) {
        states.push(x0.to_vec());
        output_after.push(0);
    }
    let mut steps = Vec::new();
    let mut stage_inputs = Vec::new();
    let mut n_steps = 0usize;
    let mut x = x0.to_vec();
    let mut t = t0;
    let fail = |states: Vec<Vec<f64>>, reason: String| Forward {
        trajectory: Trajectory::failed(out_times, states, reason),
        steps: Vec::new(),
        stage_inputs: Vec::new(),
        output_after: Vec::new(),
    };

    let stops = stop_times(t0, out_times, field.breakpoints());
    match cfg.method {
        SolverMethod::Rk4Fixed => {
            for &(stop, is_output) in &stops {
                let span = stop - t;
                let n_sub = ((span / cfg.fixed_step) - 1e-9).ceil().max(1.0) as usize;
                let h = span / n_sub as f64;
                for k in 0..n_sub {
                    if n_steps >= cfg.max_steps {
                        return Ok(fail(states, format!("exceeded {} steps", cfg.max_steps)));
                    }
                    let t_step = if k + 1 == n_sub { stop - h } else { t };
                    match stepper.step(t_step, h, &x, None, &mut buf) {
                        Ok(()) => {
                            compensated_add(&mut x, &buf.incr, &mut comp);
                            if !all_finite(&x) {
                                return Ok(fail(states, format!("non-finite state at t = {}", t + h)));
                            }
                            if record {
                                steps.push(StepRecord {
                                    t: t_step,
                                    h,
                                });
                                buf.ys.iter().for_each(|y| stage_inputs.extend_from_slice(y));
                            }
                            n_steps += 1;
                            t = if k + 1 == n_sub { stop } else { t + h };
                        }
                        Err(e) => return Ok(fail(states, e.to_string())),
                    }
                }
                if is_output {
                    states.push(x.clone());
                    output_after.push(n_steps);
                }
            }
        }
        SolverMethod::Dopri45Adaptive => {
            let err_w = tab.err.expect("adaptive tableau");
            let norm = |e: &[f64], a: &[f64], b: &[f64]| -> f64 {
                let sum: f64 = e
                    .iter()
                    .zip(a.iter().zip(b))
                    .map(|(ei, (ai, bi))| {
                        let sk = cfg.abs_tol + cfg.rel_tol * ai.abs().max(bi.abs());
                        (ei / sk).powi(2)
                    })
                    .sum();
                (sum / e.len() as f64).sqrt()
            };
            let mut k_first = vec![0.0; x.len()];
            if let Err(e) = field.eval(t, &x, theta, &mut k_first) {
                return Ok(fail(states, e.to_string()));
            }
            let span_total = stops.last().map_or(0.0, |s| s.0) - t0;
            let mut h = initial_step(field, theta, t, &x, &k_first, cfg, span_total);
            let mut fac_old = 1e-4f64;
            let mut fsal: Option<Vec<f64>> = Some(k_first);
            for &(stop, is_output) in &stops {
                while t < stop {
                    if n_steps >= cfg.max_steps {
                        return Ok(fail(states, format!("exceeded {} steps", cfg.max_steps)));
                    }
                    let remaining = stop - t;
                    let clipped = h >= remaining * (1.0 - 1e-12);
                    let h_try = if clipped { remaining } else { h };
                    if h_try <= 1e-14 * t.abs().max(1.0) {
                        return Ok(fail(states, format!("step size underflow at t = {t}")));
                    }
                    match stepper.step(t, h_try, &x, fsal.as_deref(), &mut buf) {
                        Ok(()) => {}
                        Err(Error::SimulationFailure(_) | Error::DegenerateState(_)) => {
                            h = h_try * 0.2;
                            continue;
                        }
                        Err(e) => return Ok(fail(states, e.to_string())),
                    };
                    let mut e = vec![0.0; x.len()];
                    for (w, k) in err_w.iter().zip(&buf.ks) {
                        for (ev, kv) in e.iter_mut().zip(k) {
                            *ev += h_try * w * kv;
                        }
                    }
                    let x_new: Vec<f64> = x.iter().zip(&buf.incr).map(|(a, b)| a + b).collect();
                    let err = norm(&e, &x, &x_new);
                    if !err.is_finite() || !all_finite(&x_new) {
                        h = h_try * 0.2;
                        continue;
                    }
                    let fac11 = err.powf(0.17);
                    if err <= 1.0 {
                        let fac = (fac11 / fac_old.powf(0.04) / 0.9).clamp(0.1, 5.0);
                        let h_next = h_try / fac;
                        fac_old = err.max(1e-4);
                        if record {
                            steps.push(StepRecord {
                                t,
                                h: h_try,
                            });
                            buf.ys.iter().for_each(|y| stage_inputs.extend_from_slice(y));
                        }
                        n_steps += 1;
                        compensated_add(&mut x, &buf.incr, &mut comp);
                        t = if clipped { stop } else { t + h_try };
                        fsal = if tab.fsal && !nudge { buf.ks.last().cloned() } else { None };
                        // keep the unclipped proposal so a short final step does not shrink the next
                        h = if clipped { h.max(h_next) } else { h_next };
                    } else {
                        h = h_try / (fac11 / 0.9).min(5.0);
                    }
                }
                if is_output {
                    states.push(x.clone());
                    output_after.push(n_steps);
                }
            }
        }
    }
    Ok(Forward {
        trajectory: Trajectory {
            times: out_times.to_vec(),
            states,
            success: true,
            failure_reason: None,
        },
        steps,
        stage_inputs,
        output_after,
    })
}

fn initial_step<F: VectorField + ?Sized>(
    field: &F,
    theta: &[f64],
    t: f64,
    x: &[f64],
    f0: &[f64],
    cfg: &SolverConfig,
    span: f64,
) -> f64 {
    let scaled = |v: &[f64]| -> f64 {
        let s: f64 = v
            .iter()
            .zip(x)
            .map(|(vi, xi)| (vi / (cfg.abs_tol + cfg.rel_tol * xi.abs())).powi(2))
            .sum();
        (s / v.len() as f64).sqrt()
    };
    let d0 = scaled(x);
    let d1 = scaled(f0);
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    if span > 0.0 {
        h0 = h0.min(span);
    }
    let x1: Vec<f64> = x.iter().zip(f0).map(|(a, b)| a + h0 * b).collect();
    let mut f1 = vec![0.0; x.len()];
    if field.eval(t + h0, &x1, theta, &mut f1).is_err() {
        return h0;
    }
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = scaled(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    let h = (100.0 * h0).min(h1);
    if span > 0.0 {
        h.min(span)
    } else {
        h
    }
}

/// Integrate from `(t0, x0)` and report the state at every output time.
///
/// Numerical failures are reported through `success = false`; only contract
/// violations (unsorted times, wrong dimensions, bad settings) are errors.
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    x0: &[f64],
    t0: f64,
    out_times: &[f64],
    theta: &[f64],
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    Ok(forward(field, x0, t0, out_times, theta, cfg, false)?.trajectory)
}

/// Loss value and its partial derivatives with respect to the trajectory
/// states and (directly) to the parameters.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub value: f64,
    /// Same shape as `Trajectory::states`.
    pub d_states: Vec<Vec<f64>>,
    pub d_theta: Vec<f64>,
}

/// Scalar functional of a solved trajectory.
pub trait TrajectoryLoss {
    fn evaluate(&self, trajectory: &Trajectory, theta: &[f64]) -> Result<LossGrad>;
}

impl<G> TrajectoryLoss for G
where
    G: Fn(&Trajectory, &[f64]) -> Result<LossGrad>,
{
    fn evaluate(&self, trajectory: &Trajectory, theta: &[f64]) -> Result<LossGrad> {
        self(trajectory, theta)
    }
}

/// Loss and its exact gradient with respect to θ through the discretized
/// solver, computed by a reverse sweep over the recorded steps.
///
/// For the adaptive method the accepted step sequence is held fixed.
pub fn gradient_of<F: VectorField + ?Sized, L: TrajectoryLoss + ?Sized>(
    field: &F,
    x0: &[f64],
    t0: f64,
    out_times: &[f64],
    theta: &[f64],
    cfg: &SolverConfig,
    loss: &L,
) -> Result<(f64, Vec<f64>, Trajectory)> {
    let fwd = forward(field, x0, t0, out_times, theta, cfg, true)?;
    if !fwd.trajectory.success {
        return Err(Error::SimulationFailure(
            fwd.trajectory.failure_reason.unwrap_or_default(),
        ));
    }
    let lg = loss.evaluate(&fwd.trajectory, theta)?;
    if !lg.value.is_finite() {
        return Err(Error::SimulationFailure(format!("loss is {}", lg.value)));
    }
    Error::check_len("loss state derivative", fwd.trajectory.states.len(), lg.d_states.len())?;
    Error::check_len("loss parameter derivative", theta.len(), lg.d_theta.len())?;

    let tab = match cfg.method {
        SolverMethod::Rk4Fixed => &RK4,
        SolverMethod::Dopri45Adaptive => &DOPRI5,
    };
    let n = x0.len();
    let s = tab.c.len();
    let nudge = !field.breakpoints().is_empty();
    let mut grad = lg.d_theta;
    let mut lambda = vec![0.0; n];
    let mut out_idx = fwd.output_after.len();
    let add_outputs = |upto: usize, out_idx: &mut usize, lambda: &mut [f64]| {
        while *out_idx > 0 && fwd.output_after[*out_idx - 1] == upto {
            *out_idx -= 1;
            for (l, d) in lambda.iter_mut().zip(&lg.d_states[*out_idx]) {
                *l += d;
            }
        }
    };
    let mut bar_y = vec![vec![0.0; n]; s];
    let mut bar_k = vec![0.0; n];
    let mut bar_x = vec![0.0; n];
    for (j, step) in fwd.steps.iter().enumerate().rev() {
        add_outputs(j + 1, &mut out_idx, &mut lambda);
        let h = step.h;
        bar_x.copy_from_slice(&lambda);
        for i in (0..s).rev() {
            bar_k.iter_mut().for_each(|v| *v = 0.0);
            let mut nonzero = false;
            if tab.b[i] != 0.0 {
                nonzero = true;
                for (bk, l) in bar_k.iter_mut().zip(&lambda) {
                    *bk += h * tab.b[i] * l;
                }
            }
            for m in i + 1..s {
                let a_mi = tab.a[m].get(i).copied().unwrap_or(0.0);
                if a_mi != 0.0 {
                    nonzero = true;
                    for (bk, by) in bar_k.iter_mut().zip(&bar_y[m]) {
                        *bk += h * a_mi * by;
                    }
                }
            }
            bar_y[i].iter_mut().for_each(|v| *v = 0.0);
            if nonzero {
                field.vjp(
                    stage_time(step.t, tab.c[i], h, nudge),
                    &fwd.stage_inputs[(j * s + i) * n..(j * s + i + 1) * n],
                    theta,
                    &bar_k,
                    &mut bar_y[i],
                    &mut grad,
                )?;
                for (bx, by) in bar_x.iter_mut().zip(&bar_y[i]) {
                    *bx += by;
                }
            }
        }
        std::mem::swap(&mut lambda, &mut bar_x);
    }
    Ok((lg.value, grad, fwd.trajectory))
}
