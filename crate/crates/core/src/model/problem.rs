//! Scenario catalog, mechanistic right-hand sides and their composition with
//! the embedded network.

use std::f64::consts::PI;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::noise::{NoiseKind, NoiseModel};
use crate::likelihood::prior::{PriorKind, PriorSpec};
use crate::model::{MlpSpec, ParamSpace, Segment, SegmentRole, Transform};
use crate::ode::VectorField;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    SeirPulse,
    SeirWaves,
    Quadratic,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::SeirPulse => "seir_pulse",
            Scenario::SeirWaves => "seir_waves",
            Scenario::Quadratic => "quadratic",
        }
    }

    pub fn is_seir(&self) -> bool {
        !matches!(self, Scenario::Quadratic)
    }

    pub fn t_span(&self) -> (f64, f64) {
        match self {
            Scenario::Quadratic => (0.0, 10.0),
            _ => (0.0, 130.0),
        }
    }

    /// Number of synthetic observations, placed uniformly on (t0, t1].
    pub fn n_observations(&self) -> usize {
        match self {
            Scenario::Quadratic => 12,
            _ => 30,
        }
    }

    pub fn observation_times(&self) -> Vec<f64> {
        let (t0, t1) = self.t_span();
        let n = self.n_observations();
        (1..=n).map(|i| t0 + (t1 - t0) * i as f64 / n as f64).collect()
    }

    pub fn x0(&self, noise: NoiseKind) -> Vec<f64> {
        match (self, noise) {
            (Scenario::Quadratic, _) => vec![0.1],
            (_, NoiseKind::Gaussian) => vec![0.995, 0.004, 0.001, 0.0],
            (_, NoiseKind::NegBin) => vec![995.0, 4.0, 1.0, 0.0],
        }
    }

    /// Data-generating mechanistic parameters as (name, value) pairs.
    pub fn true_parameters(&self) -> Vec<(&'static str, f64)> {
        match self {
            Scenario::Quadratic => vec![("alpha", 1.0), ("beta", 2.0)],
            Scenario::SeirWaves => vec![("alpha", 0.9), ("gamma", 0.1)],
            Scenario::SeirPulse => vec![("alpha", 0.33), ("gamma", 0.05)],
        }
    }

    /// Noise settings of the synthetic scenario catalog.
    pub fn catalog_noise(&self) -> Vec<NoiseModel> {
        use NoiseModel::*;
        match self {
            Scenario::Quadratic => vec![Gaussian { sigma: 0.01 }, Gaussian { sigma: 0.05 }],
            Scenario::SeirWaves => vec![
                Gaussian { sigma: 0.01 },
                Gaussian { sigma: 0.05 },
                NegBin { dispersion: 1.2 },
                NegBin { dispersion: 2.2 },
            ],
            Scenario::SeirPulse => vec![
                Gaussian { sigma: 0.01 },
                Gaussian { sigma: 0.03 },
                NegBin { dispersion: 1.2 },
                NegBin { dispersion: 2.2 },
            ],
        }
    }

    pub fn in_catalog(&self, noise: &NoiseModel) -> bool {
        self.catalog_noise().contains(noise)
    }

    pub fn state_names(&self) -> Vec<String> {
        let names: &[&str] = match self {
            Scenario::Quadratic => &["x"],
            _ => &["S", "E", "I", "R"],
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

/// How the network enters the right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetRole {
    /// Network of time supplies a rate parameter of the mechanistic model.
    TimeVaryingInput,
    /// Network of the state is added to the mechanistic terms.
    AdditiveTerm,
}

/// User-adjustable parts of the model structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelOptions {
    /// Layer sizes; the input scaling is chosen per scenario.
    pub layer_sizes: Vec<usize>,
    /// Map the network output through a (0, 3) box instead of exp for the
    /// SEIR transmission rate.
    pub beta_box: bool,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            layer_sizes: MlpSpec::default().layer_sizes,
            beta_box: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdeProblem {
    pub scenario: Scenario,
    pub noise: NoiseKind,
    pub n_x: usize,
    /// State indices selected by the observable map.
    pub observed: Vec<usize>,
    pub state_names: Vec<String>,
    pub x0: Vec<f64>,
    pub t_span: (f64, f64),
    pub mlp: MlpSpec,
    pub net_role: NetRole,
    /// Bounds transform per mechanistic parameter.
    pub mech_bounds: Vec<(String, Transform)>,
    /// Optional bound on the network-driven rate; `None` means exp(output).
    pub beta_box: Option<Transform>,
}

impl UdeProblem {
    pub fn new(scenario: Scenario, noise: NoiseKind, options: &ModelOptions) -> Result<Self> {
        let (t0, t1) = scenario.t_span();
        let layer_sizes = options.layer_sizes.clone();
        let problem = if scenario.is_seir() {
            UdeProblem {
                scenario,
                noise,
                n_x: 4,
                observed: vec![2, 3],
                state_names: scenario.state_names(),
                x0: scenario.x0(noise),
                t_span: (t0, t1),
                mlp: MlpSpec {
                    layer_sizes,
                    input_scale: t1,
                },
                net_role: NetRole::TimeVaryingInput,
                mech_bounds: vec![
                    ("alpha".into(), Transform::tanh_box(0.0, 24.0)),
                    ("gamma".into(), Transform::tanh_box(0.0, 1.0)),
                ],
                beta_box: options.beta_box.then(|| Transform::tanh_box(0.0, 3.0)),
            }
        } else {
            if noise != NoiseKind::Gaussian {
                return Err(Error::Config(
                    "the quadratic scenario is defined for Gaussian noise only".into(),
                ));
            }
            UdeProblem {
                scenario,
                noise,
                n_x: 1,
                observed: vec![0],
                state_names: scenario.state_names(),
                x0: scenario.x0(noise),
                t_span: (t0, t1),
                mlp: MlpSpec {
                    layer_sizes,
                    input_scale: 1.0,
                },
                net_role: NetRole::AdditiveTerm,
                mech_bounds: vec![("alpha".into(), Transform::Log)],
                beta_box: None,
            }
        };
        problem.mlp.validate()?;
        if problem.mlp.n_inputs() != 1 || problem.mlp.n_outputs() != 1 {
            return Err(Error::Config("the network must map one input to one output".into()));
        }
        Ok(problem)
    }

    pub fn n_y(&self) -> usize {
        self.observed.len()
    }

    /// Project a state onto the observables.
    pub fn observe(&self, x: &[f64]) -> Vec<f64> {
        self.observed.iter().map(|&i| x[i]).collect()
    }

    /// Parameter layout with the default priors of the scenario.
    pub fn default_space(&self) -> ParamSpace {
        let net = Segment::new(
            "net",
            self.mlp.n_params(),
            SegmentRole::Network,
            Transform::Identity,
            PriorSpec::raw(PriorKind::IsotropicNormal { sd: 3f64.sqrt() }),
        );
        let noise = match self.noise {
            NoiseKind::Gaussian => Segment::new(
                "sigma",
                1,
                SegmentRole::Noise,
                Transform::Log,
                PriorSpec::raw(PriorKind::Uniform { lo: -10.0, hi: 10.0 }),
            ),
            // natural value is p = 1/d
            NoiseKind::NegBin => Segment::new(
                "inv_dispersion",
                1,
                SegmentRole::Noise,
                Transform::tanh_box(0.0, 1.0),
                PriorSpec::natural(PriorKind::Beta { a: 2.0, b: 2.0 }),
            ),
        };
        let mut segments = Vec::new();
        match self.scenario {
            Scenario::Quadratic => {
                segments.push(Segment::new(
                    "alpha",
                    1,
                    SegmentRole::Mechanistic,
                    Transform::Log,
                    PriorSpec::natural(PriorKind::LogUniform { lo: 0.1, hi: 10.0 }),
                ));
                segments.push(net);
                segments.push(noise.with_start(PriorSpec::natural(PriorKind::LogUniform {
                    lo: 0.1,
                    hi: 10.0,
                })));
            }
            _ => {
                for (name, transform) in &self.mech_bounds {
                    segments.push(Segment::new(
                        name.clone(),
                        1,
                        SegmentRole::Mechanistic,
                        *transform,
                        PriorSpec::raw(PriorKind::Normal { mean: 0.0, sd: 1.0 }),
                    ));
                }
                segments.push(net);
                segments.push(noise);
            }
        }
        ParamSpace::new(segments).expect("default segments are consistent")
    }

    /// Natural noise parameter in the convention the likelihood expects
    /// (σ for Gaussian, dispersion d for NegBin).
    pub fn noise_from_natural(&self, natural: f64) -> NoiseModel {
        match self.noise {
            NoiseKind::Gaussian => NoiseModel::Gaussian { sigma: natural },
            NoiseKind::NegBin => NoiseModel::NegBin {
                dispersion: 1.0 / natural,
            },
        }
    }

    /// Network-driven rate at time `t` for SEIR problems.
    pub fn beta_of(&self, net: &[f64], t: f64) -> Result<f64> {
        if self.net_role != NetRole::TimeVaryingInput {
            return Err(Error::Config(format!(
                "scenario {} has no network-driven transmission rate",
                self.scenario.name()
            )));
        }
        let out = self.mlp.forward_scalar(net, t)?;
        Ok(beta_link(self.beta_box.as_ref(), out).0)
    }
}

/// Map network output to a positive rate; returns (β, dβ/d output).
fn beta_link(beta_box: Option<&Transform>, out: f64) -> (f64, f64) {
    match beta_box {
        Some(t) => (t.to_natural(out), t.derivative(out)),
        None => {
            let b = out.exp();
            (b, b)
        }
    }
}

/// Piecewise-constant transmission rate with an intervention window.
pub fn beta_pulse(t: f64) -> f64 {
    if 15.0 < t && t < 30.0 {
        0.5
    } else {
        0.05
    }
}

/// Oscillating transmission rate with decreasing frequency.
pub fn beta_waves(t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::OutOfDomain {
            what: "beta_waves time".into(),
            value: t,
        });
    }
    Ok(((-1.0 + (1.0 + 4.0 * t).sqrt()) * 1.5 + 0.25 * PI).cos() * 0.3 + 0.4)
}

pub fn rhs_seir(x: &[f64], beta: f64, alpha: f64, gamma: f64) -> Result<[f64; 4]> {
    let [s, e, i, r] = [x[0], x[1], x[2], x[3]];
    let n = s + e + i + r;
    if !(n > 0.0) {
        return Err(Error::DegenerateState(format!("population size {n} is not positive")));
    }
    let infection = beta * s * i / n;
    Ok([
        -infection,
        infection - alpha * e,
        alpha * e - gamma * i,
        gamma * i,
    ])
}

pub fn rhs_quadratic(x: f64, alpha: f64, beta: f64) -> f64 {
    alpha * x - beta * x * x
}

#[derive(Debug, Clone)]
enum RhsKind {
    Seir {
        alpha: (usize, Transform),
        gamma: (usize, Transform),
        beta_box: Option<Transform>,
    },
    Quadratic {
        alpha: (usize, Transform),
    },
}

/// UDE right-hand side over the full raw parameter vector.
#[derive(Debug, Clone)]
pub struct UdeRhs {
    kind: RhsKind,
    mlp: MlpSpec,
    net: Range<usize>,
    n_params: usize,
    n_x: usize,
}

fn scalar_segment(space: &ParamSpace, name: &str) -> Result<(usize, Transform)> {
    let (seg, range) = space
        .find(name)
        .ok_or_else(|| Error::Config(format!("parameter space lacks `{name}`")))?;
    if seg.len != 1 {
        return Err(Error::Config(format!("segment `{name}` must be scalar")));
    }
    Ok((range.start, seg.transform))
}

/// Build the vector field (t, x, θ_raw) → dx of a problem.
pub fn compose_ude_rhs(problem: &UdeProblem, space: &ParamSpace) -> Result<UdeRhs> {
    let net = space
        .network_range()
        .ok_or_else(|| Error::Config("parameter space lacks a network segment".into()))?;
    Error::check_len("network segment", problem.mlp.n_params(), net.len())?;
    let kind = match problem.net_role {
        NetRole::TimeVaryingInput => RhsKind::Seir {
            alpha: scalar_segment(space, "alpha")?,
            gamma: scalar_segment(space, "gamma")?,
            beta_box: problem.beta_box,
        },
        NetRole::AdditiveTerm => RhsKind::Quadratic {
            alpha: scalar_segment(space, "alpha")?,
        },
    };
    Ok(UdeRhs {
        kind,
        mlp: problem.mlp.clone(),
        net,
        n_params: space.total_dim(),
        n_x: problem.n_x,
    })
}

fn net_failure(value: f64) -> Error {
    Error::SimulationFailure(format!("network produced non-finite output {value}"))
}

impl VectorField for UdeRhs {
    fn dim(&self) -> usize {
        self.n_x
    }

    fn n_params(&self) -> usize {
        self.n_params
    }

    fn eval(&self, t: f64, x: &[f64], theta: &[f64], dx: &mut [f64]) -> Result<()> {
        let net = &theta[self.net.clone()];
        match &self.kind {
            RhsKind::Seir {
                alpha,
                gamma,
                beta_box,
            } => {
                let out = self.mlp.forward_scalar(net, t)?;
                let (beta, _) = beta_link(beta_box.as_ref(), out);
                if !beta.is_finite() {
                    return Err(net_failure(out));
                }
                let a = alpha.1.to_natural(theta[alpha.0]);
                let g = gamma.1.to_natural(theta[gamma.0]);
                dx.copy_from_slice(&rhs_seir(x, beta, a, g)?);
            }
            RhsKind::Quadratic { alpha } => {
                let out = self.mlp.forward_scalar(net, x[0])?;
                if !out.is_finite() {
                    return Err(net_failure(out));
                }
                let a = alpha.1.to_natural(theta[alpha.0]);
                dx[0] = a * x[0] - out;
            }
        }
        Ok(())
    }

    fn vjp(
        &self,
        t: f64,
        x: &[f64],
        theta: &[f64],
        w: &[f64],
        grad_x: &mut [f64],
        grad_theta: &mut [f64],
    ) -> Result<()> {
        let net = &theta[self.net.clone()];
        match &self.kind {
            RhsKind::Seir {
                alpha,
                gamma,
                beta_box,
            } => {
                let out = self.mlp.forward_scalar(net, t)?;
                let (beta, dbeta) = beta_link(beta_box.as_ref(), out);
                if !beta.is_finite() {
                    return Err(net_failure(out));
                }
                let a = alpha.1.to_natural(theta[alpha.0]);
                let g = gamma.1.to_natural(theta[gamma.0]);
                let [s, e, i, r] = [x[0], x[1], x[2], x[3]];
                let n = s + e + i + r;
                if !(n > 0.0) {
                    return Err(Error::DegenerateState(format!(
                        "population size {n} is not positive"
                    )));
                }
                let flow = s * i / n;
                let dw_infection = w[1] - w[0];
                // d/dβ
                let g_beta = flow * dw_infection;
                // d/dα, d/dγ
                grad_theta[alpha.0] += e * (w[2] - w[1]) * alpha.1.derivative(theta[alpha.0]);
                grad_theta[gamma.0] += i * (w[3] - w[2]) * gamma.1.derivative(theta[gamma.0]);
                // d/dx
                let gs = beta * dw_infection;
                let sin2 = s * i / (n * n);
                grad_x[0] += gs * (i / n - sin2);
                grad_x[1] += gs * (-sin2) + a * (w[2] - w[1]);
                grad_x[2] += gs * (s / n - sin2) + g * (w[3] - w[2]);
                grad_x[3] += gs * (-sin2);
                let upstream = g_beta * dbeta;
                self.mlp
                    .vjp_scalar(net, t, upstream, &mut grad_theta[self.net.clone()])?;
            }
            RhsKind::Quadratic { alpha } => {
                let a = alpha.1.to_natural(theta[alpha.0]);
                grad_theta[alpha.0] += w[0] * x[0] * alpha.1.derivative(theta[alpha.0]);
                let (out, din) =
                    self.mlp
                        .vjp_scalar(net, x[0], -w[0], &mut grad_theta[self.net.clone()])?;
                if !out.is_finite() {
                    return Err(net_failure(out));
                }
                grad_x[0] += w[0] * a + din;
            }
        }
        Ok(())
    }
}

/// Data-generating system with the true rates; has no parameters.
#[derive(Debug, Clone)]
pub struct ReferenceSystem {
    scenario: Scenario,
    breakpoints: Vec<f64>,
}

impl ReferenceSystem {
    pub fn new(scenario: Scenario) -> Self {
        let breakpoints = match scenario {
            Scenario::SeirPulse => vec![15.0, 30.0],
            _ => Vec::new(),
        };
        Self {
            scenario,
            breakpoints,
        }
    }

    /// True transmission rate (SEIR scenarios only).
    pub fn beta(&self, t: f64) -> Result<f64> {
        match self.scenario {
            Scenario::SeirPulse => Ok(beta_pulse(t)),
            Scenario::SeirWaves => beta_waves(t),
            Scenario::Quadratic => Err(Error::Config(
                "the quadratic scenario has no transmission rate".into(),
            )),
        }
    }
}

impl VectorField for ReferenceSystem {
    fn dim(&self) -> usize {
        if self.scenario.is_seir() {
            4
        } else {
            1
        }
    }

    fn n_params(&self) -> usize {
        0
    }

    fn eval(&self, t: f64, x: &[f64], _theta: &[f64], dx: &mut [f64]) -> Result<()> {
        let truth = self.scenario.true_parameters();
        match self.scenario {
            Scenario::Quadratic => dx[0] = rhs_quadratic(x[0], truth[0].1, truth[1].1),
            _ => dx.copy_from_slice(&rhs_seir(x, self.beta(t)?, truth[0].1, truth[1].1)?),
        }
        Ok(())
    }

    fn vjp(
        &self,
        _t: f64,
        _x: &[f64],
        _theta: &[f64],
        _w: &[f64],
        _grad_x: &mut [f64],
        _grad_theta: &mut [f64],
    ) -> Result<()> {
        Err(Error::Unsupported(
            "the reference system is not differentiated".into(),
        ))
    }

    fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pulse_values() {
        assert_eq!(beta_pulse(20.0), 0.5);
        assert_eq!(beta_pulse(10.0), 0.05);
        assert_eq!(beta_pulse(15.0), 0.05);
        assert_eq!(beta_pulse(30.0), 0.05);
    }

    #[test]
    fn waves_values() {
        let b0 = beta_waves(0.0).unwrap();
        assert!((b0 - (0.3 * (PI / 4.0).cos() + 0.4)).abs() < 1e-15);
        assert!((b0 - 0.61213).abs() < 1e-5);
        let b2 = 0.3 * (3.0 + PI / 4.0).cos() + 0.4;
        assert!((beta_waves(2.0).unwrap() - b2).abs() < 1e-15);
        assert!((b2 - 0.160_054_8).abs() < 1e-7);
        assert!(beta_waves(-1.0).is_err());
        for k in 0..=1300 {
            let b = beta_waves(k as f64 * 0.1).unwrap();
            assert!((0.1..=0.7).contains(&b));
        }
    }

    #[test]
    fn seir_rhs_example() {
        let d = rhs_seir(&[0.995, 0.004, 0.001, 0.0], 0.5, 0.9, 0.1).unwrap();
        let expected = [-4.975e-4, -3.1025e-3, 3.5e-3, 1.0e-4];
        for (a, b) in d.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        let extinct = rhs_seir(&[0.7, 0.0, 0.0, 0.3], 0.5, 0.9, 0.1).unwrap();
        assert_eq!(extinct[0], 0.0);
        assert_eq!(extinct[3], 0.0);
        assert!(matches!(
            rhs_seir(&[0.0; 4], 0.5, 0.9, 0.1),
            Err(Error::DegenerateState(_))
        ));
    }

    #[test]
    fn quadratic_rhs() {
        assert!((rhs_quadratic(0.1, 1.0, 2.0) - 0.08).abs() < 1e-15);
        assert_eq!(rhs_quadratic(0.5, 1.0, 2.0), 0.0);
        assert_eq!(rhs_quadratic(0.0, 1.0, 2.0), 0.0);
    }

    #[test]
    fn parameter_counts() {
        let seir = UdeProblem::new(Scenario::SeirWaves, NoiseKind::Gaussian, &ModelOptions::default())
            .unwrap();
        assert_eq!(seir.default_space().total_dim(), 64);
        assert_eq!(seir.n_y(), 2);
        let quad = UdeProblem::new(Scenario::Quadratic, NoiseKind::Gaussian, &ModelOptions::default())
            .unwrap();
        assert_eq!(quad.default_space().total_dim(), 63);
        assert_eq!(quad.net_role, NetRole::AdditiveTerm);
        assert!(UdeProblem::new(Scenario::Quadratic, NoiseKind::NegBin, &ModelOptions::default()).is_err());
    }

    #[test]
    fn zero_network_behaviour() {
        let seir = UdeProblem::new(Scenario::SeirPulse, NoiseKind::Gaussian, &ModelOptions::default())
            .unwrap();
        let space = seir.default_space();
        let rhs = compose_ude_rhs(&seir, &space).unwrap();
        let theta = vec![0.0; 64];
        let x = [0.9, 0.05, 0.05, 0.0];
        let mut dx = [0.0; 4];
        rhs.eval(50.0, &x, &theta, &mut dx).unwrap();
        // β = exp(0) = 1, α = 12, γ = 0.5
        let expected = rhs_seir(&x, 1.0, 12.0, 0.5).unwrap();
        assert_eq!(dx, expected);
        assert_eq!(seir.beta_of(&theta[2..63], 77.0).unwrap(), 1.0);

        let quad = UdeProblem::new(Scenario::Quadratic, NoiseKind::Gaussian, &ModelOptions::default())
            .unwrap();
        let qspace = quad.default_space();
        let qrhs = compose_ude_rhs(&quad, &qspace).unwrap();
        let mut theta = vec![0.0; 63];
        theta[0] = 0.4f64.ln();
        let mut d = [0.0];
        qrhs.eval(0.0, &[0.3], &theta, &mut d).unwrap();
        assert!((d[0] - 0.4 * 0.3).abs() < 1e-15);
    }

    #[test]
    fn composed_seir_conserves_population() {
        let seir = UdeProblem::new(Scenario::SeirWaves, NoiseKind::Gaussian, &ModelOptions::default())
            .unwrap();
        let space = seir.default_space();
        let rhs = compose_ude_rhs(&seir, &space).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let theta: Vec<f64> = (0..64).map(|_| rng.random_range(-2.0..2.0)).collect();
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut dx = [0.0; 4];
            rhs.eval(rng.random_range(0.0..130.0), &x, &theta, &mut dx).unwrap();
            let scale: f64 = dx.iter().map(|v| v.abs()).sum();
            assert!(dx.iter().sum::<f64>().abs() <= 4.0 * f64::EPSILON * scale.max(1e-300));
        }
    }

    fn check_vjp(problem: &UdeProblem, seed: u64) {
        let space = problem.default_space();
        let rhs = compose_ude_rhs(problem, &space).unwrap();
        let d = space.total_dim();
        let nx = problem.n_x;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let theta: Vec<f64> = (0..d).map(|_| rng.random_range(-0.8..0.8)).collect();
            let x: Vec<f64> = (0..nx).map(|_| rng.random_range(0.05..1.0)).collect();
            let w: Vec<f64> = (0..nx).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = rng.random_range(0.0..10.0);
            let mut gx = vec![0.0; nx];
            let mut gt = vec![0.0; d];
            rhs.vjp(t, &x, &theta, &w, &mut gx, &mut gt).unwrap();
            let f = |x: &[f64], th: &[f64]| {
                let mut dx = vec![0.0; nx];
                rhs.eval(t, x, th, &mut dx).unwrap();
                dx.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
            };
            let h = 1e-6;
            for j in 0..d {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += h;
                tm[j] -= h;
                let fd = (f(&x, &tp) - f(&x, &tm)) / (2.0 * h);
                assert!((fd - gt[j]).abs() <= 1e-6 * (1.0 + fd.abs()), "θ[{j}]: {fd} vs {}", gt[j]);
            }
            for j in 0..nx {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = (f(&xp, &theta) - f(&xm, &theta)) / (2.0 * h);
                assert!((fd - gx[j]).abs() <= 1e-6 * (1.0 + fd.abs()), "x[{j}]: {fd} vs {}", gx[j]);
            }
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        for scenario in [Scenario::SeirWaves, Scenario::Quadratic] {
            let p = UdeProblem::new(scenario, NoiseKind::Gaussian, &ModelOptions::default()).unwrap();
            check_vjp(&p, 3);
        }
        let boxed = UdeProblem::new(
            Scenario::SeirPulse,
            NoiseKind::NegBin,
            &ModelOptions {
                beta_box: true,
                ..Default::default()
            },
        )
        .unwrap();
        check_vjp(&boxed, 4);
    }
}
