//! Fixtures shared by the benchmarks.

use udeuq_core::likelihood::{generate_dataset, LikelihoodModel, NoiseModel};
use udeuq_core::model::{ModelOptions, NetInit, Scenario, UdeProblem};
use udeuq_core::ode::SolverConfig;

/// Likelihood model on the catalog dataset (seed 1) with the training solver.
pub fn model(scenario: Scenario, noise: NoiseModel) -> LikelihoodModel {
    let problem = UdeProblem::new(scenario, noise.kind(), &ModelOptions::default()).expect("catalog problem");
    let space = problem.default_space();
    let data = generate_dataset(scenario, noise, 1).expect("catalog dataset");
    LikelihoodModel::new(problem, space, data, SolverConfig::training(scenario.t_span())).expect("model")
}

pub fn quadratic() -> LikelihoodModel {
    model(Scenario::Quadratic, NoiseModel::Gaussian { sigma: 0.05 })
}

pub fn seir_waves() -> LikelihoodModel {
    model(Scenario::SeirWaves, NoiseModel::Gaussian { sigma: 0.01 })
}

/// Raw parameter vector with a small Glorot network and zero elsewhere.
pub fn theta(m: &LikelihoodModel) -> Vec<f64> {
    let space = m.space();
    let mut theta = vec![0.0; space.total_dim()];
    let net = space.network_range().expect("network segment");
    let w = m.problem().mlp.init(7, NetInit::GlorotUniform);
    for (t, w) in theta[net].iter_mut().zip(w) {
        *t = 0.3 * w;
    }
    theta
}
