use udeuq_core::likelihood::{generate_dataset, negll_gaussian, LikelihoodModel, NoiseModel};
use udeuq_core::model::{ModelOptions, NetInit, Scenario, UdeProblem};
use udeuq_core::ode::SolverConfig;
use udeuq_core::optimize::{fit_single, FitConfig};

fn quadratic(sigma: f64, seed: u64) -> LikelihoodModel {
    let noise = NoiseModel::Gaussian { sigma };
    let problem = UdeProblem::new(Scenario::Quadratic, noise.kind(), &ModelOptions::default()).unwrap();
    let space = problem.default_space();
    let data = generate_dataset(Scenario::Quadratic, noise, seed).unwrap();
    LikelihoodModel::new(problem, space, data, SolverConfig::training((0.0, 10.0))).unwrap()
}

fn start(model: &LikelihoodModel) -> Vec<f64> {
    let mut theta = vec![0.0; model.n_params()];
    theta[0] = 0.0;
    theta[1..62].copy_from_slice(&model.problem().mlp.init(4, NetInit::GlorotUniform));
    theta[62] = 0.5f64.ln();
    theta
}

#[test]
fn zero_budget_returns_start() {
    let m = quadratic(0.01, 1);
    let cfg = FitConfig {
        adam_epochs: 0,
        qn_max_iters: 0,
        ..Default::default()
    };
    let x0 = start(&m);
    let r = fit_single(&m, &cfg, &x0).unwrap();
    assert_eq!(r.theta_best_raw, x0);
    assert!((r.negll_full - m.negll(&x0)).abs() < 1e-9);
    assert_eq!((r.iterations_used.adam, r.iterations_used.quasi_newton), (0, 0));
}

#[test]
fn default_fit_reaches_generator_likelihood() {
    let m = quadratic(0.01, 2);
    let cfg = FitConfig {
        seed: 4,
        ..Default::default()
    };
    let r = fit_single(&m, &cfg, &start(&m)).unwrap();
    // oracle: the generating trajectory and noise level
    let data = m.data();
    let truth = data.ground_truth.as_ref().unwrap();
    let pred: Vec<f64> = truth.reference.states.iter().map(|x| x[0]).collect();
    let obs: Vec<f64> = data.observations.iter().map(|y| y[0]).collect();
    let oracle = negll_gaussian(&pred, &obs, 0.01).unwrap();
    assert!((r.negll_full - oracle).abs() <= 5.0, "fit {} vs generator {}", r.negll_full, oracle);
    assert!(r.negll_val <= r.negll_val_last);
    assert!(r.converged, "{:?}", r.stop_reason);
}

#[test]
fn penalty_excluded_from_reported_negll() {
    let m = quadratic(0.05, 3);
    let base = FitConfig {
        adam_epochs: 30,
        qn_max_iters: 5,
        ..Default::default()
    };
    let heavy = FitConfig {
        l2_penalty: 10.0,
        ..base.clone()
    };
    for cfg in [base, heavy] {
        let r = fit_single(&m, &cfg, &start(&m)).unwrap();
        let direct = m.negll(&r.theta_best_raw);
        assert!((r.negll_full - direct).abs() < 1e-9 * direct.abs().max(1.0));
        assert!(r.negll_val <= r.negll_val_last);
    }
}

#[test]
fn deterministic_fit() {
    let m = quadratic(0.05, 4);
    let cfg = FitConfig {
        adam_epochs: 200,
        qn_max_iters: 50,
        seed: 7,
        ..Default::default()
    };
    let a = fit_single(&m, &cfg, &start(&m)).unwrap();
    let b = fit_single(&m, &cfg, &start(&m)).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
