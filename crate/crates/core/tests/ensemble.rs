use proptest::prelude::*;
use udeuq_core::ensemble::{build_ensemble, chi2_quantile, select_members, waterfall, Ensemble, EnsembleConfig};
use udeuq_core::likelihood::{generate_dataset, LikelihoodModel, NoiseModel};
use udeuq_core::mcmc::{warm_start, WarmStartConfig};
use udeuq_core::model::{ModelOptions, Scenario, UdeProblem};
use udeuq_core::ode::SolverConfig;
use udeuq_core::optimize::{FitConfig, FitResult, IterationCounts, StopReason};

fn quadratic(sigma: f64, seed: u64) -> LikelihoodModel {
    let noise = NoiseModel::Gaussian { sigma };
    let problem = UdeProblem::new(Scenario::Quadratic, noise.kind(), &ModelOptions::default()).unwrap();
    let space = problem.default_space();
    let data = generate_dataset(Scenario::Quadratic, noise, seed).unwrap();
    LikelihoodModel::new(problem, space, data, SolverConfig::training((0.0, 10.0))).unwrap()
}

fn fake(negll: f64) -> FitResult {
    FitResult {
        theta_best_raw: vec![negll],
        negll_train: negll,
        negll_val: negll,
        negll_full: negll,
        negll_val_last: negll,
        converged: true,
        stop_reason: StopReason::MaxIterations,
        seed: 0,
        iterations_used: IterationCounts::default(),
    }
}

#[test]
fn small_ensemble_end_to_end() {
    let m = quadratic(0.05, 7);
    let cfg = EnsembleConfig {
        m: 6,
        fit: FitConfig {
            adam_epochs: 300,
            qn_max_iters: 100,
            seed: 10,
            ..Default::default()
        },
        ..Default::default()
    };
    let ens = build_ensemble(&m, &cfg, 2).unwrap();
    assert_eq!(ens.fits.len(), 6);
    assert!(ens.accepted[ens.mle_index]);
    let best = ens.fits[ens.mle_index].negll_full;
    for (f, &acc) in ens.fits.iter().zip(&ens.accepted) {
        assert!(f.negll_full >= best);
        assert_eq!(acc, 2.0 * (f.negll_full - best) <= ens.threshold);
        // reported negLL is that of the returned parameters
        assert!((m.negll(&f.theta_best_raw) - f.negll_full).abs() < 1e-8 * f.negll_full.abs().max(1.0));
    }
    for (i, f) in ens.fits.iter().enumerate() {
        assert_eq!(f.seed, 10 + i as u64);
    }

    // scheduling does not change results
    let serial = build_ensemble(&m, &cfg, 1).unwrap();
    assert_eq!(serial, ens);

    let dir = tempfile::tempdir().unwrap();
    ens.save(dir.path()).unwrap();
    let back = Ensemble::load(dir.path()).unwrap();
    assert_eq!(back.accepted, ens.accepted);
    assert_eq!(back.fits, ens.fits);
    let wf = std::fs::read_to_string(dir.path().join("waterfall.csv")).unwrap();
    assert_eq!(wf.lines().count(), 7);
    assert!(wf.lines().nth(1).unwrap().starts_with("1,0"));
}

#[test]
fn warm_start_improves_on_prior_draw() {
    let m = quadratic(0.05, 8);
    let cfg = WarmStartConfig::default();
    let theta = warm_start(&m, &cfg).unwrap();
    assert_eq!(theta.len(), m.n_params());
    assert!(m.log_posterior(&theta) > udeuq_core::likelihood::prior::LOG_DENSITY_SENTINEL);
    // oracle: a handful of raw prior draws
    let prior = udeuq_core::ensemble::sample_start_points(m.space(), &m.problem().mlp, 10, 1000, cfg.net_init).unwrap();
    let best_prior = prior.iter().map(|p| m.log_posterior(p)).fold(f64::NEG_INFINITY, f64::max);
    assert!(m.log_posterior(&theta) >= best_prior);
}

proptest! {
    #[test]
    fn acceptance_invariant_under_constant_shift(
        negll in prop::collection::vec(-50.0f64..50.0, 1..30),
        shift in -1e3f64..1e3,
    ) {
        let a = select_members(negll.iter().map(|&v| fake(v)).collect(), 0.05, 1).unwrap();
        let b = select_members(negll.iter().map(|&v| fake(v + shift)).collect(), 0.05, 1).unwrap();
        prop_assert_eq!(a.accepted, b.accepted);
        prop_assert_eq!(a.mle_index, b.mle_index);
    }

    #[test]
    fn smaller_alpha_accepts_superset(
        negll in prop::collection::vec(0.0f64..10.0, 1..30),
        a1 in 0.001f64..0.5,
        a2 in 0.001f64..0.5,
        df in 1usize..4,
    ) {
        let (lo, hi) = if a1 < a2 { (a1, a2) } else { (a2, a1) };
        let loose = select_members(negll.iter().map(|&v| fake(v)).collect(), lo, df).unwrap();
        let strict = select_members(negll.iter().map(|&v| fake(v)).collect(), hi, df).unwrap();
        prop_assert!(chi2_quantile(lo, df).unwrap() >= chi2_quantile(hi, df).unwrap());
        for (l, s) in loose.accepted.iter().zip(&strict.accepted) {
            prop_assert!(*l || !*s);
        }
    }

    #[test]
    fn waterfall_is_sorted_from_zero(negll in prop::collection::vec(-1e3f64..1e3, 1..40)) {
        let fits: Vec<FitResult> = negll.iter().map(|&v| fake(v)).collect();
        let w = waterfall(&fits);
        prop_assert_eq!(w[0].1, 0.0);
        prop_assert!(w.windows(2).all(|p| p[0].1 <= p[1].1 && p[1].0 == p[0].0 + 1));
    }
}
