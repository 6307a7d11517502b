use udeuq_core::stats::{mean, variance};
use udeuq_core::target::DiagGaussian;
use udeuq_core::vi::{kl_to_diag_gaussian, vi_fit, vi_sample, MeanFieldPosterior, ViConfig};

#[test]
fn recovers_one_dimensional_gaussian() {
    let target = DiagGaussian::new(vec![3.0], vec![0.5]);
    let cfg = ViConfig {
        steps: 2000,
        seed: 1,
        ..Default::default()
    };
    let q = vi_fit(&target, &[0.0], &cfg).unwrap();
    let sigma = q.sigma()[0];
    assert!((q.mu[0] - 3.0).abs() < 0.05, "mu {}", q.mu[0]);
    assert!((sigma - 0.5).abs() < 0.05, "sigma {sigma}");
    let kl = kl_to_diag_gaussian(&q, &target.mean, &target.sd);
    assert!(kl < 0.01, "kl {kl}");
    assert_eq!(q.elbo_trace.len(), 2000);
}

#[test]
fn recovers_diagonal_scales() {
    let target = DiagGaussian::new(vec![-1.0, 4.0], vec![0.2, 3.0]);
    let cfg = ViConfig {
        steps: 3000,
        seed: 2,
        ..Default::default()
    };
    let q = vi_fit(&target, &[0.0, 0.0], &cfg).unwrap();
    for (s, t) in q.sigma().iter().zip(&target.sd) {
        assert!((s / t - 1.0).abs() < 0.1, "{s} vs {t}");
    }
    assert!(kl_to_diag_gaussian(&q, &target.mean, &target.sd) < 0.01);
}

#[test]
fn sample_moments() {
    let q = MeanFieldPosterior {
        mu: vec![2.0, -1.0],
        log_sigma: vec![0.3f64.ln(), 1.5f64.ln()],
        elbo_trace: vec![],
    };
    let draws = vi_sample(&q, 100_000, 7);
    for d in 0..2 {
        let x: Vec<f64> = draws.iter().map(|v| v[d]).collect();
        let s = q.sigma()[d];
        assert!((mean(&x) - q.mu[d]).abs() < 0.02 * q.mu[d].abs());
        assert!((variance(&x) / (s * s) - 1.0).abs() < 0.02);
    }
    assert_eq!(vi_sample(&q, 5, 7), vi_sample(&q, 5, 7));
    assert_ne!(vi_sample(&q, 5, 7), vi_sample(&q, 5, 8));
}

#[test]
fn persistence_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let q = MeanFieldPosterior {
        mu: vec![0.1, 0.2],
        log_sigma: vec![-2.0, -1.0],
        elbo_trace: vec![-5.0, -4.5],
    };
    let names = vec!["alpha".to_string(), "sigma".to_string()];
    q.save(dir.path(), "vi", &names).unwrap();
    let (back, n) = MeanFieldPosterior::load(dir.path(), "vi").unwrap();
    assert_eq!(back, q);
    assert_eq!(n, names);
}
