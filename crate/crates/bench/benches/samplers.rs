use criterion::{criterion_group, criterion_main, Criterion};
use udeuq_bench::{quadratic, theta};
use udeuq_core::mcmc::{nuts_sample, NutsConfig};
use udeuq_core::target::DiagGaussian;
use udeuq_core::vi::{vi_fit, ViConfig};

fn gaussian(c: &mut Criterion) {
    let target = DiagGaussian::new(vec![0.0; 10], (1..=10).map(|k| k as f64 / 5.0).collect());
    let cfg = NutsConfig {
        n_samples: 500,
        n_warmup: 500,
        ..Default::default()
    };
    c.bench_function("nuts/gaussian_10d_1000", |b| b.iter(|| nuts_sample(&target, &[0.5; 10], &cfg).unwrap()));
    let vc = ViConfig {
        steps: 500,
        ..Default::default()
    };
    c.bench_function("vi/gaussian_10d_500", |b| b.iter(|| vi_fit(&target, &[0.0; 10], &vc).unwrap()));
}

fn ude(c: &mut Criterion) {
    let m = quadratic();
    let th = theta(&m);
    let cfg = NutsConfig {
        n_samples: 10,
        n_warmup: 10,
        max_depth: 5,
        ..Default::default()
    };
    c.bench_function("nuts/quadratic_20", |b| b.iter(|| nuts_sample(&m, &th, &cfg).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = gaussian, ude
}
criterion_main!(benches);
