use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use udeuq_bench::{quadratic, seir_waves, theta};
use udeuq_core::predict::{uniform_grid, Predictor};

fn likelihood(c: &mut Criterion) {
    for (name, m) in [("quadratic", quadratic()), ("seir_waves", seir_waves())] {
        let th = theta(&m);
        c.bench_function(&format!("negll/{name}"), |b| b.iter(|| m.negll(black_box(&th))));
        c.bench_function(&format!("negll_grad/{name}"), |b| b.iter(|| m.negll_grad(black_box(&th))));
    }
}

fn forward(c: &mut Criterion) {
    let m = seir_waves();
    let th = theta(&m);
    let p = Predictor::from_model(&m);
    let grid = uniform_grid(m.problem().t_span, 200);
    let draws = vec![th];
    c.bench_function("simulate/seir_waves_200pt", |b| {
        b.iter(|| p.simulate_draws(black_box(&draws), None, &grid).unwrap())
    });
    let mlp = &m.problem().mlp;
    let w = &draws[0][m.space().network_range().unwrap()];
    c.bench_function("mlp/forward", |b| b.iter(|| mlp.forward(black_box(w), black_box(&[0.3]))));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = likelihood, forward
}
criterion_main!(benches);
