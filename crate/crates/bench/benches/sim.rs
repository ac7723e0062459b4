//! Throughput of the coupled path integrator and the Monte Carlo payoff
//! estimator at two scale separations.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use twoscale::sim::{estimate_payoff, integrate_two_scale, ControlPolicy};
use twoscale::{make_benchmark, BenchmarkSpec, LqParams};

fn path_integration(c: &mut Criterion) {
    let mut group = c.benchmark_group("integrate_two_scale");
    for &eps in &[0.5, 0.05] {
        let model = make_benchmark(&BenchmarkSpec::LqDeepRelax(LqParams::default()))
            .unwrap()
            .with_epsilon(eps)
            .unwrap();
        let policy = ControlPolicy::constant(&[1.0]);
        // Keep the fast step inside the stiffness guard at both ratios.
        let dt = (eps / 10.0).min(2e-3);
        group.bench_with_input(BenchmarkId::from_parameter(eps), &eps, |b, _| {
            let mut path = 0u64;
            b.iter(|| {
                path += 1;
                integrate_two_scale(&model, &policy, &[1.0], &[0.5], dt, 7, path).unwrap()
            })
        });
    }
    group.finish();
}

fn payoff_estimation(c: &mut Criterion) {
    let model = make_benchmark(&BenchmarkSpec::LqDeepRelax(LqParams::default()))
        .unwrap()
        .with_epsilon(0.2)
        .unwrap();
    let policy = ControlPolicy::constant(&[0.5]);
    c.bench_function("estimate_payoff/64_paths", |b| {
        b.iter(|| {
            estimate_payoff(&model, &policy, 0.0, &[1.0], &[0.5], 2e-3, 64, 11).unwrap()
        })
    });
}

criterion_group!(benches, path_integration, payoff_estimation);
criterion_main!(benches);
