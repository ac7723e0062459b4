//! Invariant-measure sampling, exit-time ensembles, and the exact
//! quantile-coupling distance on sample sets of realistic size.

use criterion::{criterion_group, criterion_main, Criterion};

use twoscale::ergodic::{
    exit_time_ensemble, sample_invariant_measure_chains, wasserstein2_1d, EmpiricalMeasure,
};
use twoscale::rng::CounterRng;
use twoscale::{make_benchmark, BenchmarkSpec, OuParams};

fn invariant_sampling(c: &mut Criterion) {
    let model = make_benchmark(&BenchmarkSpec::Ou(OuParams::default())).unwrap();
    c.bench_function("sample_invariant_measure/10k", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            sample_invariant_measure_chains(&model, &[0.0], 10_000, 4.0, 0.25, 0.01, seed, 4)
                .unwrap()
        })
    });
}

fn exit_times(c: &mut Criterion) {
    let model = make_benchmark(&BenchmarkSpec::Ou(OuParams::default())).unwrap();
    c.bench_function("exit_time_ensemble/500_paths", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            exit_time_ensemble(&model, &[0.0], &[0.0], &[1.0, 1.5, 2.0], 1e-3, 500, 8.0, seed)
                .unwrap()
        })
    });
}

fn quantile_coupling(c: &mut Criterion) {
    let mut rng = CounterRng::new(5, 0);
    let a: Vec<f64> = (0..20_000).map(|_| rng.normal()).collect();
    let b_: Vec<f64> = (0..20_000).map(|_| 0.3 + 1.2 * rng.normal()).collect();
    let ma = EmpiricalMeasure::from_samples(1, a).unwrap();
    let mb = EmpiricalMeasure::from_samples(1, b_).unwrap();
    c.bench_function("wasserstein2_1d/20k_vs_20k", |b| {
        b.iter(|| wasserstein2_1d(&ma, &mb).unwrap())
    });
}

criterion_group!(benches, invariant_sampling, exit_times, quantile_coupling);
criterion_main!(benches);
