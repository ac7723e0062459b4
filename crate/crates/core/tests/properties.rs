//! Randomized invariant checks: closed forms that must hold for every
//! admissible parameter set, metric axioms, bit-level determinism of the
//! counter RNG, and admissibility of the step counts the CFL helpers hand
//! to the solvers.

use proptest::prelude::*;
use std::sync::Arc;

use twoscale::ergodic::{
    exit_time_ensemble, reflected_barrier_phi, reflected_barrier_residual, wasserstein2_1d,
    EmpiricalMeasure,
};
use twoscale::hjb::{
    effective_cfl_steps, full_cfl_steps, solve_effective_hjb, solve_full_hjb,
    EffectiveHamiltonian, GridSpec1d, GridSpec2d,
};
use twoscale::rng::{CounterRng, PathStream};
use twoscale::{make_benchmark, BenchmarkSpec, LqParams, OuParams};

fn measure(samples: Vec<f64>) -> EmpiricalMeasure {
    EmpiricalMeasure::from_samples(1, samples).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // The barrier is normalized by its own value at the outer radius, so
    // phi(n) = 1 to the last bit, not merely to a tolerance.
    #[test]
    fn barrier_is_one_at_the_outer_radius(
        big_r in 0.3f64..2.5,
        width in 0.3f64..4.0,
        eta in 0.1f64..4.0,
        gamma in 0.1f64..4.0,
    ) {
        let n = big_r + width;
        let phi = reflected_barrier_phi(n, n, big_r, eta, gamma).unwrap();
        prop_assert_eq!(phi, 1.0);
    }

    #[test]
    fn barrier_increases_through_the_unit_interval(
        big_r in 0.3f64..2.5,
        width in 0.3f64..4.0,
        eta in 0.1f64..4.0,
        gamma in 0.1f64..4.0,
    ) {
        let n = big_r + width;
        let mut prev = 0.0f64;
        for k in 0..=60 {
            let z = (big_r + width * k as f64 / 60.0).min(n);
            let phi = reflected_barrier_phi(z, n, big_r, eta, gamma).unwrap();
            prop_assert!(phi > 0.0 && phi <= 1.0, "phi({z}) = {phi} outside (0, 1]");
            prop_assert!(phi >= prev - 1e-14, "phi dips at z = {z}: {prev} -> {phi}");
            prev = phi;
        }
    }

    #[test]
    fn barrier_satisfies_its_ode(
        big_r in 0.3f64..2.5,
        width in 0.3f64..4.0,
        eta in 0.1f64..4.0,
        gamma in 0.1f64..4.0,
        frac in 0.0f64..1.0,
    ) {
        let n = big_r + width;
        let z = big_r + frac * width;
        let r = reflected_barrier_residual(z, n, big_r, eta, gamma).unwrap();
        prop_assert!(r.abs() < 1e-9, "residual {r} at z = {z}");
    }

    // Quantile-coupling distance: identity, symmetry, triangle inequality,
    // and exactness under translation of the whole sample set.
    #[test]
    fn quantile_coupling_is_a_metric(
        a in prop::collection::vec(-5.0f64..5.0, 3..40),
        b in prop::collection::vec(-5.0f64..5.0, 3..40),
        c in prop::collection::vec(-5.0f64..5.0, 3..40),
    ) {
        let (ma, mb, mc) = (measure(a), measure(b), measure(c));
        let dab = wasserstein2_1d(&ma, &mb).unwrap();
        let dba = wasserstein2_1d(&mb, &ma).unwrap();
        let dbc = wasserstein2_1d(&mb, &mc).unwrap();
        let dac = wasserstein2_1d(&ma, &mc).unwrap();
        let daa = wasserstein2_1d(&ma, &ma).unwrap();
        prop_assert!(daa.abs() < 1e-12, "self-distance {daa}");
        prop_assert!((dab - dba).abs() <= 1e-12 * (1.0 + dab.abs()));
        prop_assert!(
            dac <= dab + dbc + 1e-10 * (1.0 + dac),
            "triangle violated: {dac} > {dab} + {dbc}"
        );
    }

    #[test]
    fn quantile_coupling_translation_is_exact(
        a in prop::collection::vec(-5.0f64..5.0, 3..60),
        shift in -4.0f64..4.0,
    ) {
        let shifted: Vec<f64> = a.iter().map(|v| v + shift).collect();
        let d = wasserstein2_1d(&measure(a), &measure(shifted)).unwrap();
        // Shifting every sample moves each quantile by the same amount, but
        // the samples themselves are rounded, so allow ulp-scale slack.
        prop_assert!(
            (d - shift.abs()).abs() <= 1e-9 * (1.0 + shift.abs()),
            "translate by {shift}: distance {d}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn path_stream_is_a_pure_function(
        seed in any::<u64>(),
        path in 0u64..1 << 40,
        step in 0u64..1 << 40,
        coord in 0u32..16,
    ) {
        let s = PathStream::new(seed, path);
        let u1 = s.uniform(step, coord as u64);
        let u2 = PathStream::new(seed, path).uniform(step, coord as u64);
        prop_assert_eq!(u1.to_bits(), u2.to_bits());
        prop_assert!((0.0..1.0).contains(&u1), "uniform {u1} outside [0, 1)");

        let z1 = s.normal(step, coord);
        let z2 = PathStream::new(seed, path).normal(step, coord);
        prop_assert_eq!(z1.to_bits(), z2.to_bits());
        prop_assert!(z1.is_finite());

        // Distinct counters decorrelate: flipping any index changes the draw
        // (equal bits would be a 2^-52 coincidence; treat it as a bug).
        prop_assert_ne!(s.normal(step, coord).to_bits(), s.normal(step + 1, coord).to_bits());
        prop_assert_ne!(s.normal(step, coord).to_bits(), s.normal(step, coord + 1).to_bits());
        prop_assert_ne!(
            PathStream::new(seed, path).normal(step, coord).to_bits(),
            PathStream::new(seed, path + 1).normal(step, coord).to_bits()
        );
    }

    #[test]
    fn counter_rng_replays_bitwise(
        seed in any::<u64>(),
        stream in any::<u64>(),
        lo in -10.0f64..0.0,
        span in 0.5f64..20.0,
    ) {
        let mut r1 = CounterRng::new(seed, stream);
        let mut r2 = CounterRng::new(seed, stream);
        for _ in 0..64 {
            prop_assert_eq!(r1.next_u64(), r2.next_u64());
        }
        let hi = lo + span;
        for _ in 0..64 {
            let v = r1.uniform_in(lo, hi);
            prop_assert!((lo..hi).contains(&v) || v == lo, "uniform_in escaped [{lo}, {hi}): {v}");
            let i = r1.index(13);
            prop_assert!(i < 13);
            prop_assert!(r1.normal().is_finite());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    // One trajectory set serves every radius, so the recorded exit times
    // must nest pathwise, and censoring must only ever affect the outer
    // radii once it affects an inner one.
    #[test]
    fn exit_times_nest_across_radii(
        seed in any::<u64>(),
        r0 in 0.8f64..1.2,
        gap1 in 0.2f64..0.6,
        gap2 in 0.2f64..0.6,
        dt in 1e-3f64..4e-3,
    ) {
        let model = make_benchmark(&BenchmarkSpec::Ou(OuParams::default())).unwrap();
        let radii = [r0, r0 + gap1, r0 + gap1 + gap2];
        let ens = exit_time_ensemble(&model, &[0.0], &[0.0], &radii, dt, 150, 6.0, seed).unwrap();
        prop_assert_eq!(ens.len(), 3);
        for w in ens.windows(2) {
            prop_assert!(w[0].observed_mean() <= w[1].observed_mean() + 1e-12);
            for p in 0..w[0].times.len() {
                prop_assert!(w[0].times[p] <= w[1].times[p]);
                if w[0].censored[p] {
                    prop_assert!(w[1].censored[p], "outer exit after inner censoring");
                }
            }
            prop_assert!(w[0].censored_fraction() <= w[1].censored_fraction());
        }
    }

    // Regression: the step count returned by the CFL helper must satisfy the
    // solver's own strict stability check, including the case where the
    // ceiling lands exactly on the bound and `T / nt` rounds above it.
    #[test]
    fn full_step_counts_are_admissible(
        horizon in 0.05f64..0.5,
        epsilon in 0.4f64..1.0,
    ) {
        let model = make_benchmark(&BenchmarkSpec::LqDeepRelax(LqParams {
            control_points: 5,
            ..LqParams::default()
        }))
        .unwrap()
        .with_horizon(horizon)
        .unwrap();
        let base = GridSpec2d {
            x_lo: 0.0, x_hi: 2.0, y_lo: -2.0, y_hi: 3.0, nx: 9, ny: 9, nt: 1,
        };
        let nt = full_cfl_steps(&model, &base, epsilon).unwrap();
        let grid = GridSpec2d { nt, ..base };
        let field = solve_full_hjb(&model, &grid, epsilon).unwrap();
        prop_assert!(field.values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn effective_step_counts_are_admissible(
        t_end in 0.1f64..1.0,
        diff in 0.1f64..1.0,
        speed in 0.0f64..2.0,
    ) {
        let eval = move |_t: f64, x: f64, p: f64, pp: f64| -> f64 {
            -diff * pp + speed * p.abs() - x * x
        };
        let h = EffectiveHamiltonian::Evaluator(&eval);
        let terminal = |x: f64| x * x;
        let base = GridSpec1d { x_lo: -1.0, x_hi: 2.0, nx: 17, nt: 1, t_end };
        let nt = effective_cfl_steps(&h, &terminal, &base, 0.0).unwrap();
        let grid = GridSpec1d { nt, ..base };
        let field = solve_effective_hjb(&h, &terminal, &grid, 0.0).unwrap();
        prop_assert!(field.values.iter().all(|v| v.is_finite()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    // With no discounting, adding a constant to the terminal reward rides
    // through every backward step untouched: differences see it cancel and
    // the minimum over controls commutes with the shift.
    #[test]
    fn constant_terminal_shift_rides_through_the_full_solver(
        shift in 0.1f64..5.0,
        epsilon in 0.5f64..1.0,
    ) {
        let model = make_benchmark(&BenchmarkSpec::LqDeepRelax(LqParams {
            control_points: 5,
            ..LqParams::default()
        }))
        .unwrap()
        .with_horizon(0.3)
        .unwrap();
        let lifted = model.with_terminal(Arc::new(move |x: &[f64], _y: &[f64]| {
            x[0] * x[0] + shift
        }));
        let base = GridSpec2d {
            x_lo: 0.0, x_hi: 2.0, y_lo: -2.0, y_hi: 3.0, nx: 9, ny: 9, nt: 1,
        };
        let nt = full_cfl_steps(&model, &base, epsilon)
            .unwrap()
            .max(full_cfl_steps(&lifted, &base, epsilon).unwrap());
        let grid = GridSpec2d { nt, ..base };
        let v0 = solve_full_hjb(&model, &grid, epsilon).unwrap();
        let v1 = solve_full_hjb(&lifted, &grid, epsilon).unwrap();
        for (a, b) in v0.values.iter().zip(&v1.values) {
            prop_assert!(
                (b - a - shift).abs() < 1e-9 * (1.0 + shift),
                "shift {shift} distorted to {}",
                b - a
            );
        }
    }
}
