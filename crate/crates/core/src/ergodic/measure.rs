//! Empirical measures of the fast subsystem and long-run sampling.

use crate::error::{TsError, TsResult};
use crate::model::TwoScaleModel;
use crate::quad::pairwise_sum;
use crate::report::CsvTable;
use crate::rng::PathStream;
use crate::sim::FastStepper;
use rayon::prelude::*;

/// How an empirical measure was generated.
#[derive(Clone, Debug)]
pub struct Provenance {
    pub model_id: String,
    pub x_frozen: Vec<f64>,
    pub burn_in: f64,
    pub thinning: f64,
    pub dt: f64,
    pub seed: u64,
}

/// Weighted point cloud in R^m with cached raw moments per coordinate.
#[derive(Clone, Debug)]
pub struct EmpiricalMeasure {
    dim: usize,
    samples: Vec<f64>,
    /// `None` means uniform `1/count`.
    weights: Option<Vec<f64>>,
    /// `moments[k - 1][c]` is the raw moment of order `k` of coordinate `c`.
    moments: Vec<Vec<f64>>,
    provenance: Option<Provenance>,
}

impl EmpiricalMeasure {
    /// Uniformly weighted measure from a flat `count x dim` sample array.
    pub fn from_samples(dim: usize, samples: Vec<f64>) -> TsResult<EmpiricalMeasure> {
        if dim == 0 || samples.is_empty() || samples.len() % dim != 0 {
            return Err(TsError::invalid("sample array shape mismatch"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(TsError::invalid("samples must be finite"));
        }
        let mut m = EmpiricalMeasure {
            dim,
            samples,
            weights: None,
            moments: Vec::new(),
            provenance: None,
        };
        m.moments = m.compute_moments();
        Ok(m)
    }

    /// Weighted measure; weights must be nonnegative and sum to 1 within
    /// 1e-12.
    pub fn from_weighted(dim: usize, samples: Vec<f64>, weights: Vec<f64>) -> TsResult<EmpiricalMeasure> {
        if dim == 0 || samples.is_empty() || samples.len() % dim != 0 {
            return Err(TsError::invalid("sample array shape mismatch"));
        }
        if weights.len() * dim != samples.len() {
            return Err(TsError::invalid("one weight per sample required"));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(TsError::invalid("weights must be nonnegative"));
        }
        let total = pairwise_sum(&weights);
        if (total - 1.0).abs() > 1e-12 {
            return Err(TsError::invalid(format!("weights sum to {total}, expected 1")));
        }
        let mut m = EmpiricalMeasure {
            dim,
            samples,
            weights: Some(weights),
            moments: Vec::new(),
            provenance: None,
        };
        m.moments = m.compute_moments();
        Ok(m)
    }

    pub fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance = Some(p);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.count() as f64,
        }
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    /// Raw moment `E[y_c^order]` for `order` in `1..=4`, from the cache.
    pub fn raw_moment(&self, coord: usize, order: usize) -> f64 {
        assert!((1..=4).contains(&order), "cached moments cover orders 1..=4");
        self.moments[order - 1][coord]
    }

    pub fn mean(&self, coord: usize) -> f64 {
        self.raw_moment(coord, 1)
    }

    pub fn variance(&self, coord: usize) -> f64 {
        let m1 = self.raw_moment(coord, 1);
        self.raw_moment(coord, 2) - m1 * m1
    }

    /// Weighted expectation of an arbitrary function of the sample point.
    pub fn expectation(&self, h: impl Fn(&[f64]) -> f64) -> f64 {
        let vals: Vec<f64> = (0..self.count())
            .map(|i| self.weight(i) * h(self.point(i)))
            .collect();
        pairwise_sum(&vals)
    }

    /// Empirical quantile of one coordinate by sorted-sample interpolation,
    /// `q` in [0, 1].
    pub fn quantile(&self, coord: usize, q: f64) -> f64 {
        let mut vals: Vec<f64> = (0..self.count()).map(|i| self.point(i)[coord]).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let pos = q.clamp(0.0, 1.0) * (vals.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        let frac = pos - lo as f64;
        vals[lo] * (1.0 - frac) + vals[hi] * frac
    }

    /// Recomputes the moment cache from scratch and compares; `true` when
    /// every entry agrees within 1e-12 relative.
    pub fn verify_moments(&self) -> bool {
        let fresh = self.compute_moments();
        for (a_row, b_row) in self.moments.iter().zip(&fresh) {
            for (&a, &b) in a_row.iter().zip(b_row) {
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return false;
                }
            }
        }
        true
    }

    fn compute_moments(&self) -> Vec<Vec<f64>> {
        let count = self.count();
        let mut out = vec![vec![0.0; self.dim]; 4];
        let mut buf = vec![0.0; count];
        for c in 0..self.dim {
            for order in 1..=4usize {
                for (i, slot) in buf.iter_mut().enumerate() {
                    let y = self.samples[i * self.dim + c];
                    *slot = self.weight(i) * y.powi(order as i32);
                }
                out[order - 1][c] = pairwise_sum(&buf);
            }
        }
        out
    }

    /// CSV with header `y_1..y_m,weight`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut header: Vec<String> = (1..=self.dim).map(|i| format!("y_{i}")).collect();
        header.push("weight".to_string());
        let mut table = CsvTable::new(&header);
        let mut row = vec![0.0; self.dim + 1];
        for i in 0..self.count() {
            row[..self.dim].copy_from_slice(self.point(i));
            row[self.dim] = self.weight(i);
            table.push_row(&row);
        }
        table.render()
    }
}

/// Crude relaxation-time estimate for the frozen-x fast drift: the inverse
/// spectral abscissa of the Jacobian of `b` at `y = 0`, by central
/// differences.  Errors if the Jacobian is not Hurwitz there.
pub fn relaxation_time_probe(model: &TwoScaleModel, x_frozen: &[f64]) -> TsResult<f64> {
    let m = model.fast_dim();
    let h = 1e-5;
    let mut jac = nalgebra::DMatrix::zeros(m, m);
    let mut y_hi = vec![0.0; m];
    let mut y_lo = vec![0.0; m];
    let mut b_hi = vec![0.0; m];
    let mut b_lo = vec![0.0; m];
    for j in 0..m {
        y_hi.fill(0.0);
        y_lo.fill(0.0);
        y_hi[j] = h;
        y_lo[j] = -h;
        model.eval_b(x_frozen, &y_hi, &mut b_hi);
        model.eval_b(x_frozen, &y_lo, &mut b_lo);
        for i in 0..m {
            jac[(i, j)] = (b_hi[i] - b_lo[i]) / (2.0 * h);
        }
    }
    let abscissa = jac
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(abscissa < 0.0) {
        return Err(TsError::constraint(
            "relaxation",
            format!("fast drift Jacobian at the origin has spectral abscissa {abscissa:.3e} >= 0"),
        ));
    }
    Ok(-1.0 / abscissa)
}

/// Long-run sample of the frozen-x fast subsystem by a single thinned
/// trajectory: the first `burn_in_time` is discarded, then one sample is
/// kept every `thinning_time`.
pub fn sample_invariant_measure(
    model: &TwoScaleModel,
    x_frozen: &[f64],
    n_samples: usize,
    burn_in_time: f64,
    thinning_time: f64,
    dt: f64,
    seed: u64,
) -> TsResult<EmpiricalMeasure> {
    sample_invariant_measure_chains(model, x_frozen, n_samples, burn_in_time, thinning_time, dt, seed, 1)
}

/// Parallel-chain variant: `n_chains` independent trajectories, each with
/// its own burn-in, contributing an equal share of samples (the first chains
/// absorb any remainder).  Samples are concatenated in chain order, so the
/// result does not depend on scheduling.
#[allow(clippy::too_many_arguments)]
pub fn sample_invariant_measure_chains(
    model: &TwoScaleModel,
    x_frozen: &[f64],
    n_samples: usize,
    burn_in_time: f64,
    thinning_time: f64,
    dt: f64,
    seed: u64,
    n_chains: usize,
) -> TsResult<EmpiricalMeasure> {
    let m = model.fast_dim();
    if x_frozen.len() != model.slow_dim() {
        return Err(TsError::invalid("frozen slow state dimension mismatch"));
    }
    if n_samples == 0 || n_chains == 0 {
        return Err(TsError::invalid("need at least one sample and one chain"));
    }
    if !(burn_in_time > 0.0) {
        return Err(TsError::invalid("burn-in time must be positive"));
    }
    if !(dt > 0.0) || thinning_time < dt {
        return Err(TsError::invalid("need dt > 0 and thinning_time >= dt"));
    }
    let burn_steps = (burn_in_time / dt).ceil() as u64;
    let thin_steps = (thinning_time / dt).round().max(1.0) as u64;

    let base = n_samples / n_chains;
    let extra = n_samples % n_chains;
    let quotas: Vec<usize> = (0..n_chains).map(|c| base + usize::from(c < extra)).collect();

    let chains: Vec<Vec<f64>> = quotas
        .par_iter()
        .enumerate()
        .map(|(chain, &quota)| {
            let stream = PathStream::new(seed, chain as u64);
            let mut stepper = FastStepper::new(model, x_frozen, dt);
            let mut y = vec![0.0; m];
            let mut out = Vec::with_capacity(quota * m);
            let mut step: u64 = 0;
            for _ in 0..burn_steps {
                stepper.step(&mut y, &stream, step)?;
                step += 1;
            }
            for _ in 0..quota {
                for _ in 0..thin_steps {
                    stepper.step(&mut y, &stream, step)?;
                    step += 1;
                }
                out.extend_from_slice(&y);
            }
            Ok(out)
        })
        .collect::<TsResult<_>>()?;

    let samples: Vec<f64> = chains.concat();
    let provenance = Provenance {
        model_id: model.id().to_string(),
        x_frozen: x_frozen.to_vec(),
        burn_in: burn_in_time,
        thinning: thinning_time,
        dt,
        seed,
    };
    Ok(EmpiricalMeasure::from_samples(m, samples)?.with_provenance(provenance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::benchmarks::{make_benchmark, BenchmarkSpec, LqParams, OuParams};

    #[test]
    fn moments_cache_and_verify() {
        let mu = EmpiricalMeasure::from_samples(1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(mu.mean(0), 2.5);
        assert_eq!(mu.raw_moment(0, 2), 7.5);
        assert!((mu.variance(0) - 1.25).abs() < 1e-14);
        assert!(mu.verify_moments());
    }

    #[test]
    fn weighted_measure_validation() {
        assert!(EmpiricalMeasure::from_weighted(1, vec![0.0, 1.0], vec![0.5, 0.4]).is_err());
        assert!(EmpiricalMeasure::from_weighted(1, vec![0.0, 1.0], vec![-0.1, 1.1]).is_err());
        let mu = EmpiricalMeasure::from_weighted(1, vec![0.0, 1.0], vec![0.25, 0.75]).unwrap();
        assert_eq!(mu.mean(0), 0.75);
    }

    #[test]
    fn csv_round_trip_shape() {
        let mu = EmpiricalMeasure::from_samples(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let csv = mu.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "y_1,y_2,weight");
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn ou_invariant_moments() {
        // Stationary law is N(0, rho_bar / kappa) = N(0, 1).
        let model = make_benchmark(&BenchmarkSpec::Ou(OuParams::default())).unwrap();
        let mu = sample_invariant_measure_chains(&model, &[0.0], 100_000, 5.0, 1.0, 0.005, 11, 4)
            .unwrap();
        assert_eq!(mu.count(), 100_000);
        assert!(mu.mean(0).abs() < 0.02, "mean {}", mu.mean(0));
        assert!((mu.variance(0) - 1.0).abs() < 0.02, "var {}", mu.variance(0));
        assert!(mu.verify_moments());
    }

    #[test]
    fn lq_invariant_mean_tracks_slow_state() {
        // Gibbs mean x / (1 + q gamma) = 2/3 at x = 1.
        let model = make_benchmark(&BenchmarkSpec::LqDeepRelax(LqParams::default())).unwrap();
        let mu = sample_invariant_measure_chains(&model, &[1.0], 50_000, 5.0, 0.2, 0.005, 3, 4)
            .unwrap();
        assert!((mu.mean(0) - 2.0 / 3.0).abs() < 0.02, "mean {}", mu.mean(0));
        assert!((mu.variance(0) - 1.0 / 3.0).abs() < 0.02, "var {}", mu.variance(0));
    }

    #[test]
    fn deterministic_attractor_collapses() {
        // rho = 0, b = -(y - 2): chains start at the origin and contract to
        // the attractor within e^{-burn_in} of it.
        let model = TwoScaleModel::builder(1, 1, 1)
            .fast_drift(std::sync::Arc::new(|_x, y, out| out[0] = -(y[0] - 2.0)))
            .build()
            .unwrap();
        let mu = sample_invariant_measure(&model, &[0.0], 100, 10.0, 0.1, 0.001, 1).unwrap();
        for i in 0..mu.count() {
            assert!((mu.point(i)[0] - 2.0).abs() <= 2.1 * (-10.0_f64).exp());
        }
    }

    #[test]
    fn single_chain_reproducible() {
        let model = make_benchmark(&BenchmarkSpec::Ou(OuParams::default())).unwrap();
        let a = sample_invariant_measure(&model, &[0.0], 500, 1.0, 0.05, 0.01, 42).unwrap();
        let b = sample_invariant_measure(&model, &[0.0], 500, 1.0, 0.05, 0.01, 42).unwrap();
        assert_eq!(a.point(499), b.point(499));
    }

    #[test]
    fn relaxation_probe_ou() {
        let model = make_benchmark(&BenchmarkSpec::Ou(OuParams {
            kappa: 4.0,
            mean: 0.0,
            rho_bar: 1.0,
        }))
        .unwrap();
        let t = relaxation_time_probe(&model, &[0.0]).unwrap();
        assert!((t - 0.25).abs() < 1e-6, "relaxation time {t}");
        let unstable = TwoScaleModel::builder(1, 1, 1)
            .fast_drift(std::sync::Arc::new(|_x, y, out| out[0] = y[0]))
            .build()
            .unwrap();
        assert!(relaxation_time_probe(&unstable, &[0.0]).is_err());
    }
}
