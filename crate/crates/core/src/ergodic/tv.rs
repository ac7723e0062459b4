//! Histogram-based total-variation distance between the time-t law of the
//! fast subsystem and its invariant sample.

use super::measure::EmpiricalMeasure;
use crate::error::{TsError, TsResult};
use crate::model::TwoScaleModel;
use crate::quad::linear_fit;
use crate::rng::PathStream;
use crate::sim::FastStepper;
use rayon::prelude::*;

/// TV estimate at one checkpoint.
#[derive(Clone, Copy, Debug)]
pub struct TvPoint {
    pub t: f64,
    pub tv_estimate: f64,
}

/// TV trajectory with a power-law fit of the decay.
///
/// `decay_exponent` is the fitted `e` in `tv ~ (1 + t)^{-e}` over the
/// checkpoints with positive time and estimate (`None` when fewer than two
/// qualify).  `low_occupancy` flags fewer than 100 paths per bin on
/// average, where the histogram noise floor swamps the estimate.
#[derive(Clone, Debug)]
pub struct TvProfile {
    pub points: Vec<TvPoint>,
    pub decay_exponent: Option<f64>,
    pub fit_r2: Option<f64>,
    pub noise_floor: f64,
    pub low_occupancy: bool,
}

/// Estimate TV distance to `reference` at each checkpoint by simulating
/// `n_paths` trajectories from `y0` and comparing fixed-width histograms.
///
/// Bins cover the reference's 0.1%-99.9% quantile box with `n_bins` cells
/// per axis (out-of-box samples land in the edge cells); supports one or
/// two fast dimensions.
#[allow(clippy::too_many_arguments)]
pub fn tv_decay_profile(
    model: &TwoScaleModel,
    x_frozen: &[f64],
    y0: &[f64],
    time_checkpoints: &[f64],
    n_paths: u64,
    dt: f64,
    seed: u64,
    n_bins: usize,
    reference: &EmpiricalMeasure,
) -> TsResult<TvProfile> {
    let m = model.fast_dim();
    if m > 2 {
        return Err(TsError::invalid("histogram TV supports at most two fast dimensions"));
    }
    if reference.dim() != m || y0.len() != m || x_frozen.len() != model.slow_dim() {
        return Err(TsError::invalid("dimension mismatch between model, start point and reference"));
    }
    if time_checkpoints.is_empty() {
        return Err(TsError::invalid("need at least one checkpoint"));
    }
    if time_checkpoints.windows(2).any(|w| w[0] >= w[1]) || time_checkpoints[0] < 0.0 {
        return Err(TsError::invalid("checkpoints must be nonnegative and strictly increasing"));
    }
    if n_paths == 0 || n_bins < 2 {
        return Err(TsError::invalid("need paths and at least two bins per axis"));
    }
    if !(dt > 0.0) {
        return Err(TsError::invalid("time step must be positive"));
    }

    // Histogram geometry from the reference sample.
    let mut lo = vec![0.0; m];
    let mut hi = vec![0.0; m];
    for c in 0..m {
        lo[c] = reference.quantile(c, 0.001);
        hi[c] = reference.quantile(c, 0.999);
        if !(hi[c] > lo[c]) {
            return Err(TsError::invalid("reference sample is degenerate along an axis"));
        }
    }
    let total_bins = n_bins.pow(m as u32);
    let flat = |y: &[f64]| -> usize {
        let mut idx = 0;
        for c in 0..m {
            let frac = (y[c] - lo[c]) / (hi[c] - lo[c]);
            let b = ((frac * n_bins as f64).floor() as i64).clamp(0, n_bins as i64 - 1) as usize;
            idx = idx * n_bins + b;
        }
        idx
    };

    let mut ref_hist = vec![0.0; total_bins];
    for i in 0..reference.count() {
        ref_hist[flat(reference.point(i))] += reference.weight(i);
    }

    // Checkpoint step indices.
    let cp_steps: Vec<u64> = time_checkpoints.iter().map(|&t| (t / dt).round() as u64).collect();
    let last = *cp_steps.last().unwrap();

    // Per-path snapshots at every checkpoint, then one histogram per
    // checkpoint accumulated in path order.
    let snapshots: Vec<Vec<f64>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let stream = PathStream::new(seed, p);
            let mut stepper = FastStepper::new(model, x_frozen, dt);
            let mut y = y0.to_vec();
            let mut out = Vec::with_capacity(cp_steps.len() * m);
            let mut next_cp = 0;
            for step in 0..=last {
                while next_cp < cp_steps.len() && cp_steps[next_cp] == step {
                    out.extend_from_slice(&y);
                    next_cp += 1;
                }
                if step < last {
                    stepper.step(&mut y, &stream, step)?;
                }
            }
            Ok(out)
        })
        .collect::<TsResult<_>>()?;

    let w_path = 1.0 / n_paths as f64;
    let mut points = Vec::with_capacity(cp_steps.len());
    for (k, &t) in time_checkpoints.iter().enumerate() {
        let mut hist = vec![0.0; total_bins];
        for snap in &snapshots {
            hist[flat(&snap[k * m..(k + 1) * m])] += w_path;
        }
        let tv = 0.5
            * hist
                .iter()
                .zip(&ref_hist)
                .map(|(&a, &b)| (a - b).abs())
                .sum::<f64>();
        points.push(TvPoint { t, tv_estimate: tv });
    }

    // Power-law decay fit on log(1 + t) vs log(tv).
    let fit_pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.t > 0.0 && p.tv_estimate > 0.0)
        .map(|p| ((1.0 + p.t).ln(), p.tv_estimate.ln()))
        .collect();
    let (decay_exponent, fit_r2) = if fit_pts.len() >= 2 {
        let xs: Vec<f64> = fit_pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = fit_pts.iter().map(|p| p.1).collect();
        let (slope, _icept, r2) = linear_fit(&xs, &ys);
        (Some(-slope), Some(r2))
    } else {
        (None, None)
    };

    let occupancy = n_paths as f64 / total_bins as f64;
    Ok(TvProfile {
        points,
        decay_exponent,
        fit_r2,
        noise_floor: (total_bins as f64 / n_paths as f64).sqrt(),
        low_occupancy: occupancy < 100.0,
    })
}
