//! First-exit statistics of the fast subsystem from centered balls, the
//! Laplace functional `E[exp(-delta tau)]`, and the closed-form reflected
//! barrier used to bound exit probabilities.

use crate::error::{TsError, TsResult};
use crate::model::TwoScaleModel;
use crate::quad::mean_and_se;
use crate::rng::PathStream;
use crate::sim::FastStepper;
use rayon::prelude::*;

/// Exit times of one trajectory set from the ball of one radius.
///
/// Paths that have not left the ball by the censoring horizon carry
/// `censored = true` and an exit time equal to the horizon.
#[derive(Clone, Debug)]
pub struct ExitTimeEnsemble {
    pub radius: f64,
    pub y0: Vec<f64>,
    pub times: Vec<f64>,
    pub censored: Vec<bool>,
    pub censor_horizon: f64,
    pub seed: u64,
}

impl ExitTimeEnsemble {
    pub fn n_paths(&self) -> usize {
        self.times.len()
    }

    pub fn censored_fraction(&self) -> f64 {
        self.censored.iter().filter(|&&c| c).count() as f64 / self.censored.len() as f64
    }

    /// Mean of the recorded times with censored paths at the horizon; a
    /// lower bound for the true mean exit time.
    pub fn observed_mean(&self) -> f64 {
        mean_and_se(&self.times).0
    }
}

/// Default censoring horizon `10 n^2 / rho_bar`, matching the quadratic
/// lower bound on mean exit times for a unit-diffusion ball.
pub fn default_censor_horizon(radius: f64, rho_bar: f64) -> f64 {
    10.0 * radius * radius / rho_bar
}

/// Simulate first-exit times from the balls `|y| >= radius` for every
/// radius in the increasing list, reusing one trajectory set: each path runs
/// until it leaves the largest ball (or hits the horizon), and crossing
/// times of the smaller radii are recorded on the way out.  Per-path
/// nesting `tau(n1) <= tau(n2)` for `n1 <= n2` holds exactly.
#[allow(clippy::too_many_arguments)]
pub fn exit_time_ensemble(
    model: &TwoScaleModel,
    x_frozen: &[f64],
    y0: &[f64],
    radius_list: &[f64],
    dt: f64,
    n_paths: u64,
    censor_horizon: f64,
    seed: u64,
) -> TsResult<Vec<ExitTimeEnsemble>> {
    let m = model.fast_dim();
    if y0.len() != m || x_frozen.len() != model.slow_dim() {
        return Err(TsError::invalid("state dimensions do not match the model"));
    }
    if radius_list.is_empty() || radius_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TsError::invalid("radius list must be nonempty and strictly increasing"));
    }
    let start_norm = y0.iter().map(|v| v * v).sum::<f64>().sqrt();
    if start_norm >= radius_list[0] {
        return Err(TsError::invalid(format!(
            "start point at |y0| = {start_norm} already outside the smallest ball (radius {})",
            radius_list[0]
        )));
    }
    if !(censor_horizon > 0.0 && censor_horizon.is_finite()) {
        return Err(TsError::invalid("censoring horizon must be positive and finite"));
    }
    if n_paths == 0 || !(dt > 0.0) {
        return Err(TsError::invalid("need at least one path and dt > 0"));
    }

    let n_radii = radius_list.len();
    let max_steps = (censor_horizon / dt).ceil() as u64;

    // Per path: (first crossing time, censored flag) per radius.
    let per_path: Vec<Vec<(f64, bool)>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let stream = PathStream::new(seed, p);
            let mut stepper = FastStepper::new(model, x_frozen, dt);
            let mut y = y0.to_vec();
            let mut out = vec![(censor_horizon, true); n_radii];
            let mut next = 0usize;
            for step in 0..max_steps {
                stepper.step(&mut y, &stream, step)?;
                let t = (step + 1) as f64 * dt;
                let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                while next < n_radii && norm >= radius_list[next] {
                    out[next] = (t.min(censor_horizon), false);
                    next += 1;
                }
                if next == n_radii {
                    break;
                }
            }
            Ok(out)
        })
        .collect::<TsResult<_>>()?;

    let mut ensembles: Vec<ExitTimeEnsemble> = radius_list
        .iter()
        .map(|&radius| ExitTimeEnsemble {
            radius,
            y0: y0.to_vec(),
            times: Vec::with_capacity(n_paths as usize),
            censored: Vec::with_capacity(n_paths as usize),
            censor_horizon,
            seed,
        })
        .collect();
    for path in &per_path {
        for (r, &(t, c)) in path.iter().enumerate() {
            ensembles[r].times.push(t);
            ensembles[r].censored.push(c);
        }
    }
    Ok(ensembles)
}

/// Monte Carlo estimate of the Laplace functional on an exit ensemble.
#[derive(Clone, Copy, Debug)]
pub struct LaplaceExit {
    pub estimate: f64,
    pub standard_error: f64,
    /// Upper bound on the (positive) bias from censored paths, which
    /// contribute `exp(-delta * horizon)` instead of their true value.
    pub censoring_bias_bound: f64,
}

/// `E[exp(-delta tau)]` with censored paths truncated at the horizon.
pub fn laplace_exit(ensemble: &ExitTimeEnsemble, delta: f64) -> TsResult<LaplaceExit> {
    if !(delta > 0.0) {
        return Err(TsError::invalid("decay rate delta must be positive"));
    }
    let vals: Vec<f64> = ensemble.times.iter().map(|&t| (-delta * t).exp()).collect();
    let (estimate, standard_error) = mean_and_se(&vals);
    Ok(LaplaceExit {
        estimate,
        standard_error,
        censoring_bias_bound: ensemble.censored_fraction()
            * (-delta * ensemble.censor_horizon).exp(),
    })
}

fn barrier_roots(eta: f64, gamma: f64) -> (f64, f64) {
    let disc = (eta * eta + 4.0 * gamma).sqrt();
    (0.5 * (eta + disc), 0.5 * (eta - disc))
}

fn check_barrier_args(z: f64, n: f64, big_r: f64, eta: f64, gamma: f64) -> TsResult<()> {
    if !(big_r < n) {
        return Err(TsError::invalid(format!("need inner radius {big_r} < outer radius {n}")));
    }
    if !(eta > 0.0 && gamma > 0.0) {
        return Err(TsError::invalid("eta and gamma must be positive"));
    }
    if !(big_r..=n).contains(&z) {
        return Err(TsError::invalid(format!("z = {z} outside [{big_r}, {n}]")));
    }
    Ok(())
}

/// Closed-form solution of `phi'' - eta phi' - gamma phi = 0` on `[R, n]`
/// with reflecting derivative at `R` (`phi'(R) = 0`) and `phi(n) = 1`:
///
/// ```text
/// phi(z) = (-l2 e^{l1 (z-R)} + l1 e^{l2 (z-R)})
///        / (-l2 e^{l1 (n-R)} + l1 e^{l2 (n-R)}),
/// l_{1,2} = (eta +- sqrt(eta^2 + 4 gamma)) / 2.
/// ```
///
/// Increasing on `[R, n]` with values in `(0, 1]`.
pub fn reflected_barrier_phi(z: f64, n: f64, big_r: f64, eta: f64, gamma: f64) -> TsResult<f64> {
    check_barrier_args(z, n, big_r, eta, gamma)?;
    let (l1, l2) = barrier_roots(eta, gamma);
    let num = -l2 * (l1 * (z - big_r)).exp() + l1 * (l2 * (z - big_r)).exp();
    let den = -l2 * (l1 * (n - big_r)).exp() + l1 * (l2 * (n - big_r)).exp();
    Ok(num / den)
}

/// Residual `phi'' - eta phi' - gamma phi` of the closed form at `z`
/// (analytic derivatives; roundoff-level for consistent inputs).
pub fn reflected_barrier_residual(z: f64, n: f64, big_r: f64, eta: f64, gamma: f64) -> TsResult<f64> {
    check_barrier_args(z, n, big_r, eta, gamma)?;
    let (l1, l2) = barrier_roots(eta, gamma);
    let den = -l2 * (l1 * (n - big_r)).exp() + l1 * (l2 * (n - big_r)).exp();
    let e1 = (l1 * (z - big_r)).exp();
    let e2 = (l2 * (z - big_r)).exp();
    let phi = (-l2 * e1 + l1 * e2) / den;
    let dphi = (-l2 * l1 * e1 + l1 * l2 * e2) / den;
    let ddphi = (-l2 * l1 * l1 * e1 + l1 * l2 * l2 * e2) / den;
    Ok(ddphi - eta * dphi - gamma * phi)
}
