//! Entropic smoothing of a loss landscape and the two-scale relaxation
//! dynamics built on top of it.
//!
//! A scalar loss `phi` is smoothed by Gaussian convolution at coupling
//! `gamma > 0` and inverse temperature `beta > 0`:
//!
//! ```text
//! phi_gamma(x) = -(1/beta) log[ (2 pi gamma)^{-1/2}
//!                  integral exp(-beta (phi(y) + (x - y)^2 / (2 gamma))) dy ]
//! ```
//!
//! The kernel keeps the explicit `(2 pi gamma)^{-1/2}` normalization.  Its
//! total mass is `beta^{-1/2}` rather than one when `beta != 1`, so values
//! carry the x-independent offset `log(beta) / (2 beta)` relative to the
//! unit-mass convention; gradients are unaffected.
//!
//! The sampled counterpart couples a slow descent variable to a fast
//! exploring variable: the slow state moves with drift `-u (x - y) / gamma`
//! under a learning-rate control `u in [0, 1]` and carries no noise of its
//! own, while the fast state relaxes at rate `1/eps` toward the Gibbs
//! measure of `phi(y) + (y - x)^2 / (2 gamma)`.  As the scale ratio `eps`
//! shrinks, the ensemble mean of the slow variable approaches the
//! deterministic gradient flow of `phi_gamma`; [`trajectory_gap_study`]
//! measures that gap directly.

use crate::ergodic::{gibbs_oracle, GibbsQuery, Potential};
use crate::error::{TsError, TsResult};
use crate::model::{ControlSet, TwoScaleModel};
use crate::quad::{gauss_legendre_on, log_sum_exp_weighted, mean_and_se};
use crate::report::CsvTable;
use crate::sim::{integrate_two_scale, ControlPolicy, FeedbackMap, SamplePath};
use rayon::prelude::*;
use std::f64::consts::PI;
use std::sync::Arc;

pub type LossFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Scalar loss with its gradient, the smoothing parameters, and the probed
/// regularity data that the effective-limit claims depend on.
#[derive(Clone)]
pub struct RelaxationSpec {
    loss: LossFn,
    loss_gradient: LossFn,
    pub gamma: f64,
    pub beta: f64,
    /// Largest gradient secant slope found on `probe_interval`; an upper
    /// estimate of the Lipschitz constant of the loss gradient there.
    pub lipschitz: f64,
    pub probe_interval: (f64, f64),
    /// `gamma * lipschitz < 1`: the smoothed loss is well conditioned and
    /// the effective gradient flow below is meaningful.  Descent and gap
    /// studies refuse to run without it.
    pub gamma_ok: bool,
}

impl RelaxationSpec {
    /// Builds a spec from loss closures, probing the gradient's Lipschitz
    /// constant on `[probe_lo, probe_hi]` with a dense secant sweep.
    pub fn new(
        loss: LossFn,
        loss_gradient: LossFn,
        gamma: f64,
        beta: f64,
        probe_lo: f64,
        probe_hi: f64,
    ) -> TsResult<RelaxationSpec> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(TsError::invalid(format!("coupling must be positive, got {gamma}")));
        }
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(TsError::invalid(format!(
                "inverse temperature must be positive, got {beta}"
            )));
        }
        if !(probe_lo < probe_hi && probe_lo.is_finite() && probe_hi.is_finite()) {
            return Err(TsError::invalid("Lipschitz probe interval must be a proper interval"));
        }

        // Adjacent secant slopes on a fine grid approach sup |phi''|; the
        // small inflation covers the O(h^2) gap so that wider sample pairs
        // also satisfy the bound.
        let n = 2049usize;
        let h = (probe_hi - probe_lo) / (n - 1) as f64;
        let mut max_slope = 0.0f64;
        let mut prev = loss_gradient(probe_lo);
        for i in 1..n {
            let y = probe_lo + i as f64 * h;
            let g = loss_gradient(y);
            if !g.is_finite() {
                return Err(TsError::invalid(format!("loss gradient is not finite at y = {y}")));
            }
            max_slope = max_slope.max((g - prev).abs() / h);
            prev = g;
        }
        // Interval secants sample the curvature at midpoints, half a step
        // short of the endpoints; patch in tight one-sided secants so a
        // supremum attained at the boundary is not undercut.
        let tiny = (probe_hi - probe_lo) * 1e-6;
        for (a, b) in [(probe_lo, probe_lo + tiny), (probe_hi - tiny, probe_hi)] {
            max_slope = max_slope.max((loss_gradient(b) - loss_gradient(a)).abs() / tiny);
        }
        let lipschitz = max_slope * (1.0 + 1e-4) + 1e-12;
        Ok(RelaxationSpec {
            loss,
            loss_gradient,
            gamma,
            beta,
            lipschitz,
            probe_interval: (probe_lo, probe_hi),
            gamma_ok: gamma * lipschitz < 1.0,
        })
    }

    /// Quadratic loss `phi(y) = q y^2 / 2` (use `q = 0` for a flat loss).
    pub fn quadratic(q: f64, gamma: f64, beta: f64) -> TsResult<RelaxationSpec> {
        if !(q >= 0.0 && q.is_finite()) {
            return Err(TsError::invalid(format!("quadratic weight must be >= 0, got {q}")));
        }
        RelaxationSpec::new(
            Arc::new(move |y| 0.5 * q * y * y),
            Arc::new(move |y| q * y),
            gamma,
            beta,
            -8.0,
            8.0,
        )
    }

    /// Double-well loss `phi(y) = (y^2 - 1)^2 / 4` probed on `[-2.5, 2.5]`.
    pub fn double_well(gamma: f64, beta: f64) -> TsResult<RelaxationSpec> {
        RelaxationSpec::new(
            Arc::new(|y| {
                let w = y * y - 1.0;
                0.25 * w * w
            }),
            Arc::new(|y| y * (y * y - 1.0)),
            gamma,
            beta,
            -2.5,
            2.5,
        )
    }

    pub fn loss(&self, y: f64) -> f64 {
        (self.loss)(y)
    }

    pub fn loss_gradient(&self, y: f64) -> f64 {
        (self.loss_gradient)(y)
    }
}

/// Quadrature layout for the smoothing integral: a Gauss-Legendre rule with
/// `nodes` points on a box of `half_width_sds` Gaussian standard deviations
/// `sqrt(gamma / beta)` to each side of the evaluation point.
#[derive(Clone, Copy, Debug)]
pub struct EntropyQuadrature {
    pub half_width_sds: f64,
    pub nodes: usize,
}

impl Default for EntropyQuadrature {
    fn default() -> Self {
        EntropyQuadrature { half_width_sds: 8.0, nodes: 257 }
    }
}

/// Smoothed-loss value and gradient at one point, with the gradient from
/// both independent routes (they are cross-checked before being returned).
#[derive(Clone, Copy, Debug)]
pub struct LocalEntropy {
    pub value: f64,
    /// Quadrature of the differentiated integrand.
    pub gradient: f64,
    /// `(x - E[y]) / gamma` with the mean taken under the tilted Gibbs
    /// measure on an independently sized box.
    pub gibbs_route_gradient: f64,
}

/// Evaluates the smoothed loss and its gradient at `x`.
///
/// The value comes from log-sum-exp-stabilized Gauss-Legendre quadrature of
/// the convolution.  The gradient is computed twice — once by
/// differentiating the integrand, once through the Gibbs-mean identity
/// `(x - E[y]) / gamma` on an auto-sized box — and the two must agree to
/// 1e-4 in relative terms or the call fails, flagging an inadequate
/// quadrature rather than returning a silently wrong number.
pub fn local_entropy(
    spec: &RelaxationSpec,
    x: f64,
    quad: &EntropyQuadrature,
) -> TsResult<LocalEntropy> {
    if !x.is_finite() {
        return Err(TsError::invalid("evaluation point must be finite"));
    }
    if quad.nodes < 9 {
        return Err(TsError::invalid("need at least 9 quadrature nodes"));
    }
    let z = quad.half_width_sds;
    if !(z > 1.0 && z.is_finite()) {
        return Err(TsError::invalid("quadrature half-width must exceed one standard deviation"));
    }
    // Standard upper bound on the two-sided Gaussian tail beyond z standard
    // deviations; tight to a few percent for the z of interest.
    let tail_bound = 2.0 * (-0.5 * z * z).exp() / (z * (2.0 * PI).sqrt());
    if tail_bound > 1e-8 {
        return Err(TsError::QuadratureInadequate(format!(
            "box of +/-{z} standard deviations leaves up to {tail_bound:.3e} of the Gaussian \
             factor's mass outside; need <= 1e-8"
        )));
    }

    let sd = (spec.gamma / spec.beta).sqrt();
    let (ys, ws) = gauss_legendre_on(quad.nodes, x - z * sd, x + z * sd);
    let mut terms = Vec::with_capacity(ys.len());
    for &y in &ys {
        let p = (spec.loss)(y);
        if !p.is_finite() {
            return Err(TsError::NonFinite {
                context: "loss evaluation in the smoothing quadrature".into(),
                time: 0.0,
                state: vec![y],
            });
        }
        terms.push(-spec.beta * (p + (x - y) * (x - y) / (2.0 * spec.gamma)));
    }
    let log_kernel_norm = -0.5 * (2.0 * PI * spec.gamma).ln();
    let value = -(log_sum_exp_weighted(&terms, &ws) + log_kernel_norm) / spec.beta;

    // Differentiating the integrand in x pulls down -beta (x - y) / gamma,
    // so the gradient is the integrand-weighted mean of (x - y) / gamma.
    let shift = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&y, &w), &t) in ys.iter().zip(&ws).zip(&terms) {
        let e = w * (t - shift).exp();
        den += e;
        num += (x - y) * e;
    }
    let gradient = num / (den * spec.gamma);

    let loss = spec.loss.clone();
    let loss_grad = spec.loss_gradient.clone();
    let gamma = spec.gamma;
    let tilted = Potential::new(
        1,
        Arc::new(move |y: &[f64]| loss(y[0]) + (y[0] - x) * (y[0] - x) / (2.0 * gamma)),
        Arc::new(move |y: &[f64], out: &mut [f64]| {
            out[0] = loss_grad(y[0]) + (y[0] - x) / gamma;
        }),
    );
    let gibbs_mean = gibbs_oracle(&tilted, spec.beta, GibbsQuery::Mean(0))?;
    let gibbs_route_gradient = (x - gibbs_mean) / spec.gamma;

    let scale = gradient.abs().max(gibbs_route_gradient.abs()).max(1.0);
    if !((gradient - gibbs_route_gradient).abs() <= 1e-4 * scale) {
        return Err(TsError::QuadratureInadequate(format!(
            "smoothed-gradient routes disagree at x = {x}: differentiated integrand gives \
             {gradient}, Gibbs mean gives {gibbs_route_gradient}"
        )));
    }
    if !value.is_finite() {
        return Err(TsError::NonFinite {
            context: "smoothed loss value".into(),
            time: 0.0,
            state: vec![x],
        });
    }
    Ok(LocalEntropy { value, gradient, gibbs_route_gradient })
}

/// Builds the coupled slow/fast system for a given scale ratio together
/// with the feedback policy wrapping the learning-rate map.
fn relaxation_system(
    spec: &RelaxationSpec,
    epsilon: f64,
    t_end: f64,
    x0: f64,
    y0: f64,
    learning_rate: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
) -> TsResult<(TwoScaleModel, ControlPolicy)> {
    // Spot-check the learning rate before wiring it in; runtime values are
    // additionally clamped to the [0, 1] control box.
    for &t in &[0.0, 0.5 * t_end, t_end] {
        for &y in &[y0, x0] {
            let u = learning_rate(t, x0, y);
            if !((-1e-9..=1.0 + 1e-9).contains(&u)) {
                return Err(TsError::invalid(format!(
                    "learning-rate policy must map into [0, 1]; got {u} at (t, x, y) = \
                     ({t}, {x0}, {y})"
                )));
            }
        }
    }
    let gamma = spec.gamma;
    let grad = spec.loss_gradient.clone();
    let inv_sqrt_beta = 1.0 / spec.beta.sqrt();
    let drift_gamma = gamma;
    let model = TwoScaleModel::builder(1, 1, 1)
        .id("entropic-relaxation")
        .slow_drift(Arc::new(move |x: &[f64], y: &[f64], u: &[f64], out: &mut [f64]| {
            out[0] = -u[0] * (x[0] - y[0]) / drift_gamma;
        }))
        .fast_drift(Arc::new(move |x: &[f64], y: &[f64], out: &mut [f64]| {
            out[0] = -(grad(y[0]) + (y[0] - x[0]) / gamma);
        }))
        .fast_diffusion(Arc::new(move |_x: &[f64], _y: &[f64], out: &mut [f64]| {
            out[0] = inv_sqrt_beta;
        }))
        .controls(ControlSet::grid_1d(0.0, 1.0, 2)?)
        .epsilon(epsilon)
        .horizon(t_end)
        .build()?;
    let map: FeedbackMap = Arc::new(move |t: f64, x: &[f64], y: &[f64], out: &mut [f64]| {
        out[0] = learning_rate(t, x[0], y[0]);
    });
    Ok((model, ControlPolicy::feedback(map)))
}

/// Runs an ensemble of coupled relaxation paths on `[0, t_end]`.
///
/// The slow state carries no noise and drifts with `-u (x - y) / gamma`
/// under the learning rate `u = learning_rate(t, x, y) in [0, 1]`; the
/// fast state explores the tilted loss at scale ratio `epsilon` with
/// diffusion `beta^{-1/2}`.  Requires `dt <= epsilon / 10` and an integral
/// number of steps; paths are integrated in parallel and returned in path
/// order, so results do not depend on the size of the thread pool.
pub fn run_deep_relaxation(
    spec: &RelaxationSpec,
    epsilon: f64,
    x0: f64,
    y0: f64,
    t_end: f64,
    dt: f64,
    learning_rate: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    n_paths: usize,
    seed: u64,
) -> TsResult<Vec<SamplePath>> {
    if n_paths == 0 {
        return Err(TsError::invalid("need at least one path"));
    }
    if !(x0.is_finite() && y0.is_finite()) {
        return Err(TsError::invalid("initial state must be finite"));
    }
    let (model, policy) = relaxation_system(spec, epsilon, t_end, x0, y0, learning_rate)?;
    (0..n_paths as u64)
        .into_par_iter()
        .map(|p| integrate_two_scale(&model, &policy, &[x0], &[y0], dt, seed, p))
        .collect()
}

/// Deterministic gradient-flow path on the smoothed loss, with the value
/// recorded at every node.
#[derive(Clone, Debug)]
pub struct DescentPath {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub phi_gamma: Vec<f64>,
}

impl DescentPath {
    /// Renders `t,x,phi_gamma` rows.
    pub fn to_csv(&self) -> String {
        let mut table = CsvTable::new(&["t", "x", "phi_gamma"]);
        for k in 0..self.times.len() {
            table.push_row(&[self.times[k], self.x[k], self.phi_gamma[k]]);
        }
        table.render()
    }
}

/// Explicit Euler on `dx/dt = -grad phi_gamma(x)`.
///
/// Refuses to run unless `gamma * lipschitz < 1`: outside that regime the
/// smoothed landscape is not trustworthy as an effective limit.  A zero
/// horizon returns the single-node path.
pub fn run_effective_descent(
    spec: &RelaxationSpec,
    x0: f64,
    t_end: f64,
    dt: f64,
    quad: &EntropyQuadrature,
) -> TsResult<DescentPath> {
    if !spec.gamma_ok {
        return Err(TsError::constraint(
            "coupling below inverse Lipschitz bound",
            format!(
                "gamma = {} is not below 1 / L with probed gradient Lipschitz constant L = {}",
                spec.gamma, spec.lipschitz
            ),
        ));
    }
    if !x0.is_finite() {
        return Err(TsError::invalid("initial point must be finite"));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(TsError::invalid(format!("horizon must be >= 0, got {t_end}")));
    }
    let steps =
        if t_end == 0.0 { 0 } else { crate::sim::integral_steps(t_end, dt)? };

    let mut times = Vec::with_capacity(steps + 1);
    let mut xs = Vec::with_capacity(steps + 1);
    let mut phis = Vec::with_capacity(steps + 1);
    times.push(0.0);
    xs.push(x0);
    let mut x = x0;
    for k in 0..steps {
        let e = local_entropy(spec, x, quad)?;
        phis.push(e.value);
        x -= dt * e.gradient;
        if !x.is_finite() {
            return Err(TsError::NonFinite {
                context: "effective descent".into(),
                time: (k + 1) as f64 * dt,
                state: vec![x],
            });
        }
        times.push((k + 1) as f64 * dt);
        xs.push(x);
    }
    let last = local_entropy(spec, x, quad)?;
    phis.push(last.value);
    Ok(DescentPath { times, x: xs, phi_gamma: phis })
}

/// Gap between the sampled slow variable and the effective descent, per
/// scale ratio.
#[derive(Clone, Debug)]
pub struct GapStudy {
    pub epsilons: Vec<f64>,
    /// Sup over the time grid of |ensemble mean of X - effective path|.
    pub sup_gaps: Vec<f64>,
    /// Standard error of the ensemble mean at the time attaining the sup.
    pub standard_errors: Vec<f64>,
    /// Each gap is below its predecessor, with three combined standard
    /// errors of slack.
    pub strictly_decreasing: bool,
    /// The last gap is below max(2% of |x0|, three standard errors).
    pub final_gap_bounded: bool,
    pub verdict: bool,
}

impl GapStudy {
    /// Renders `epsilon,sup_gap,se` rows.
    pub fn to_csv(&self) -> String {
        let mut table = CsvTable::new(&["epsilon", "sup_gap", "se"]);
        for k in 0..self.epsilons.len() {
            table.push_row(&[self.epsilons[k], self.sup_gaps[k], self.standard_errors[k]]);
        }
        table.render()
    }
}

/// Runs the unit-learning-rate ensemble at every scale ratio in
/// `epsilons` (which must decrease), runs the effective descent once on
/// the same time grid, and reports the sup-in-time gap per ratio.
pub fn trajectory_gap_study(
    spec: &RelaxationSpec,
    epsilons: &[f64],
    x0: f64,
    y0: f64,
    t_end: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
    quad: &EntropyQuadrature,
) -> TsResult<GapStudy> {
    if epsilons.is_empty() {
        return Err(TsError::invalid("need at least one scale ratio"));
    }
    for pair in epsilons.windows(2) {
        if !(pair[1] < pair[0]) {
            return Err(TsError::invalid("scale ratios must strictly decrease"));
        }
    }
    if !(epsilons[epsilons.len() - 1] > 0.0 && epsilons[0].is_finite()) {
        return Err(TsError::invalid("scale ratios must be positive and finite"));
    }
    if n_paths < 2 {
        return Err(TsError::invalid("need at least two paths for a standard error"));
    }
    if !(x0.is_finite() && y0.is_finite()) {
        return Err(TsError::invalid("initial state must be finite"));
    }

    let hat = run_effective_descent(spec, x0, t_end, dt, quad)?;
    let mut sup_gaps = Vec::with_capacity(epsilons.len());
    let mut ses = Vec::with_capacity(epsilons.len());
    if t_end == 0.0 {
        // Both sides start at x0, so every gap is exactly zero.
        sup_gaps.resize(epsilons.len(), 0.0);
        ses.resize(epsilons.len(), 0.0);
    } else {
        for &eps in epsilons {
            let (model, policy) = relaxation_system(spec, eps, t_end, x0, y0, |_, _, _| 1.0)?;
            let series: Vec<Vec<f64>> = (0..n_paths as u64)
                .into_par_iter()
                .map(|p| {
                    integrate_two_scale(&model, &policy, &[x0], &[y0], dt, seed, p)
                        .map(|path| path.x)
                })
                .collect::<TsResult<_>>()?;
            let n_times = series[0].len();
            debug_assert_eq!(n_times, hat.x.len());
            let mut column = vec![0.0; n_paths];
            let mut sup = 0.0f64;
            let mut se_at_sup = 0.0f64;
            for k in 0..n_times {
                for (i, s) in series.iter().enumerate() {
                    column[i] = s[k];
                }
                let (mean, se) = mean_and_se(&column);
                let gap = (mean - hat.x[k]).abs();
                if gap > sup {
                    sup = gap;
                    se_at_sup = se;
                }
            }
            sup_gaps.push(sup);
            ses.push(se_at_sup);
        }
    }

    let strictly_decreasing = (0..sup_gaps.len().saturating_sub(1)).all(|i| {
        let slack = 3.0 * (ses[i] * ses[i] + ses[i + 1] * ses[i + 1]).sqrt();
        sup_gaps[i + 1] < sup_gaps[i] + slack
    });
    let last = sup_gaps[sup_gaps.len() - 1];
    let final_gap_bounded = last <= (0.02 * x0.abs()).max(3.0 * ses[ses.len() - 1]);
    Ok(GapStudy {
        epsilons: epsilons.to_vec(),
        sup_gaps,
        standard_errors: ses,
        strictly_decreasing,
        final_gap_bounded,
        verdict: strictly_decreasing && final_gap_bounded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ergodic::{gibbs_oracle, GibbsQuery};

    fn default_quad() -> EntropyQuadrature {
        EntropyQuadrature::default()
    }

    #[test]
    fn quadratic_entropy_matches_closed_form() {
        // For phi = q y^2 / 2 the convolution is Gaussian:
        //   phi_gamma(x) = log(gamma beta (q + 1/gamma)) / (2 beta)
        //                  + q x^2 / (2 (1 + q gamma)),
        // so the gradient is q x / (1 + q gamma).
        let (q, gamma, beta) = (1.0, 0.5, 1.0);
        let spec = RelaxationSpec::quadratic(q, gamma, beta).unwrap();
        let offset = (gamma * beta * (q + 1.0 / gamma)).ln() / (2.0 * beta);
        for &x in &[-2.0, -1.0, 0.5, 1.0, 2.0] {
            let e = local_entropy(&spec, x, &default_quad()).unwrap();
            let want_grad = q * x / (1.0 + q * gamma);
            assert!(
                (e.gradient - want_grad).abs() < 1e-6,
                "gradient at {x}: {} vs {want_grad}",
                e.gradient
            );
            assert!(
                (e.gibbs_route_gradient - want_grad).abs() < 1e-6,
                "Gibbs route at {x}: {} vs {want_grad}",
                e.gibbs_route_gradient
            );
            let want_value = offset + q * x * x / (2.0 * (1.0 + q * gamma));
            assert!(
                (e.value - want_value).abs() < 1e-9,
                "value at {x}: {} vs {want_value}",
                e.value
            );
        }
    }

    #[test]
    fn flat_loss_entropy_is_constant_offset() {
        // phi = 0, beta = 2: the kernel's mass is beta^{-1/2}, so the value
        // is the pure normalization offset log(beta) / (2 beta) = log(2)/4.
        let spec = RelaxationSpec::quadratic(0.0, 0.7, 2.0).unwrap();
        let want = 2.0f64.ln() / 4.0;
        let mut values = Vec::new();
        for &x in &[-3.0, 0.0, 7.0] {
            let e = local_entropy(&spec, x, &default_quad()).unwrap();
            assert!((e.value - want).abs() < 1e-10, "value {} vs {want}", e.value);
            assert!(e.gradient.abs() < 1e-10);
            values.push(e.value);
        }
        assert!((values[0] - values[2]).abs() < 1e-12);
    }

    #[test]
    fn finite_differences_confirm_entropy_gradient() {
        let spec = RelaxationSpec::double_well(0.05, 1.0).unwrap();
        let quad = default_quad();
        for &x in &[0.7, -1.3, 1.9] {
            let e = local_entropy(&spec, x, &quad).unwrap();
            let h = 1e-4;
            let plus = local_entropy(&spec, x + h, &quad).unwrap().value;
            let minus = local_entropy(&spec, x - h, &quad).unwrap().value;
            let fd = (plus - minus) / (2.0 * h);
            assert!(
                (fd - e.gradient).abs() < 1e-6 * e.gradient.abs().max(1.0),
                "at {x}: fd {fd} vs gradient {}",
                e.gradient
            );
            let scale = e.gradient.abs().max(1.0);
            assert!((e.gradient - e.gibbs_route_gradient).abs() <= 1e-4 * scale);
        }
    }

    #[test]
    fn undersized_quadrature_box_is_rejected() {
        let spec = RelaxationSpec::quadratic(1.0, 0.5, 1.0).unwrap();
        let quad = EntropyQuadrature { half_width_sds: 3.0, nodes: 257 };
        let err = local_entropy(&spec, 0.0, &quad).unwrap_err();
        assert!(err.to_string().contains("mass"), "unexpected error: {err}");
    }

    #[test]
    fn gradient_lipschitz_probe_and_coupling_flag() {
        let spec = RelaxationSpec::quadratic(1.5, 0.4, 1.0).unwrap();
        assert!(
            (spec.lipschitz - 1.5).abs() < 2e-4 * 1.5,
            "probed constant {} for a linear gradient of slope 1.5",
            spec.lipschitz
        );
        assert!(spec.gamma_ok, "0.4 < 1/1.5 should be accepted");
        assert!(!RelaxationSpec::quadratic(1.0, 2.0, 1.0).unwrap().gamma_ok);

        // Double well: sup |phi''| = 3 * 2.5^2 - 1 = 17.75 on the probe box.
        let dw = RelaxationSpec::double_well(0.05, 1.0).unwrap();
        assert!(
            dw.lipschitz > 17.74 && dw.lipschitz < 17.79,
            "double-well Lipschitz probe gave {}",
            dw.lipschitz
        );
        assert!(dw.gamma_ok);

        // The probed constant really bounds gradient differences on pairs.
        let (lo, hi) = dw.probe_interval;
        let mut rng_y = 0.3f64;
        for _ in 0..200 {
            rng_y = (rng_y * 1103.515245 + 0.12345).fract();
            let y1 = lo + (hi - lo) * rng_y;
            let y2 = lo + (hi - lo) * (1.0 - rng_y * rng_y);
            let diff = (dw.loss_gradient(y1) - dw.loss_gradient(y2)).abs();
            assert!(
                diff <= dw.lipschitz * (y1 - y2).abs() + 1e-12,
                "pair ({y1}, {y2}) violates the probed bound"
            );
        }
    }

    #[test]
    fn frozen_learning_rate_equilibrates_to_gibbs() {
        // u = 0 freezes the slow variable bit for bit; the fast variable
        // relaxes to the Gibbs measure of phi(y) + (y - x0)^2 / (2 gamma).
        let (q, gamma, beta) = (1.0, 0.5, 1.0);
        let spec = RelaxationSpec::quadratic(q, gamma, beta).unwrap();
        let (x0, y0, t_end, dt, eps) = (1.0, 0.0, 0.5, 1e-3, 0.1);
        let n_paths = 4000usize;
        let paths =
            run_deep_relaxation(&spec, eps, x0, y0, t_end, dt, |_, _, _| 0.0, n_paths, 41)
                .unwrap();
        assert_eq!(paths.len(), n_paths);

        let mut finals = Vec::with_capacity(n_paths);
        for path in &paths {
            let k = path.steps();
            assert_eq!(path.x_at(k, 1)[0].to_bits(), x0.to_bits(), "slow state moved");
            finals.push(path.y_at(k, 1)[0]);
        }
        let (mean, se) = mean_and_se(&finals);

        let spec_for_pot = spec.clone();
        let tilted = Potential::new(
            1,
            Arc::new(move |y: &[f64]| {
                spec_for_pot.loss(y[0]) + (y[0] - x0) * (y[0] - x0) / (2.0 * gamma)
            }),
            Arc::new(move |y: &[f64], out: &mut [f64]| {
                out[0] = y[0] * q + (y[0] - x0) / gamma;
            }),
        );
        let ref_mean = gibbs_oracle(&tilted, beta, GibbsQuery::Mean(0)).unwrap();
        assert!(
            (ref_mean - x0 / (1.0 + q * gamma)).abs() < 1e-9,
            "oracle self-check: {ref_mean}"
        );
        assert!(
            (mean - ref_mean).abs() <= 3.0 * se,
            "sampled mean {mean} vs Gibbs {ref_mean} (se {se})"
        );

        let var_hat = finals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (n_paths - 1) as f64;
        let ref_var = gibbs_oracle(&tilted, beta, GibbsQuery::Variance(0)).unwrap();
        let se_var = var_hat * (2.0 / (n_paths as f64 - 1.0)).sqrt();
        // The explicit fast step inflates the stationary variance by about
        // theta dt / 2 with theta = (q + 1/gamma) / eps; allow for it.
        let euler_bias = 0.5 * (q + 1.0 / gamma) / eps * dt * ref_var;
        assert!(
            (var_hat - ref_var).abs() <= 3.0 * se_var + 1.5 * euler_bias,
            "sampled variance {var_hat} vs Gibbs {ref_var} (se {se_var})"
        );
    }

    #[test]
    fn unit_learning_rate_tracks_effective_flow() {
        // Quadratic loss, full learning rate, small scale ratio: the mean
        // slow path follows x0 exp(-q t / (1 + q gamma)).
        let (q, gamma) = (1.0, 0.5);
        let spec = RelaxationSpec::quadratic(q, gamma, 1.0).unwrap();
        let (x0, t_end, eps, dt) = (1.0, 1.0, 0.02, 0.002);
        let y0 = x0 / (1.0 + q * gamma); // start the fast state at equilibrium
        let n_paths = 2000usize;
        let paths =
            run_deep_relaxation(&spec, eps, x0, y0, t_end, dt, |_, _, _| 1.0, n_paths, 7).unwrap();
        let finals: Vec<f64> =
            paths.iter().map(|p| p.x_at(p.steps(), 1)[0]).collect();
        let (mean, se) = mean_and_se(&finals);
        let want = x0 * (-q * t_end / (1.0 + q * gamma)).exp();
        assert!(
            (mean - want).abs() <= 3.0 * se,
            "mean {mean} vs effective {want} with se {se}"
        );
    }

    #[test]
    fn small_coupling_decays_at_plain_gradient_rate() {
        // gamma -> 0 approaches plain gradient descent on phi: the decay
        // exponent should be close to q / (1 + q gamma).
        let (q, gamma) = (1.0, 0.05);
        let spec = RelaxationSpec::quadratic(q, gamma, 1.0).unwrap();
        let (x0, t_end, eps, dt) = (1.0, 1.0, 0.02, 5e-4);
        let y0 = x0 / (1.0 + q * gamma);
        let n_paths = 1200usize;
        let paths =
            run_deep_relaxation(&spec, eps, x0, y0, t_end, dt, |_, _, _| 1.0, n_paths, 19)
                .unwrap();
        let steps = paths[0].steps();
        let picks: Vec<usize> = (1..=5).map(|j| j * steps / 5).collect();
        let mut ts = Vec::new();
        let mut logs = Vec::new();
        for &k in &picks {
            let column: Vec<f64> = paths.iter().map(|p| p.x_at(k, 1)[0]).collect();
            let (mean, _) = mean_and_se(&column);
            ts.push(paths[0].times[k]);
            logs.push(mean.ln());
        }
        let (slope, _, r2) = crate::quad::linear_fit(&ts, &logs);
        let want = -q / (1.0 + q * gamma);
        assert!(r2 > 0.999, "log-linear fit degraded: r2 = {r2}");
        assert!(
            (slope - want).abs() < 0.1 * want.abs(),
            "decay exponent {slope} vs {want}"
        );
    }

    #[test]
    fn effective_descent_matches_quadratic_flow() {
        let (q, gamma) = (1.0, 0.5);
        let spec = RelaxationSpec::quadratic(q, gamma, 1.0).unwrap();
        let (x0, t_end, dt) = (1.25, 1.0, 1e-3);
        let path = run_effective_descent(&spec, x0, t_end, dt, &default_quad()).unwrap();
        assert_eq!(path.times.len(), 1001);
        assert_eq!(path.x.len(), path.phi_gamma.len());
        let rate = q / (1.0 + q * gamma);
        let mut worst = 0.0f64;
        for (k, &t) in path.times.iter().enumerate() {
            worst = worst.max((path.x[k] - x0 * (-rate * t).exp()).abs());
        }
        assert!(worst < 1.5e-3, "Euler path deviates by {worst}");

        let csv = path.to_csv();
        assert!(csv.starts_with("t,x,phi_gamma\n"));
        assert_eq!(csv.lines().count(), 1002);
    }

    #[test]
    fn descent_on_double_well_is_monotone() {
        let spec = RelaxationSpec::double_well(0.05, 1.0).unwrap();
        let (x0, t_end, dt) = (2.0, 0.5, 1e-3);
        let path = run_effective_descent(&spec, x0, t_end, dt, &default_quad()).unwrap();
        for pair in path.phi_gamma.windows(2) {
            assert!(
                pair[1] <= pair[0] + dt * dt,
                "smoothed loss rose from {} to {}",
                pair[0],
                pair[1]
            );
        }
        let first = path.phi_gamma[0];
        let last = path.phi_gamma[path.phi_gamma.len() - 1];
        assert!(last < first - 0.01, "no real progress: {first} -> {last}");
        let x_end = path.x[path.x.len() - 1];
        assert!(x_end > 0.9 && x_end < 1.6, "descent from 2 should approach the well at 1");
    }

    #[test]
    fn descent_requires_small_coupling() {
        let spec = RelaxationSpec::quadratic(1.0, 1.5, 1.0).unwrap();
        assert!(!spec.gamma_ok);
        let err = run_effective_descent(&spec, 1.0, 1.0, 1e-3, &default_quad()).unwrap_err();
        assert!(err.to_string().contains("Lipschitz"), "unexpected error: {err}");
    }

    #[test]
    fn gap_shrinks_with_scale_separation() {
        let (q, gamma) = (1.0, 0.5);
        let spec = RelaxationSpec::quadratic(q, gamma, 1.0).unwrap();
        let x0 = 1.0;
        let y0 = x0 / (1.0 + q * gamma);
        let study = trajectory_gap_study(
            &spec,
            &[0.4, 0.05],
            x0,
            y0,
            1.0,
            0.004,
            3000,
            77,
            &default_quad(),
        )
        .unwrap();
        assert!(study.sup_gaps[0] > 0.02, "coarse-ratio gap suspiciously small");
        assert!(
            study.sup_gaps[1] < study.sup_gaps[0],
            "gaps {:?} fail to shrink",
            study.sup_gaps
        );
        assert!(study.strictly_decreasing);
        let csv = study.to_csv();
        assert!(csv.starts_with("epsilon,sup_gap,se\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn zero_horizon_study_gap_is_exactly_zero() {
        let spec = RelaxationSpec::quadratic(1.0, 0.5, 1.0).unwrap();
        let study = trajectory_gap_study(
            &spec,
            &[0.4, 0.1],
            1.0,
            0.5,
            0.0,
            0.01,
            8,
            3,
            &default_quad(),
        )
        .unwrap();
        assert_eq!(study.sup_gaps, vec![0.0, 0.0]);
        assert_eq!(study.standard_errors, vec![0.0, 0.0]);
    }

    #[test]
    fn relaxation_rejects_bad_inputs() {
        let spec = RelaxationSpec::quadratic(1.0, 0.5, 1.0).unwrap();
        let quad = default_quad();

        // Step too coarse for the fast block.
        let err = run_deep_relaxation(&spec, 0.1, 1.0, 0.0, 1.0, 0.02, |_, _, _| 1.0, 4, 1)
            .unwrap_err();
        assert!(matches!(err, TsError::CflViolation { .. }), "got {err}");

        // Learning rate outside [0, 1].
        let err = run_deep_relaxation(&spec, 0.1, 1.0, 0.0, 1.0, 1e-3, |_, _, _| 1.5, 4, 1)
            .unwrap_err();
        assert!(err.to_string().contains("learning-rate"), "got {err}");

        // Bad smoothing parameters.
        assert!(RelaxationSpec::quadratic(1.0, 0.0, 1.0).is_err());
        assert!(RelaxationSpec::quadratic(-1.0, 0.5, 1.0).is_err());

        // Horizon not an integral number of steps.
        assert!(run_effective_descent(&spec, 1.0, 1.0, 0.3, &quad).is_err());

        // Scale ratios must decrease.
        let err = trajectory_gap_study(&spec, &[0.1, 0.4], 1.0, 0.5, 1.0, 0.004, 8, 1, &quad)
            .unwrap_err();
        assert!(err.to_string().contains("decrease"), "got {err}");
    }
}
