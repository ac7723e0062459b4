//! Euler–Maruyama time stepping for the coupled system and the frozen-x
//! fast subsystem.
//!
//! Both integrators draw noise through [`PathStream`], so a path is a pure
//! function of `(seed, path_index, dt, model, policy)` and replays
//! bit-exactly regardless of how many paths run concurrently elsewhere.
//! Slow and fast blocks consume the *same* r-dimensional increment each
//! step; the fast block scales it by `sqrt(2/eps)`, the slow one by
//! `sqrt(2)`.

mod payoff;

pub use payoff::{estimate_payoff, mc_value_lower_bound, PayoffEstimate, PolicyComparison};

use crate::error::{TsError, TsResult};
use crate::model::{ControlSet, TwoScaleModel};
use crate::rng::PathStream;
use std::sync::Arc;

pub type FeedbackMap = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;

/// How a control signal is produced along a trajectory.
#[derive(Clone)]
pub struct ControlPolicy {
    tag: &'static str,
    map: FeedbackMap,
}

impl std::fmt::Debug for ControlPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ControlPolicy({})", self.tag)
    }
}

impl ControlPolicy {
    /// Always plays the same control point.
    pub fn constant(u: &[f64]) -> ControlPolicy {
        let u = u.to_vec();
        ControlPolicy {
            tag: "constant",
            map: Arc::new(move |_t, _x, _y, out| out.copy_from_slice(&u)),
        }
    }

    /// Arbitrary feedback map `(t, x, y) -> u`.
    pub fn feedback(map: FeedbackMap) -> ControlPolicy {
        ControlPolicy { tag: "feedback", map }
    }

    /// Piecewise-constant feedback read off a space-time table of control
    /// indices by nearest-node lookup.
    ///
    /// `axes` lists the state-grid coordinates (slow axes first, then fast),
    /// `indices` is time-major, then row-major over the state grid, and each
    /// entry points into `controls`.
    pub fn from_grid(
        times: Vec<f64>,
        axes: Vec<Vec<f64>>,
        indices: Vec<u32>,
        controls: ControlSet,
    ) -> TsResult<ControlPolicy> {
        if times.is_empty() || axes.iter().any(|a| a.is_empty()) {
            return Err(TsError::invalid("policy grid axes must be nonempty"));
        }
        let nodes: usize = axes.iter().map(|a| a.len()).product();
        if indices.len() != nodes * times.len() {
            return Err(TsError::invalid(format!(
                "policy table has {} entries, expected {}",
                indices.len(),
                nodes * times.len()
            )));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i as usize >= controls.count()) {
            return Err(TsError::invalid(format!(
                "policy table references control {bad} outside the {}-point set",
                controls.count()
            )));
        }
        let map = move |t: f64, x: &[f64], y: &[f64], out: &mut [f64]| {
            let ti = nearest(&times, t);
            let mut flat = 0usize;
            let mut stride = 1usize;
            // Row-major: the last axis varies fastest.
            let state: Vec<f64> = x.iter().chain(y.iter()).cloned().collect();
            for (axis, &coord) in axes.iter().zip(state.iter()).rev() {
                flat += nearest(axis, coord) * stride;
                stride *= axis.len();
            }
            let idx = indices[ti * nodes + flat] as usize;
            out.copy_from_slice(controls.point(idx));
        };
        Ok(ControlPolicy {
            tag: "grid-indexed",
            map: Arc::new(map),
        })
    }

    pub fn tag(&self) -> &'static str {
        self.tag
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.map)(t, x, y, out);
    }
}

fn nearest(grid: &[f64], v: f64) -> usize {
    match grid.binary_search_by(|g| g.partial_cmp(&v).unwrap()) {
        Ok(i) => i,
        Err(0) => 0,
        Err(i) if i == grid.len() => grid.len() - 1,
        Err(i) => {
            if v - grid[i - 1] <= grid[i] - v {
                i - 1
            } else {
                i
            }
        }
    }
}

/// One realized trajectory on a uniform time grid.
///
/// `x` is `(steps+1) x n` row-major, `y` is `(steps+1) x m`, and `u` is
/// `steps x k` (the control applied on each interval).  `integrate_fast`
/// leaves `x` and `u` empty.
#[derive(Clone, Debug)]
pub struct SamplePath {
    pub times: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub u: Vec<f64>,
    pub seed: u64,
    pub path_index: u64,
}

impl SamplePath {
    pub fn steps(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    pub fn x_at(&self, k: usize, n: usize) -> &[f64] {
        &self.x[k * n..(k + 1) * n]
    }

    pub fn y_at(&self, k: usize, m: usize) -> &[f64] {
        &self.y[k * m..(k + 1) * m]
    }
}

/// Checks that `span / dt` is an integer count of steps (within roundoff)
/// and returns it.
pub(crate) fn integral_steps(span: f64, dt: f64) -> TsResult<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(TsError::invalid(format!("time step must be positive, got {dt}")));
    }
    let raw = span / dt;
    let steps = raw.round();
    if steps < 0.5 || (raw - steps).abs() > 1e-9 * steps.max(1.0) {
        return Err(TsError::invalid(format!(
            "interval of length {span} is not an integer number of steps of size {dt}"
        )));
    }
    Ok(steps as usize)
}

fn check_stiffness(dt: f64, epsilon: f64) -> TsResult<()> {
    let bound = epsilon / 10.0;
    if dt > bound * (1.0 + 1e-12) {
        return Err(TsError::CflViolation {
            given_dt: dt,
            required_dt: bound,
            detail: format!("fast block runs at rate 1/eps with eps = {epsilon}"),
        });
    }
    Ok(())
}

/// Euler–Maruyama for the coupled system on `[0, horizon]`.
///
/// Requires `dt <= eps / 10` so the explicit fast block stays stable, and
/// `horizon / dt` integral.  Fails with the blow-up time and state if any
/// coordinate becomes non-finite.
pub fn integrate_two_scale(
    model: &TwoScaleModel,
    policy: &ControlPolicy,
    x0: &[f64],
    y0: &[f64],
    dt: f64,
    seed: u64,
    path_index: u64,
) -> TsResult<SamplePath> {
    let (n, m, k) = (model.slow_dim(), model.fast_dim(), model.controls().dim());
    if x0.len() != n || y0.len() != m {
        return Err(TsError::invalid("initial state dimensions do not match the model"));
    }
    check_stiffness(dt, model.epsilon())?;
    let steps = integral_steps(model.horizon(), dt)?;

    let mut path = SamplePath {
        times: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity((steps + 1) * n),
        y: Vec::with_capacity((steps + 1) * m),
        u: Vec::with_capacity(steps * k),
        seed,
        path_index,
    };
    path.times.push(0.0);
    path.x.extend_from_slice(x0);
    path.y.extend_from_slice(y0);

    let stream = PathStream::new(seed, path_index);
    let mut stepper = CoupledStepper::new(model, dt);
    let mut x = x0.to_vec();
    let mut y = y0.to_vec();
    let mut u = vec![0.0; k];

    for step in 0..steps {
        let t = step as f64 * dt;
        policy.eval(t, &x, &y, &mut u);
        model.controls().clamp(&mut u);
        stepper.step(t, &mut x, &mut y, &u, &stream, step as u64)?;
        path.times.push((step + 1) as f64 * dt);
        path.x.extend_from_slice(&x);
        path.y.extend_from_slice(&y);
        path.u.extend_from_slice(&u);
    }
    Ok(path)
}

/// Frozen-x fast subsystem (`eps = 1`) on `[0, T]`; only the fast
/// coordinates are recorded.
pub fn integrate_fast(
    model: &TwoScaleModel,
    x_frozen: &[f64],
    y0: &[f64],
    horizon: f64,
    dt: f64,
    seed: u64,
    path_index: u64,
) -> TsResult<SamplePath> {
    let m = model.fast_dim();
    if x_frozen.len() != model.slow_dim() || y0.len() != m {
        return Err(TsError::invalid("initial state dimensions do not match the model"));
    }
    if !(horizon > 0.0) {
        return Err(TsError::invalid("fast horizon must be positive"));
    }
    let steps = integral_steps(horizon, dt)?;

    let mut path = SamplePath {
        times: Vec::with_capacity(steps + 1),
        x: Vec::new(),
        y: Vec::with_capacity((steps + 1) * m),
        u: Vec::new(),
        seed,
        path_index,
    };
    path.times.push(0.0);
    path.y.extend_from_slice(y0);

    let stream = PathStream::new(seed, path_index);
    let mut stepper = FastStepper::new(model, x_frozen, dt);
    let mut y = y0.to_vec();
    for step in 0..steps {
        stepper.step(&mut y, &stream, step as u64)?;
        path.times.push((step + 1) as f64 * dt);
        path.y.extend_from_slice(&y);
    }
    Ok(path)
}

/// Reusable single-step kernel for the coupled system.
pub(crate) struct CoupledStepper<'a> {
    model: &'a TwoScaleModel,
    dt: f64,
    sqrt_2dt: f64,
    sqrt_2dt_eps: f64,
    dt_eps: f64,
    f: Vec<f64>,
    sigma: Vec<f64>,
    b: Vec<f64>,
    rho: Vec<f64>,
    dw: Vec<f64>,
}

impl<'a> CoupledStepper<'a> {
    pub fn new(model: &'a TwoScaleModel, dt: f64) -> Self {
        let eps = model.epsilon();
        CoupledStepper {
            model,
            dt,
            // The dynamics carry sqrt(2) sigma dW and sqrt(2/eps) rho dW;
            // with dW ~ N(0, dt I) we fold sqrt(dt) into the factors.
            sqrt_2dt: (2.0 * dt).sqrt(),
            sqrt_2dt_eps: (2.0 * dt / eps).sqrt(),
            dt_eps: dt / eps,
            f: vec![0.0; model.slow_dim()],
            sigma: vec![0.0; model.slow_dim() * model.noise_dim()],
            b: vec![0.0; model.fast_dim()],
            rho: vec![0.0; model.fast_dim() * model.noise_dim()],
            dw: vec![0.0; model.noise_dim()],
        }
    }

    pub fn step(
        &mut self,
        t: f64,
        x: &mut [f64],
        y: &mut [f64],
        u: &[f64],
        stream: &PathStream,
        step_index: u64,
    ) -> TsResult<()> {
        let model = self.model;
        let (n, m, r) = (model.slow_dim(), model.fast_dim(), model.noise_dim());
        model.eval_f(x, y, u, &mut self.f);
        model.eval_sigma_eps(model.epsilon(), x, y, u, &mut self.sigma);
        model.eval_b(x, y, &mut self.b);
        model.eval_rho(x, y, &mut self.rho);
        stream.fill_normals(step_index, &mut self.dw);

        for i in 0..n {
            let mut noise = 0.0;
            for j in 0..r {
                noise += self.sigma[i * r + j] * self.dw[j];
            }
            x[i] += self.f[i] * self.dt + self.sqrt_2dt * noise;
        }
        for i in 0..m {
            let mut noise = 0.0;
            for j in 0..r {
                noise += self.rho[i * r + j] * self.dw[j];
            }
            y[i] += self.b[i] * self.dt_eps + self.sqrt_2dt_eps * noise;
        }

        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            let mut state: Vec<f64> = x.to_vec();
            state.extend_from_slice(y);
            return Err(TsError::NonFinite {
                context: "coupled trajectory".to_string(),
                time: t + self.dt,
                state,
            });
        }
        Ok(())
    }
}

/// Reusable single-step kernel for the frozen-x fast subsystem at `eps = 1`;
/// long-run statistics loop over this without materializing paths.
pub struct FastStepper<'a> {
    model: &'a TwoScaleModel,
    x: Vec<f64>,
    dt: f64,
    sqrt_2dt: f64,
    b: Vec<f64>,
    rho: Vec<f64>,
    dw: Vec<f64>,
}

impl<'a> FastStepper<'a> {
    pub fn new(model: &'a TwoScaleModel, x_frozen: &[f64], dt: f64) -> Self {
        FastStepper {
            model,
            x: x_frozen.to_vec(),
            dt,
            sqrt_2dt: (2.0 * dt).sqrt(),
            b: vec![0.0; model.fast_dim()],
            rho: vec![0.0; model.fast_dim() * model.noise_dim()],
            dw: vec![0.0; model.noise_dim()],
        }
    }

    #[inline]
    pub fn step(&mut self, y: &mut [f64], stream: &PathStream, step_index: u64) -> TsResult<()> {
        let (m, r) = (self.model.fast_dim(), self.model.noise_dim());
        self.model.eval_b(&self.x, y, &mut self.b);
        self.model.eval_rho(&self.x, y, &mut self.rho);
        stream.fill_normals(step_index, &mut self.dw);
        for i in 0..m {
            let mut noise = 0.0;
            for j in 0..r {
                noise += self.rho[i * r + j] * self.dw[j];
            }
            y[i] += self.b[i] * self.dt + self.sqrt_2dt * noise;
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(TsError::NonFinite {
                context: "fast trajectory".to_string(),
                time: (step_index + 1) as f64 * self.dt,
                state: y.to_vec(),
            });
        }
        Ok(())
    }
}
