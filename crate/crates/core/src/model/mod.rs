//! Controlled two-scale diffusion models.
//!
//! A model couples a slow state `x` in R^n and a fast state `y` in R^m
//! through a shared r-dimensional Brownian motion:
//!
//! ```text
//! dX = f(X, Y, u) dt            + sqrt(2)     sigma_eps(X, Y, u) dW
//! dY = (1/eps) b(X, Y) dt       + sqrt(2/eps) rho(X, Y) dW
//! ```
//!
//! together with a running reward `ell(t, x, y, u)`, a terminal reward
//! `g(x, y)`, a discount rate `lambda`, a horizon `T`, and a compact control
//! set realized as a finite grid of points.  The payoff being maximized is
//!
//! ```text
//! J = E[ e^{lambda (t - T)} g(X_T, Y_T)
//!        + int_t^T ell(s, X_s, Y_s, u_s) e^{lambda (s - T)} ds ].
//! ```
//!
//! Coefficient maps are plain closures behind `Arc`, evaluated into
//! caller-provided buffers so hot loops stay allocation-free.  Matrices are
//! row-major slices (`sigma`: n x r, `rho`: m x r).

pub mod assumptions;
pub mod benchmarks;

use crate::error::{TsError, TsResult};
use std::sync::Arc;

pub type SlowDrift = Arc<dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type SlowDiffusion = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type SlowDiffusionLimit = Arc<dyn Fn(&[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type FastDrift = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type FastDiffusion = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type RunningReward = Arc<dyn Fn(f64, &[f64], &[f64], &[f64]) -> f64 + Send + Sync>;
pub type TerminalReward = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Finite grid of admissible control points inside a compact box.
#[derive(Clone, Debug)]
pub struct ControlSet {
    dim: usize,
    /// Flattened point list, `len = count * dim`.
    points: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ControlSet {
    /// A single admissible control (uncontrolled dynamics).
    pub fn singleton(point: &[f64]) -> ControlSet {
        ControlSet {
            dim: point.len(),
            points: point.to_vec(),
            lo: point.to_vec(),
            hi: point.to_vec(),
        }
    }

    /// Uniform grid of `count >= 1` points on the interval `[lo, hi]`.
    pub fn grid_1d(lo: f64, hi: f64, count: usize) -> TsResult<ControlSet> {
        if !(lo.is_finite() && hi.is_finite()) || lo > hi {
            return Err(TsError::invalid(format!(
                "control interval [{lo}, {hi}] is not a valid box"
            )));
        }
        if count == 0 {
            return Err(TsError::invalid("control grid needs at least one point"));
        }
        let mut points = Vec::with_capacity(count);
        if count == 1 {
            points.push(0.5 * (lo + hi));
        } else {
            for i in 0..count {
                points.push(lo + (hi - lo) * i as f64 / (count - 1) as f64);
            }
        }
        Ok(ControlSet {
            dim: 1,
            points,
            lo: vec![lo],
            hi: vec![hi],
        })
    }

    /// Arbitrary explicit point list with its bounding box.
    pub fn from_points(dim: usize, points: Vec<f64>) -> TsResult<ControlSet> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(TsError::invalid("control point list shape mismatch"));
        }
        let count = points.len() / dim;
        let mut lo = vec![f64::INFINITY; dim];
        let mut hi = vec![f64::NEG_INFINITY; dim];
        for c in 0..count {
            for d in 0..dim {
                let v = points[c * dim + d];
                if !v.is_finite() {
                    return Err(TsError::invalid("non-finite control point"));
                }
                lo[d] = lo[d].min(v);
                hi[d] = hi[d].max(v);
            }
        }
        Ok(ControlSet { dim, points, lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// Project a point onto the bounding box, coordinate by coordinate.
    pub fn clamp(&self, u: &mut [f64]) {
        for d in 0..self.dim {
            u[d] = u[d].clamp(self.lo[d], self.hi[d]);
        }
    }
}

/// Scratch buffers for repeated coefficient evaluation.
#[derive(Clone, Debug, Default)]
pub struct ModelScratch {
    pub f: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Clone)]
pub struct TwoScaleModel {
    id: String,
    n: usize,
    m: usize,
    r: usize,
    f: SlowDrift,
    sigma_eps: SlowDiffusion,
    sigma_limit: SlowDiffusionLimit,
    b: FastDrift,
    rho: FastDiffusion,
    ell: RunningReward,
    g: TerminalReward,
    lambda: f64,
    epsilon: f64,
    horizon: f64,
    controls: ControlSet,
}

impl std::fmt::Debug for TwoScaleModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TwoScaleModel")
            .field("id", &self.id)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("r", &self.r)
            .field("lambda", &self.lambda)
            .field("epsilon", &self.epsilon)
            .field("horizon", &self.horizon)
            .field("controls", &self.controls.count())
            .finish()
    }
}

impl TwoScaleModel {
    pub fn builder(n: usize, m: usize, r: usize) -> ModelBuilder {
        ModelBuilder::new(n, m, r)
    }

    pub fn id(&self) -> &str {
        &self.id
    }
    pub fn slow_dim(&self) -> usize {
        self.n
    }
    pub fn fast_dim(&self) -> usize {
        self.m
    }
    pub fn noise_dim(&self) -> usize {
        self.r
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    pub fn scratch(&self) -> ModelScratch {
        ModelScratch {
            f: vec![0.0; self.n],
            sigma: vec![0.0; self.n * self.r],
            rho: vec![0.0; self.m * self.r],
            b: vec![0.0; self.m],
        }
    }

    #[inline]
    pub fn eval_f(&self, x: &[f64], y: &[f64], u: &[f64], out: &mut [f64]) {
        (self.f)(x, y, u, out);
    }

    #[inline]
    pub fn eval_sigma_eps(&self, eps: f64, x: &[f64], y: &[f64], u: &[f64], out: &mut [f64]) {
        (self.sigma_eps)(eps, x, y, u, out);
    }

    #[inline]
    pub fn eval_sigma_limit(&self, x: &[f64], y: &[f64], u: &[f64], out: &mut [f64]) {
        (self.sigma_limit)(x, y, u, out);
    }

    #[inline]
    pub fn eval_b(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.b)(x, y, out);
    }

    #[inline]
    pub fn eval_rho(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.rho)(x, y, out);
    }

    #[inline]
    pub fn eval_ell(&self, t: f64, x: &[f64], y: &[f64], u: &[f64]) -> f64 {
        (self.ell)(t, x, y, u)
    }

    #[inline]
    pub fn eval_g(&self, x: &[f64], y: &[f64]) -> f64 {
        (self.g)(x, y)
    }

    /// rho rho^T as an m x m row-major matrix (generator diffusion of the
    /// fast subsystem).
    pub fn fast_diffusion_sq(&self, x: &[f64], y: &[f64], rho_buf: &mut [f64], out: &mut [f64]) {
        self.eval_rho(x, y, rho_buf);
        let (m, r) = (self.m, self.r);
        for i in 0..m {
            for j in 0..m {
                let mut s = 0.0;
                for k in 0..r {
                    s += rho_buf[i * r + k] * rho_buf[j * r + k];
                }
                out[i * m + j] = s;
            }
        }
    }

    /// Pointwise Bellman integrand at zero mixed argument:
    /// `min_u { -tr(sigma sigma^T P) - f.p - ell(t,x,y,u) }` over the control
    /// grid, using the limit diffusion map.  Returns (value, argmin index).
    pub fn pointwise_hamiltonian(
        &self,
        ws: &mut ModelScratch,
        t: f64,
        x: &[f64],
        y: &[f64],
        p: &[f64],
        p_mat: &[f64],
    ) -> (f64, usize) {
        debug_assert_eq!(p.len(), self.n);
        debug_assert_eq!(p_mat.len(), self.n * self.n);
        let mut best = f64::INFINITY;
        let mut best_idx = 0;
        for ui in 0..self.controls.count() {
            let u = self.controls.point(ui);
            let v = self.control_objective(ws, t, x, y, u, p, p_mat);
            if v < best {
                best = v;
                best_idx = ui;
            }
        }
        (best, best_idx)
    }

    /// The objective inside the Hamiltonian minimum for one control point:
    /// `-tr(sigma sigma^T P) - f.p - ell`.
    pub fn control_objective(
        &self,
        ws: &mut ModelScratch,
        t: f64,
        x: &[f64],
        y: &[f64],
        u: &[f64],
        p: &[f64],
        p_mat: &[f64],
    ) -> f64 {
        let (n, r) = (self.n, self.r);
        self.eval_f(x, y, u, &mut ws.f);
        let mut v = -self.eval_ell(t, x, y, u);
        for i in 0..n {
            v -= ws.f[i] * p[i];
        }
        // -tr(sigma sigma^T P) = -sum_{i,j} (sigma sigma^T)_{ij} P_{ji}
        if p_mat.iter().any(|&c| c != 0.0) {
            self.eval_sigma_limit(x, y, u, &mut ws.sigma);
            for i in 0..n {
                for j in 0..n {
                    let mut ss = 0.0;
                    for k in 0..r {
                        ss += ws.sigma[i * r + k] * ws.sigma[j * r + k];
                    }
                    v -= ss * p_mat[j * n + i];
                }
            }
        }
        v
    }

    // -- builder-style copies ------------------------------------------------

    pub fn with_epsilon(&self, epsilon: f64) -> TsResult<TwoScaleModel> {
        if !(epsilon > 0.0) {
            return Err(TsError::constraint("epsilon", format!("must be positive, got {epsilon}")));
        }
        let mut m = self.clone();
        m.epsilon = epsilon;
        Ok(m)
    }

    pub fn with_horizon(&self, horizon: f64) -> TsResult<TwoScaleModel> {
        if !(horizon > 0.0) {
            return Err(TsError::constraint("horizon", format!("must be positive, got {horizon}")));
        }
        let mut m = self.clone();
        m.horizon = horizon;
        Ok(m)
    }

    pub fn with_lambda(&self, lambda: f64) -> TsResult<TwoScaleModel> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(TsError::constraint("lambda", format!("must be finite and >= 0, got {lambda}")));
        }
        let mut m = self.clone();
        m.lambda = lambda;
        Ok(m)
    }

    pub fn with_controls(&self, controls: ControlSet) -> TwoScaleModel {
        let mut m = self.clone();
        m.controls = controls;
        m
    }

    pub fn with_terminal(&self, g: TerminalReward) -> TwoScaleModel {
        let mut m = self.clone();
        m.g = g;
        m
    }

    pub fn with_running(&self, ell: RunningReward) -> TwoScaleModel {
        let mut m = self.clone();
        m.ell = ell;
        m
    }
}

/// Assembles a [`TwoScaleModel`] from closures; all coefficients default to
/// zero maps, the control set to the singleton {0}.
pub struct ModelBuilder {
    id: String,
    n: usize,
    m: usize,
    r: usize,
    f: Option<SlowDrift>,
    sigma_eps: Option<SlowDiffusion>,
    sigma_limit: Option<SlowDiffusionLimit>,
    b: Option<FastDrift>,
    rho: Option<FastDiffusion>,
    ell: Option<RunningReward>,
    g: Option<TerminalReward>,
    lambda: f64,
    epsilon: f64,
    horizon: f64,
    controls: Option<ControlSet>,
}

impl ModelBuilder {
    fn new(n: usize, m: usize, r: usize) -> ModelBuilder {
        ModelBuilder {
            id: "custom".to_string(),
            n,
            m,
            r,
            f: None,
            sigma_eps: None,
            sigma_limit: None,
            b: None,
            rho: None,
            ell: None,
            g: None,
            lambda: 0.0,
            epsilon: 1.0,
            horizon: 1.0,
            controls: None,
        }
    }

    pub fn id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
    pub fn slow_drift(mut self, f: SlowDrift) -> Self {
        self.f = Some(f);
        self
    }
    /// Sets both the ε-family and the limit diffusion to the same map.
    pub fn slow_diffusion(mut self, s: SlowDiffusionLimit) -> Self {
        let sl = s.clone();
        self.sigma_eps = Some(Arc::new(move |_eps, x, y, u, out| sl(x, y, u, out)));
        self.sigma_limit = Some(s);
        self
    }
    /// ε-dependent family; the limit map must be set separately.
    pub fn slow_diffusion_family(mut self, s: SlowDiffusion, limit: SlowDiffusionLimit) -> Self {
        self.sigma_eps = Some(s);
        self.sigma_limit = Some(limit);
        self
    }
    pub fn fast_drift(mut self, b: FastDrift) -> Self {
        self.b = Some(b);
        self
    }
    pub fn fast_diffusion(mut self, rho: FastDiffusion) -> Self {
        self.rho = Some(rho);
        self
    }
    pub fn running_reward(mut self, ell: RunningReward) -> Self {
        self.ell = Some(ell);
        self
    }
    pub fn terminal_reward(mut self, g: TerminalReward) -> Self {
        self.g = Some(g);
        self
    }
    pub fn lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }
    pub fn epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }
    pub fn horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }
    pub fn controls(mut self, c: ControlSet) -> Self {
        self.controls = Some(c);
        self
    }

    pub fn build(self) -> TsResult<TwoScaleModel> {
        if self.n == 0 || self.m == 0 || self.r == 0 {
            return Err(TsError::invalid("model dimensions must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(TsError::constraint("epsilon", "must be positive"));
        }
        if !(self.horizon > 0.0) {
            return Err(TsError::constraint("horizon", "must be positive"));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(TsError::constraint("lambda", "must be finite and >= 0"));
        }
        let n = self.n;
        let m = self.m;
        let r = self.r;
        let zero_n: SlowDrift = Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0));
        let zero_nr: SlowDiffusionLimit = Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0));
        let zero_m: FastDrift = Arc::new(|_, _, out: &mut [f64]| out.fill(0.0));
        let zero_mr: FastDiffusion = Arc::new(|_, _, out: &mut [f64]| out.fill(0.0));
        let sigma_limit = self.sigma_limit.unwrap_or(zero_nr);
        let sigma_eps = self.sigma_eps.unwrap_or_else(|| {
            let sl = sigma_limit.clone();
            Arc::new(move |_eps, x, y, u, out| sl(x, y, u, out))
        });
        let model = TwoScaleModel {
            id: self.id,
            n,
            m,
            r,
            f: self.f.unwrap_or(zero_n),
            sigma_eps,
            sigma_limit,
            b: self.b.unwrap_or(zero_m),
            rho: self.rho.unwrap_or(zero_mr),
            ell: self.ell.unwrap_or_else(|| Arc::new(|_, _, _, _| 0.0)),
            g: self.g.unwrap_or_else(|| Arc::new(|_, _| 0.0)),
            lambda: self.lambda,
            epsilon: self.epsilon,
            horizon: self.horizon,
            controls: self.controls.unwrap_or_else(|| ControlSet::singleton(&[0.0])),
        };
        if model.controls.dim() == 0 {
            return Err(TsError::invalid("control set must have positive dimension"));
        }
        // Smoke-probe every map at the origin so obviously broken closures
        // fail at construction rather than deep inside a simulation.
        let x = vec![0.0; n];
        let y = vec![0.0; m];
        let u = model.controls.point(0).to_vec();
        let mut ws = model.scratch();
        model.eval_f(&x, &y, &u, &mut ws.f);
        model.eval_sigma_eps(model.epsilon, &x, &y, &u, &mut ws.sigma);
        model.eval_sigma_limit(&x, &y, &u, &mut ws.sigma);
        model.eval_b(&x, &y, &mut ws.b);
        model.eval_rho(&x, &y, &mut ws.rho);
        let _ = model.eval_ell(0.0, &x, &y, &u);
        let _ = model.eval_g(&x, &y);
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn control_grid_endpoints_and_count() {
        let c = ControlSet::grid_1d(0.0, 1.0, 33).unwrap();
        assert_eq!(c.count(), 33);
        assert_eq!(c.point(0), &[0.0]);
        assert_eq!(c.point(32), &[1.0]);
        assert_eq!(c.point(16), &[0.5]);
    }

    #[test]
    fn singleton_control() {
        let c = ControlSet::singleton(&[0.25]);
        assert_eq!(c.count(), 1);
        assert_eq!(c.lo(), &[0.25]);
        assert_eq!(c.hi(), &[0.25]);
    }

    #[test]
    fn builder_defaults_are_zero_maps() {
        let m = TwoScaleModel::builder(1, 1, 1).build().unwrap();
        let mut out = [123.0];
        m.eval_f(&[1.0], &[2.0], &[0.0], &mut out);
        assert_eq!(out, [0.0]);
        m.eval_b(&[1.0], &[2.0], &mut out);
        assert_eq!(out, [0.0]);
        assert_eq!(m.eval_g(&[1.0], &[2.0]), 0.0);
    }

    #[test]
    fn invalid_dimensions_rejected() {
        assert!(TwoScaleModel::builder(0, 1, 1).build().is_err());
    }

    #[test]
    fn hamiltonian_minimizes_over_grid() {
        // f = u, ell = 0, sigma = 0: objective is -u p, minimized at u = hi
        // for p > 0.
        let model = TwoScaleModel::builder(1, 1, 1)
            .slow_drift(Arc::new(|_x, _y, u, out| out[0] = u[0]))
            .controls(ControlSet::grid_1d(-1.0, 2.0, 7).unwrap())
            .build()
            .unwrap();
        let mut ws = model.scratch();
        let (v, idx) = model.pointwise_hamiltonian(&mut ws, 0.0, &[0.0], &[0.0], &[1.0], &[0.0]);
        assert_eq!(v, -2.0);
        assert_eq!(model.controls().point(idx), &[2.0]);
    }
}
