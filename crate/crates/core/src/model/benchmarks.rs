//! Ready-made benchmark models with closed-form reference behaviour.
//!
//! Four families are provided:
//!
//! * `ou` — uncontrolled slow state, Ornstein-Uhlenbeck fast state.  The fast
//!   invariant measure is Gaussian `N(mean, rho_bar / kappa)`, which makes
//!   every averaged quantity computable in closed form.
//! * `lq_deep_relax` — linear-quadratic relaxation model: the slow variable
//!   is pulled toward the fast one at a controlled rate, the fast variable
//!   relaxes around the slow one in a quadratic potential.
//! * `drift_free` — pure fast diffusion with no restoring force; exit times
//!   from an interval are explicit.
//! * `custom_1d` — affine-quadratic family in one slow and one fast variable
//!   with independent noise channels, for experiments that need nonzero slow
//!   diffusion without a degenerate correlation structure.

use super::{ControlSet, TwoScaleModel};
use crate::error::{TsError, TsResult};
use std::sync::Arc;

/// Parameters of the `ou` benchmark: fast drift `b = -kappa (y - mean)`,
/// fast diffusion `rho = sqrt(rho_bar)`, frozen slow state.
#[derive(Clone, Copy, Debug)]
pub struct OuParams {
    pub kappa: f64,
    pub mean: f64,
    pub rho_bar: f64,
}

impl Default for OuParams {
    fn default() -> Self {
        OuParams { kappa: 1.0, mean: 0.0, rho_bar: 1.0 }
    }
}

/// Parameters of the `lq_deep_relax` benchmark.
///
/// Slow drift `f = -u (x - y) / gamma` with `u` in `[0, 1]`, fast drift
/// `b = -(q + 1/gamma) y + x / gamma`, fast diffusion `1/sqrt(beta)`,
/// terminal reward `g = x^2`.  Requires `q gamma < 1` so the coupled linear
/// system is well separated.
#[derive(Clone, Copy, Debug)]
pub struct LqParams {
    pub q: f64,
    pub gamma: f64,
    pub beta: f64,
    pub control_points: usize,
}

impl Default for LqParams {
    fn default() -> Self {
        LqParams { q: 1.0, gamma: 0.5, beta: 1.0, control_points: 33 }
    }
}

/// Parameters of the `drift_free` benchmark: `b = 0`, `rho = sqrt(rho_bar)`.
#[derive(Clone, Copy, Debug)]
pub struct DriftFreeParams {
    pub rho_bar: f64,
}

impl Default for DriftFreeParams {
    fn default() -> Self {
        DriftFreeParams { rho_bar: 1.0 }
    }
}

/// Affine-quadratic single-slow single-fast model on two noise channels.
///
/// ```text
/// f(x,y,u)   = f0 + fx x + fy y + fu u
/// sigma      = [sigma0, 0]                  (slow noise on channel 1)
/// b(x,y)     = bx x - kappa (y - mean)
/// rho        = [0, sqrt(rho_bar)]           (fast noise on channel 2)
/// ell(x,y,u) = ell0 + ellx x + elly y + ellx2 x^2 + elly2 y^2 + ellu2 u^2
/// g(x,y)     = g0 + gx x + gy y + gx2 x^2 + gy2 y^2
/// ```
///
/// Separate channels keep the slow/fast noises independent, so the mixed
/// second-order term of the dynamic-programming operator vanishes.
#[derive(Clone, Copy, Debug)]
pub struct Custom1dParams {
    pub f0: f64,
    pub fx: f64,
    pub fy: f64,
    pub fu: f64,
    pub sigma0: f64,
    pub bx: f64,
    pub kappa: f64,
    pub mean: f64,
    pub rho_bar: f64,
    pub ell0: f64,
    pub ellx: f64,
    pub elly: f64,
    pub ellx2: f64,
    pub elly2: f64,
    pub ellu2: f64,
    pub g0: f64,
    pub gx: f64,
    pub gy: f64,
    pub gx2: f64,
    pub gy2: f64,
    pub u_lo: f64,
    pub u_hi: f64,
    pub control_points: usize,
}

impl Default for Custom1dParams {
    fn default() -> Self {
        Custom1dParams {
            f0: 0.0,
            fx: 0.0,
            fy: 0.0,
            fu: 0.0,
            sigma0: 0.0,
            bx: 0.0,
            kappa: 1.0,
            mean: 0.0,
            rho_bar: 1.0,
            ell0: 0.0,
            ellx: 0.0,
            elly: 0.0,
            ellx2: 0.0,
            elly2: 0.0,
            ellu2: 0.0,
            g0: 0.0,
            gx: 0.0,
            gy: 0.0,
            gx2: 0.0,
            gy2: 0.0,
            u_lo: 0.0,
            u_hi: 0.0,
            control_points: 1,
        }
    }
}

/// Which benchmark to build, with its family-specific parameters.
#[derive(Clone, Debug)]
pub enum BenchmarkSpec {
    Ou(OuParams),
    LqDeepRelax(LqParams),
    DriftFree(DriftFreeParams),
    Custom1d(Custom1dParams),
}

impl BenchmarkSpec {
    /// Parse a family name with default parameters.
    pub fn by_name(name: &str) -> TsResult<BenchmarkSpec> {
        match name {
            "ou" => Ok(BenchmarkSpec::Ou(OuParams::default())),
            "lq_deep_relax" => Ok(BenchmarkSpec::LqDeepRelax(LqParams::default())),
            "drift_free" => Ok(BenchmarkSpec::DriftFree(DriftFreeParams::default())),
            "custom_1d" => Ok(BenchmarkSpec::Custom1d(Custom1dParams::default())),
            other => Err(TsError::invalid(format!(
                "unknown benchmark '{other}' (expected ou, lq_deep_relax, drift_free, custom_1d)"
            ))),
        }
    }
}

/// Instantiate a benchmark model with horizon 1, discount 0, epsilon 1.
/// Adjust afterwards with [`TwoScaleModel::with_horizon`] and friends.
pub fn make_benchmark(spec: &BenchmarkSpec) -> TsResult<TwoScaleModel> {
    match spec {
        BenchmarkSpec::Ou(p) => make_ou(*p),
        BenchmarkSpec::LqDeepRelax(p) => make_lq(*p),
        BenchmarkSpec::DriftFree(p) => make_drift_free(*p),
        BenchmarkSpec::Custom1d(p) => make_custom_1d(*p),
    }
}

fn make_ou(p: OuParams) -> TsResult<TwoScaleModel> {
    if !(p.kappa > 0.0) {
        return Err(TsError::constraint("kappa", format!("must be positive, got {}", p.kappa)));
    }
    if !(p.rho_bar > 0.0) {
        return Err(TsError::constraint("rho_bar", format!("must be positive, got {}", p.rho_bar)));
    }
    let OuParams { kappa, mean, rho_bar } = p;
    let sqrt_rho = rho_bar.sqrt();
    TwoScaleModel::builder(1, 1, 1)
        .id(format!("ou(kappa={kappa},mean={mean},rho_bar={rho_bar})"))
        .fast_drift(Arc::new(move |_x, y, out| out[0] = -kappa * (y[0] - mean)))
        .fast_diffusion(Arc::new(move |_x, _y, out| out[0] = sqrt_rho))
        // Running reward -|y|^2 turns the averaged Bellman operator into the
        // stationary second moment of the fast state.
        .running_reward(Arc::new(|_t, _x, y, _u| -(y[0] * y[0])))
        .terminal_reward(Arc::new(|_x, y| y[0] * y[0]))
        .build()
}

fn make_lq(p: LqParams) -> TsResult<TwoScaleModel> {
    if !(p.q > 0.0 && p.gamma > 0.0 && p.beta > 0.0) {
        return Err(TsError::constraint(
            "lq_deep_relax",
            format!("q, gamma, beta must be positive, got q={} gamma={} beta={}", p.q, p.gamma, p.beta),
        ));
    }
    if p.q * p.gamma >= 1.0 {
        return Err(TsError::constraint(
            "lq_deep_relax",
            format!("requires q * gamma < 1, got {}", p.q * p.gamma),
        ));
    }
    if p.control_points == 0 {
        return Err(TsError::constraint("control_points", "must be at least 1"));
    }
    let LqParams { q, gamma, beta, control_points } = p;
    let inv_gamma = 1.0 / gamma;
    let noise = (1.0 / beta).sqrt();
    TwoScaleModel::builder(1, 1, 1)
        .id(format!("lq_deep_relax(q={q},gamma={gamma},beta={beta})"))
        .slow_drift(Arc::new(move |x, y, u, out| out[0] = -u[0] * (x[0] - y[0]) * inv_gamma))
        .fast_drift(Arc::new(move |x, y, out| out[0] = -(q + inv_gamma) * y[0] + inv_gamma * x[0]))
        .fast_diffusion(Arc::new(move |_x, _y, out| out[0] = noise))
        .terminal_reward(Arc::new(|x, _y| x[0] * x[0]))
        .controls(ControlSet::grid_1d(0.0, 1.0, control_points)?)
        .build()
}

fn make_drift_free(p: DriftFreeParams) -> TsResult<TwoScaleModel> {
    if !(p.rho_bar > 0.0) {
        return Err(TsError::constraint("rho_bar", format!("must be positive, got {}", p.rho_bar)));
    }
    let sqrt_rho = p.rho_bar.sqrt();
    let rho_bar = p.rho_bar;
    TwoScaleModel::builder(1, 1, 1)
        .id(format!("drift_free(rho_bar={rho_bar})"))
        .fast_diffusion(Arc::new(move |_x, _y, out| out[0] = sqrt_rho))
        .build()
}

fn make_custom_1d(p: Custom1dParams) -> TsResult<TwoScaleModel> {
    if !(p.rho_bar >= 0.0) {
        return Err(TsError::constraint("rho_bar", format!("must be >= 0, got {}", p.rho_bar)));
    }
    if p.control_points == 0 {
        return Err(TsError::constraint("control_points", "must be at least 1"));
    }
    if p.u_lo > p.u_hi {
        return Err(TsError::constraint("controls", "u_lo must not exceed u_hi"));
    }
    let q = p;
    let sqrt_rho = q.rho_bar.sqrt();
    let controls = if q.control_points == 1 {
        ControlSet::singleton(&[0.5 * (q.u_lo + q.u_hi)])
    } else {
        ControlSet::grid_1d(q.u_lo, q.u_hi, q.control_points)?
    };
    TwoScaleModel::builder(1, 1, 2)
        .id(format!(
            "custom_1d(fx={},fy={},fu={},sigma0={},bx={},kappa={},rho_bar={})",
            q.fx, q.fy, q.fu, q.sigma0, q.bx, q.kappa, q.rho_bar
        ))
        .slow_drift(Arc::new(move |x, y, u, out| {
            out[0] = q.f0 + q.fx * x[0] + q.fy * y[0] + q.fu * u[0];
        }))
        .slow_diffusion(Arc::new(move |_x, _y, _u, out| {
            out[0] = q.sigma0;
            out[1] = 0.0;
        }))
        .fast_drift(Arc::new(move |x, y, out| {
            out[0] = q.bx * x[0] - q.kappa * (y[0] - q.mean);
        }))
        .fast_diffusion(Arc::new(move |_x, _y, out| {
            out[0] = 0.0;
            out[1] = sqrt_rho;
        }))
        .running_reward(Arc::new(move |_t, x, y, u| {
            q.ell0
                + q.ellx * x[0]
                + q.elly * y[0]
                + q.ellx2 * x[0] * x[0]
                + q.elly2 * y[0] * y[0]
                + q.ellu2 * u[0] * u[0]
        }))
        .terminal_reward(Arc::new(move |x, y| {
            q.g0 + q.gx * x[0] + q.gy * y[0] + q.gx2 * x[0] * x[0] + q.gy2 * y[0] * y[0]
        }))
        .controls(controls)
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ou_coefficients() {
        let m = make_benchmark(&BenchmarkSpec::Ou(OuParams { kappa: 2.0, mean: 0.5, rho_bar: 3.0 }))
            .unwrap();
        let mut out = [0.0];
        m.eval_b(&[0.0], &[1.5], &mut out);
        assert_eq!(out[0], -2.0);
        m.eval_rho(&[0.0], &[1.5], &mut out);
        assert_eq!(out[0], 3.0_f64.sqrt());
        assert_eq!(m.eval_ell(0.0, &[0.0], &[2.0], &[0.0]), -4.0);
        assert_eq!(m.eval_g(&[0.0], &[2.0]), 4.0);
        assert_eq!(m.controls().count(), 1);
    }

    #[test]
    fn lq_requires_separation() {
        let err = make_benchmark(&BenchmarkSpec::LqDeepRelax(LqParams {
            q: 2.0,
            gamma: 0.5,
            beta: 1.0,
            control_points: 3,
        }));
        assert!(err.is_err());
    }

    #[test]
    fn lq_drifts() {
        let m = make_benchmark(&BenchmarkSpec::LqDeepRelax(LqParams::default())).unwrap();
        let mut out = [0.0];
        // f(x=1, y=0, u=1) = -(1)(1-0)/0.5 = -2
        m.eval_f(&[1.0], &[0.0], &[1.0], &mut out);
        assert_eq!(out[0], -2.0);
        // b(x=1, y=1) = -(1 + 2)(1) + 2(1) = -1
        m.eval_b(&[1.0], &[1.0], &mut out);
        assert_eq!(out[0], -1.0);
        assert_eq!(m.eval_g(&[2.0], &[0.0]), 4.0);
    }

    #[test]
    fn custom_1d_noise_channels_are_separate() {
        let m = make_benchmark(&BenchmarkSpec::Custom1d(Custom1dParams {
            sigma0: 0.7,
            rho_bar: 4.0,
            ..Custom1dParams::default()
        }))
        .unwrap();
        assert_eq!(m.noise_dim(), 2);
        let mut sig = [0.0; 2];
        m.eval_sigma_eps(1.0, &[0.0], &[0.0], &[0.0], &mut sig);
        assert_eq!(sig, [0.7, 0.0]);
        let mut rho = [0.0; 2];
        m.eval_rho(&[0.0], &[0.0], &mut rho);
        assert_eq!(rho, [0.0, 2.0]);
    }

    #[test]
    fn unknown_name_rejected() {
        assert!(BenchmarkSpec::by_name("nope").is_err());
    }
}
