//! Backward explicit solve of the scale-coupled dynamic-programming
//! equation on a rectangle, one slow and one fast axis.

use super::{
    check_box, fit_growth_constant, linspace, snapshot_mask, GridSpec2d, ValueField,
};
use crate::error::{TsError, TsResult};
use crate::model::TwoScaleModel;
use rayon::prelude::*;

const BOUNDARY_TAG: &str =
    "linear-ghost curvature at edges; outward advection dropped; mixed term zeroed on the frame";

/// Coefficient tables frozen over the grid.  Drift and diffusion closures
/// are time-independent by construction; the running reward is probed and
/// cached when it shows no time dependence.
struct Prepared {
    xg: Vec<f64>,
    yg: Vec<f64>,
    dx: f64,
    dy: f64,
    /// Per node, per control: slow drift.
    f_tab: Vec<f64>,
    /// Per node, per control: slow diffusion square `sigma sigma^T`.
    axx_tab: Vec<f64>,
    /// Per node, per control: mixed coefficient `2 sigma rho^T / sqrt(eps)`.
    cxy_tab: Vec<f64>,
    /// Per node, per control: cached running reward, when static in time.
    ell_tab: Option<Vec<f64>>,
    /// Per node: fast drift over eps.
    b_tab: Vec<f64>,
    /// Per node: fast diffusion square over eps.
    ayy_tab: Vec<f64>,
    s_max: f64,
    any_cross: bool,
    any_axx: bool,
    /// The cached reward table is identically zero, so the stepping loop can
    /// skip reading it; streaming the table dominates the per-step cost on
    /// reward-free models.
    ell_zero: bool,
}

fn prepare(model: &TwoScaleModel, grid: &GridSpec2d, epsilon: f64) -> TsResult<Prepared> {
    if model.slow_dim() != 1 || model.fast_dim() != 1 {
        return Err(TsError::invalid(
            "grid solver handles one slow and one fast dimension only",
        ));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(TsError::invalid("epsilon must be positive and finite"));
    }
    check_box(grid.x_lo, grid.x_hi, grid.nx, "x")?;
    check_box(grid.y_lo, grid.y_hi, grid.ny, "y")?;
    if grid.nt == 0 {
        return Err(TsError::invalid("need at least one time step"));
    }

    let (nx, ny) = (grid.nx, grid.ny);
    let xg = linspace(grid.x_lo, grid.x_hi, nx);
    let yg = linspace(grid.y_lo, grid.y_hi, ny);
    let dx = (grid.x_hi - grid.x_lo) / (nx - 1) as f64;
    let dy = (grid.y_hi - grid.y_lo) / (ny - 1) as f64;
    let r = model.noise_dim();
    let nu = model.controls().count();
    let t_end = model.horizon();
    let lambda = model.lambda();
    let sqrt_eps = epsilon.sqrt();

    let nodes = nx * ny;
    let mut f_tab = vec![0.0; nodes * nu];
    let mut axx_tab = vec![0.0; nodes * nu];
    let mut cxy_tab = vec![0.0; nodes * nu];
    let mut b_tab = vec![0.0; nodes];
    let mut ayy_tab = vec![0.0; nodes];

    let mut ws = model.scratch();
    let mut s_max = 0.0f64;
    let mut any_cross = false;
    let mut any_axx = false;
    for ix in 0..nx {
        for iy in 0..ny {
            let node = ix * ny + iy;
            let x = [xg[ix]];
            let y = [yg[iy]];
            model.eval_b(&x, &y, &mut ws.b);
            model.eval_rho(&x, &y, &mut ws.rho);
            let b_eps = ws.b[0] / epsilon;
            let ayy: f64 = ws.rho.iter().map(|v| v * v).sum::<f64>() / epsilon;
            b_tab[node] = b_eps;
            ayy_tab[node] = ayy;
            let interior = ix > 0 && ix + 1 < nx && iy > 0 && iy + 1 < ny;
            for k in 0..nu {
                let u = model.controls().point(k).to_vec();
                model.eval_f(&x, &y, &u, &mut ws.f);
                model.eval_sigma_eps(epsilon, &x, &y, &u, &mut ws.sigma);
                let axx: f64 = ws.sigma.iter().map(|v| v * v).sum();
                let cross: f64 =
                    2.0 * ws.sigma.iter().zip(&ws.rho[..r]).map(|(s, q)| s * q).sum::<f64>()
                        / sqrt_eps;
                f_tab[node * nu + k] = ws.f[0];
                axx_tab[node * nu + k] = axx;
                cxy_tab[node * nu + k] = cross;
                if axx != 0.0 {
                    any_axx = true;
                }
                if cross != 0.0 {
                    any_cross = true;
                    if interior {
                        let need = cross.abs() / (2.0 * dx * dy);
                        if axx / (dx * dx) < need * (1.0 - 1e-12)
                            || ayy / (dy * dy) < need * (1.0 - 1e-12)
                        {
                            return Err(TsError::MonotonicityLoss {
                                node: (ix, iy),
                                detail: format!(
                                    "mixed-derivative weight {need:.3e} exceeds a diagonal \
                                     diffusion weight ({:.3e} in x, {:.3e} in y); refine the \
                                     grid anisotropically or reduce the correlation",
                                    axx / (dx * dx),
                                    ayy / (dy * dy)
                                ),
                            });
                        }
                    }
                }
                let s = lambda
                    + 2.0 * axx / (dx * dx)
                    + 2.0 * ayy / (dy * dy)
                    + ws.f[0].abs() / dx
                    + b_eps.abs() / dy;
                if !s.is_finite() {
                    return Err(TsError::NonFinite {
                        context: "coefficient evaluation on the grid".into(),
                        time: 0.0,
                        state: vec![xg[ix], yg[iy]],
                    });
                }
                s_max = s_max.max(s);
            }
        }
    }

    // Probe the running reward for time dependence; cache it when static.
    let probe_ts = [0.0, 0.37 * t_end, 0.71 * t_end, t_end];
    let mut ell_static = true;
    'probe: for ix in (0..nx).step_by((nx / 4).max(1)) {
        for iy in (0..ny).step_by((ny / 4).max(1)) {
            for k in (0..nu).step_by((nu / 4).max(1)) {
                let x = [xg[ix]];
                let y = [yg[iy]];
                let u = model.controls().point(k).to_vec();
                let base = model.eval_ell(probe_ts[0], &x, &y, &u);
                for &t in &probe_ts[1..] {
                    if (model.eval_ell(t, &x, &y, &u) - base).abs() > 1e-12 * (1.0 + base.abs())
                    {
                        ell_static = false;
                        break 'probe;
                    }
                }
            }
        }
    }
    let ell_tab = if ell_static {
        let mut tab = vec![0.0; nodes * nu];
        for ix in 0..nx {
            for iy in 0..ny {
                let x = [xg[ix]];
                let y = [yg[iy]];
                for k in 0..nu {
                    let u = model.controls().point(k).to_vec();
                    tab[(ix * ny + iy) * nu + k] = model.eval_ell(0.0, &x, &y, &u);
                }
            }
        }
        Some(tab)
    } else {
        None
    };
    let ell_zero = matches!(&ell_tab, Some(tab) if tab.iter().all(|&v| v == 0.0));

    Ok(Prepared {
        xg,
        yg,
        dx,
        dy,
        f_tab,
        axx_tab,
        cxy_tab,
        ell_tab,
        b_tab,
        ayy_tab,
        s_max,
        any_cross,
        any_axx,
        ell_zero,
    })
}

/// Smallest admissible number of time steps for the grid, from the
/// explicit-stability bound over all nodes and controls.
pub fn full_cfl_steps(model: &TwoScaleModel, grid: &GridSpec2d, epsilon: f64) -> TsResult<usize> {
    let prep = prepare(model, grid, epsilon)?;
    let mut nt = ((model.horizon() * prep.s_max / 0.95).ceil() as usize).max(1);
    // `ceil` can land exactly on the bound, which one rounding of `T / nt`
    // then overshoots; make the returned count pass the solver's check.
    if prep.s_max > 0.0 && model.horizon() / nt as f64 > 0.95 / prep.s_max {
        nt += 1;
    }
    Ok(nt)
}

/// Solve the coupled backward equation for `V(t, x, y)` at scale ratio
/// `epsilon` by explicit time stepping from the terminal reward.
///
/// The step `T / nt` must satisfy the stability bound; too few steps is an
/// error carrying the required step, not a silent adjustment.  Use
/// [`full_cfl_steps`] to size `nt`.
pub fn solve_full_hjb(
    model: &TwoScaleModel,
    grid: &GridSpec2d,
    epsilon: f64,
) -> TsResult<ValueField> {
    let prep = prepare(model, grid, epsilon)?;
    let t_end = model.horizon();
    let lambda = model.lambda();
    let nt = grid.nt;
    let dt = t_end / nt as f64;
    let required = 0.95 / prep.s_max;
    if prep.s_max > 0.0 && dt > required {
        return Err(TsError::CflViolation {
            given_dt: dt,
            required_dt: required,
            detail: format!(
                "explicit step T/nt = {dt:.3e} exceeds the stability bound; need nt >= {}",
                (t_end * prep.s_max / 0.95).ceil() as usize
            ),
        });
    }

    let (nx, ny) = (grid.nx, grid.ny);
    let nu = model.controls().count();
    let nodes = nx * ny;
    let inv_dx = 1.0 / prep.dx;
    let inv_dy = 1.0 / prep.dy;
    let inv_dx2 = inv_dx * inv_dx;
    let inv_dy2 = inv_dy * inv_dy;
    let inv_cross = 1.0 / (2.0 * prep.dx * prep.dy);

    let mut v_next = vec![0.0; nodes];
    for ix in 0..nx {
        for iy in 0..ny {
            v_next[ix * ny + iy] = model.eval_g(&[prep.xg[ix]], &[prep.yg[iy]]);
        }
    }
    if v_next.iter().any(|v| !v.is_finite()) {
        return Err(TsError::invalid("terminal reward is not finite on the grid"));
    }

    let mask = snapshot_mask(nt);
    let mut slices: Vec<(f64, Vec<f64>)> = Vec::new();
    slices.push((t_end, v_next.clone()));

    let mut v_curr = vec![0.0; nodes];
    let controls: Vec<Vec<f64>> = (0..nu).map(|k| model.controls().point(k).to_vec()).collect();

    for k_step in (0..nt).rev() {
        let t_next = t_end * (k_step + 1) as f64 / nt as f64;
        let vn = &v_next;
        let prep_ref = &prep;
        let controls_ref = &controls;
        v_curr
            .par_chunks_mut(ny)
            .enumerate()
            .for_each(|(ix, row)| {
                let x = [prep_ref.xg[ix]];
                for (iy, out) in row.iter_mut().enumerate() {
                    let node = ix * ny + iy;
                    let v = vn[node];
                    let has_w = ix > 0;
                    let has_e = ix + 1 < nx;
                    let has_s = iy > 0;
                    let has_n = iy + 1 < ny;
                    let ve = if has_e { vn[node + ny] } else { v };
                    let vw = if has_w { vn[node - ny] } else { v };
                    let vnn = if has_n { vn[node + 1] } else { v };
                    let vs = if has_s { vn[node - 1] } else { v };
                    let de = if has_e { (ve - v) * inv_dx } else { 0.0 };
                    let dw = if has_w { (v - vw) * inv_dx } else { 0.0 };
                    let dn = if has_n { (vnn - v) * inv_dy } else { 0.0 };
                    let ds = if has_s { (v - vs) * inv_dy } else { 0.0 };
                    let vxx = if has_e && has_w { (ve - 2.0 * v + vw) * inv_dx2 } else { 0.0 };
                    let vyy = if has_n && has_s { (vnn - 2.0 * v + vs) * inv_dy2 } else { 0.0 };

                    let b = prep_ref.b_tab[node];
                    let fast = prep_ref.ayy_tab[node] * vyy
                        + b.max(0.0) * dn
                        + b.min(0.0) * ds;

                    let base = node * nu;
                    let mut best = f64::NEG_INFINITY;
                    for kc in 0..nu {
                        let f = prep_ref.f_tab[base + kc];
                        let mut val = f.max(0.0) * de + f.min(0.0) * dw;
                        if prep_ref.any_axx {
                            val += prep_ref.axx_tab[base + kc] * vxx;
                        }
                        if prep_ref.any_cross && has_e && has_w && has_n && has_s {
                            let c = prep_ref.cxy_tab[base + kc];
                            if c != 0.0 {
                                let diag = if c > 0.0 {
                                    vn[node + ny + 1] + vn[node - ny - 1]
                                } else {
                                    vn[node - ny + 1] + vn[node + ny - 1]
                                };
                                val += c.abs()
                                    * (2.0 * v + diag - ve - vw - vnn - vs)
                                    * inv_cross;
                            }
                        }
                        if !prep_ref.ell_zero {
                            val += match &prep_ref.ell_tab {
                                Some(tab) => tab[base + kc],
                                None => model.eval_ell(
                                    t_next,
                                    &x,
                                    &[prep_ref.yg[iy]],
                                    &controls_ref[kc],
                                ),
                            };
                        }
                        if val > best {
                            best = val;
                        }
                    }

                    *out = v + dt * (best + fast - lambda * v);
                }
            });
        std::mem::swap(&mut v_next, &mut v_curr);
        if mask[k_step] {
            let t_here = t_end * k_step as f64 / nt as f64;
            slices.push((t_here, v_next.clone()));
        }
    }

    if v_next.iter().any(|v| !v.is_finite()) {
        return Err(TsError::NonFinite {
            context: "backward time stepping".into(),
            time: 0.0,
            state: vec![],
        });
    }

    slices.reverse();
    let times: Vec<f64> = slices.iter().map(|(t, _)| *t).collect();
    let values: Vec<f64> = slices.into_iter().flat_map(|(_, v)| v).collect();
    let growth = fit_growth_constant(&values, &prep.xg, Some(&prep.yg), nodes);
    Ok(ValueField {
        times,
        x_grid: prep.xg,
        y_grid: Some(prep.yg),
        values,
        boundary_treatment: BOUNDARY_TAG,
        growth_constant: growth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ControlSet, TwoScaleModel};
    use crate::rng::CounterRng;
    use crate::sim::{estimate_payoff, ControlPolicy};
    use std::sync::Arc;

    fn fast_heat_model() -> TwoScaleModel {
        TwoScaleModel::builder(1, 1, 1)
            .fast_drift(Arc::new(|_x, y, out| out[0] = -y[0]))
            .fast_diffusion(Arc::new(|_x, _y, out| out[0] = 0.5f64.sqrt()))
            .terminal_reward(Arc::new(|x, y| x[0] * x[0] + y[0] * y[0]))
            .build()
            .unwrap()
    }

    #[test]
    fn constants_survive_unchanged() {
        let model = TwoScaleModel::builder(1, 1, 1)
            .fast_drift(Arc::new(|_x, y, out| out[0] = -y[0]))
            .fast_diffusion(Arc::new(|_x, _y, out| out[0] = 1.0))
            .terminal_reward(Arc::new(|_x, _y| 2.5))
            .build()
            .unwrap();
        let mut grid = GridSpec2d {
            x_lo: -1.0,
            x_hi: 1.0,
            y_lo: -2.0,
            y_hi: 2.0,
            nx: 9,
            ny: 17,
            nt: 1,
        };
        grid.nt = full_cfl_steps(&model, &grid, 0.4).unwrap();
        let vf = solve_full_hjb(&model, &grid, 0.4).unwrap();
        assert!(vf.values.iter().all(|&v| v == 2.5), "constants must be exact");
        assert_eq!(*vf.times.last().unwrap(), 1.0);
        assert_eq!(vf.times[0], 0.0);
        assert!(vf.growth_constant <= 2.5 && vf.growth_constant > 0.0);
    }

    #[test]
    fn pure_discount_decays_exponentially() {
        let model = TwoScaleModel::builder(1, 1, 1)
            .fast_drift(Arc::new(|_x, y, out| out[0] = -y[0]))
            .fast_diffusion(Arc::new(|_x, _y, out| out[0] = 1.0))
            .terminal_reward(Arc::new(|_x, _y| 2.0))
            .lambda(0.3)
            .build()
            .unwrap();
        let mut grid = GridSpec2d {
            x_lo: -1.0,
            x_hi: 1.0,
            y_lo: -2.0,
            y_hi: 2.0,
            nx: 9,
            ny: 17,
            nt: 1,
        };
        grid.nt = full_cfl_steps(&model, &grid, 0.5).unwrap();
        let vf = solve_full_hjb(&model, &grid, 0.5).unwrap();
        let want = 2.0 * (-0.3f64).exp();
        for &v in vf.slice(0) {
            assert!((v / want - 1.0).abs() < 2e-3, "{v} vs {want}");
        }
    }

    #[test]
    fn fast_heat_agrees_with_monte_carlo() {
        let model = fast_heat_model();
        let eps = 0.5;
        let mut grid = GridSpec2d {
            x_lo: 0.0,
            x_hi: 2.0,
            y_lo: -3.0,
            y_hi: 3.0,
            nx: 9,
            ny: 193,
            nt: 1,
        };
        grid.nt = full_cfl_steps(&model, &grid, eps).unwrap();
        let vf = solve_full_hjb(&model, &grid, eps).unwrap();

        let mc_model = model.with_epsilon(eps).unwrap();
        let policy = ControlPolicy::constant(&[0.0]);
        let probes = [
            (0.0, 1.5, 1.0),
            (0.0, 1.0, -0.5),
            (0.3, 0.5, 0.0),
            (0.3, 1.5, -1.0),
            (0.0, 2.0, 2.0),
        ];
        for (pi, &(t_raw, x, y)) in probes.iter().enumerate() {
            let ti = vf.nearest_time(t_raw);
            let t = vf.times[ti];
            let ix = super::super::nearest_index(&vf.x_grid, x);
            let iy = super::super::nearest_index(vf.y_grid.as_ref().unwrap(), y);
            let span = 1.0 - t;
            let steps = (span / 0.01).ceil() as u64;
            let dt = span / steps as f64;
            let mc = estimate_payoff(&mc_model, &policy, t, &[x], &[y], dt, 40_000, 900 + pi as u64)
                .unwrap();
            let solver = vf.value(ti, ix, iy);
            let tol = (0.02 * mc.mean.abs()).max(3.0 * mc.standard_error);
            assert!(
                (solver - mc.mean).abs() <= tol,
                "probe {pi}: solver {solver} vs mc {} +/- {} (tol {tol})",
                mc.mean,
                mc.standard_error
            );
        }
    }

    #[test]
    fn too_few_steps_is_rejected_with_requirement() {
        let model = fast_heat_model();
        let grid = GridSpec2d {
            x_lo: 0.0,
            x_hi: 2.0,
            y_lo: -3.0,
            y_hi: 3.0,
            nx: 9,
            ny: 65,
            nt: 3,
        };
        match solve_full_hjb(&model, &grid, 0.5) {
            Err(TsError::CflViolation { given_dt, required_dt, .. }) => {
                assert!(required_dt < given_dt);
            }
            other => panic!("expected a stability rejection, got {other:?}"),
        }
    }

    #[test]
    fn comparison_principle_on_random_terminal_pairs() {
        let nx = 21;
        let ny = 21;
        let xs = linspace(-1.5, 1.5, nx);
        let ys = linspace(-2.0, 2.0, ny);
        let mut rng = CounterRng::new(7, 0);
        let g1: Vec<f64> = (0..nx * ny).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let mut bump_rng = CounterRng::new(7, 1);
        let g2: Vec<f64> =
            g1.iter().map(|v| v + bump_rng.uniform_in(0.0, 0.5)).collect();

        let build = |table: Vec<f64>| {
            let (txs, tys) = (xs.clone(), ys.clone());
            TwoScaleModel::builder(1, 1, 2)
                .slow_drift(Arc::new(|x, y, u, out| out[0] = 0.5 * u[0] * (y[0] - x[0])))
                .slow_diffusion(Arc::new(|_x, _y, _u, out| {
                    out[0] = 0.3;
                    out[1] = 0.0;
                }))
                .fast_drift(Arc::new(|x, y, out| out[0] = -y[0] + 0.3 * x[0]))
                .fast_diffusion(Arc::new(|_x, _y, out| {
                    out[0] = 0.0;
                    out[1] = 0.8;
                }))
                .running_reward(Arc::new(|_t, x, _y, u| 0.1 * x[0] * x[0] + 0.05 * u[0] * u[0]))
                .terminal_reward(Arc::new(move |x, y| {
                    let ix = super::super::nearest_index(&txs, x[0]);
                    let iy = super::super::nearest_index(&tys, y[0]);
                    table[ix * tys.len() + iy]
                }))
                .lambda(0.15)
                .horizon(0.4)
                .controls(ControlSet::grid_1d(0.0, 1.0, 9).unwrap())
                .build()
                .unwrap()
        };
        let m1 = build(g1);
        let m2 = build(g2);
        let mut grid = GridSpec2d {
            x_lo: -1.5,
            x_hi: 1.5,
            y_lo: -2.0,
            y_hi: 2.0,
            nx,
            ny,
            nt: 1,
        };
        grid.nt = full_cfl_steps(&m1, &grid, 0.35).unwrap();
        let v1 = solve_full_hjb(&m1, &grid, 0.35).unwrap();
        let v2 = solve_full_hjb(&m2, &grid, 0.35).unwrap();
        for (a, b) in v1.values.iter().zip(&v2.values) {
            assert!(b >= &(a - 1e-11), "ordering lost: {a} vs {b}");
        }
    }

    #[test]
    fn mixed_derivative_stencil_exact_on_bilinear_data() {
        let model = TwoScaleModel::builder(1, 1, 2)
            .slow_diffusion(Arc::new(|_x, _y, _u, out| {
                out[0] = 0.5;
                out[1] = 0.0;
            }))
            .fast_diffusion(Arc::new(|_x, _y, out| {
                out[0] = 0.4;
                out[1] = 0.3;
            }))
            .terminal_reward(Arc::new(|x, y| x[0] * y[0]))
            .horizon(0.05)
            .build()
            .unwrap();
        let mut grid = GridSpec2d {
            x_lo: -1.5,
            x_hi: 1.5,
            y_lo: -1.5,
            y_hi: 1.5,
            nx: 61,
            ny: 61,
            nt: 1,
        };
        grid.nt = full_cfl_steps(&model, &grid, 1.0).unwrap();
        let vf = solve_full_hjb(&model, &grid, 1.0).unwrap();
        // tr(A D^2) of x*y is twice the mixed coefficient: 2 * 0.2; constant
        // curvature propagates the terminal surface linearly in time.
        for ix in 28..=32 {
            for iy in 28..=32 {
                let x = vf.x_grid[ix];
                let y = vf.y_grid.as_ref().unwrap()[iy];
                let want = x * y + 0.05 * 0.4;
                let got = vf.value(0, ix, iy);
                assert!((got - want).abs() < 1e-9, "({x},{y}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn lost_monotonicity_is_rejected_with_witness() {
        let model = TwoScaleModel::builder(1, 1, 2)
            .slow_diffusion(Arc::new(|_x, _y, _u, out| {
                out[0] = 0.6;
                out[1] = 0.0;
            }))
            .fast_diffusion(Arc::new(|_x, _y, out| {
                out[0] = 0.5;
                out[1] = 0.1;
            }))
            .terminal_reward(Arc::new(|x, y| x[0] * y[0]))
            .build()
            .unwrap();
        let grid = GridSpec2d {
            x_lo: -1.0,
            x_hi: 1.0,
            y_lo: -1.0,
            y_hi: 1.0,
            nx: 41,
            ny: 41,
            nt: 500,
        };
        match solve_full_hjb(&model, &grid, 1.0) {
            Err(TsError::MonotonicityLoss { node, .. }) => {
                assert!(node.0 < 41 && node.1 < 41);
            }
            other => panic!("expected monotonicity rejection, got {other:?}"),
        }
    }

    #[test]
    fn growth_constant_stable_under_refinement() {
        let model = fast_heat_model();
        let mut coarse = GridSpec2d {
            x_lo: 0.0,
            x_hi: 2.0,
            y_lo: -3.0,
            y_hi: 3.0,
            nx: 9,
            ny: 97,
            nt: 1,
        };
        coarse.nt = full_cfl_steps(&model, &coarse, 0.5).unwrap();
        let mut fine = GridSpec2d { ny: 193, nt: 1, ..coarse };
        fine.nt = full_cfl_steps(&model, &fine, 0.5).unwrap();
        let kc = solve_full_hjb(&model, &coarse, 0.5).unwrap().growth_constant;
        let kf = solve_full_hjb(&model, &fine, 0.5).unwrap().growth_constant;
        assert!((kc / kf - 1.0).abs() < 0.10, "growth fit moved: {kc} vs {kf}");
    }
}
