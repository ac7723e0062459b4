//! Backward solve of the averaged one-dimensional limit equation, either
//! from a black-box Hamiltonian evaluator or from per-policy averaged
//! coefficient tables.

use super::{check_box, fit_growth_constant, linspace, snapshot_mask, GridSpec1d, ValueField};
use crate::error::{TsError, TsResult};
use crate::homogenize::EffectiveCoefficients;

const BOUNDARY_TAG: &str = "linear-ghost curvature; one-sided gradient at edges";

/// The averaged Hamiltonian, in one of two concrete forms.
pub enum EffectiveHamiltonian<'a> {
    /// Direct map `(t, x, p, P) -> scalar`.  Must be nonincreasing in `P`
    /// (probed before solving; violations are rejected).
    Evaluator(&'a (dyn Fn(f64, f64, f64, f64) -> f64 + Sync)),
    /// One averaged-coefficient table per frozen policy, each listing the
    /// grid nodes in order; the solver minimizes over the policies.
    PolicyTables(&'a [Vec<EffectiveCoefficients>]),
}

enum Route {
    Eval { alpha: f64 },
    Tables { a: Vec<Vec<f64>>, f: Vec<Vec<f64>>, ell: Vec<f64> },
}

struct EffPrep {
    xg: Vec<f64>,
    dx: f64,
    terminal: Vec<f64>,
    s_max: f64,
    route: Route,
}

fn prepare(
    h: &EffectiveHamiltonian<'_>,
    terminal: &(dyn Fn(f64) -> f64 + Sync),
    grid: &GridSpec1d,
    lambda: f64,
) -> TsResult<EffPrep> {
    check_box(grid.x_lo, grid.x_hi, grid.nx, "x")?;
    if grid.nt == 0 {
        return Err(TsError::invalid("need at least one time step"));
    }
    if !(grid.t_end > 0.0) || !grid.t_end.is_finite() {
        return Err(TsError::invalid("horizon must be positive and finite"));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(TsError::invalid("discount rate must be finite and nonnegative"));
    }
    let nx = grid.nx;
    let xg = linspace(grid.x_lo, grid.x_hi, nx);
    let dx = (grid.x_hi - grid.x_lo) / (nx - 1) as f64;
    let g0: Vec<f64> = xg.iter().map(|&x| terminal(x)).collect();
    if g0.iter().any(|v| !v.is_finite()) {
        return Err(TsError::invalid("terminal data is not finite on the grid"));
    }

    match h {
        EffectiveHamiltonian::Evaluator(eval) => {
            // Gradient and curvature ranges the solve will plausibly visit,
            // scaled up from the terminal data.
            let mut p_hat = 0.0f64;
            let mut pp_hat = 0.0f64;
            for i in 0..nx {
                if i + 1 < nx {
                    p_hat = p_hat.max(((g0[i + 1] - g0[i]) / dx).abs());
                }
                if i > 0 && i + 1 < nx {
                    pp_hat = pp_hat.max(((g0[i + 1] - 2.0 * g0[i] + g0[i - 1]) / (dx * dx)).abs());
                }
            }
            let p_range = 1.5 * p_hat + 1.0;
            let pp_range = 1.5 * pp_hat + 1.0;
            let ps = [-p_range, -p_range / 3.0, 0.0, p_range / 3.0, p_range];
            let pps = [-pp_range, -pp_range / 3.0, 0.0, pp_range / 3.0, pp_range];
            let ts = [0.0, 0.5 * grid.t_end, grid.t_end];
            let hp = 1e-4 * (1.0 + p_range);
            let hpp = 1e-4 * (1.0 + pp_range);

            let mut alpha = 0.0f64;
            let mut dee = 0.0f64;
            for ix in (0..nx).step_by((nx / 8).max(1)) {
                let x = xg[ix];
                for &t in &ts {
                    for &p in &ps {
                        // Degenerate ellipticity: nonincreasing in the
                        // curvature argument.
                        for w in pps.windows(2) {
                            let lo = eval(t, x, p, w[0]);
                            let hi = eval(t, x, p, w[1]);
                            if !lo.is_finite() || !hi.is_finite() {
                                return Err(TsError::invalid(format!(
                                    "averaged Hamiltonian not finite at x = {x}"
                                )));
                            }
                            if hi > lo + 1e-8 * (1.0 + lo.abs()) {
                                return Err(TsError::constraint(
                                    "degenerate ellipticity",
                                    format!(
                                        "averaged Hamiltonian increases in the curvature \
                                         argument at (t, x, p) = ({t}, {x}, {p}): {lo} -> {hi}"
                                    ),
                                ));
                            }
                        }
                        for &pp in &pps {
                            let dp =
                                (eval(t, x, p + hp, pp) - eval(t, x, p - hp, pp)) / (2.0 * hp);
                            let dpp =
                                (eval(t, x, p, pp + hpp) - eval(t, x, p, pp - hpp)) / (2.0 * hpp);
                            if !dp.is_finite() || !dpp.is_finite() {
                                return Err(TsError::invalid(format!(
                                    "averaged Hamiltonian not differentiable near x = {x}"
                                )));
                            }
                            alpha = alpha.max(dp.abs());
                            dee = dee.max(-dpp);
                        }
                    }
                }
            }
            let s_max = lambda + alpha / dx + 2.0 * dee.max(0.0) / (dx * dx);
            Ok(EffPrep { xg, dx, terminal: g0, s_max, route: Route::Eval { alpha } })
        }
        EffectiveHamiltonian::PolicyTables(tables) => {
            if tables.is_empty() {
                return Err(TsError::invalid("need at least one policy table"));
            }
            let mut a = Vec::with_capacity(tables.len());
            let mut f = Vec::with_capacity(tables.len());
            let mut ell = Vec::with_capacity(tables.len() * nx);
            let mut s_max = lambda;
            for (pi, table) in tables.iter().enumerate() {
                if table.len() != nx {
                    return Err(TsError::invalid(format!(
                        "policy {pi} table has {} rows, grid has {nx} nodes",
                        table.len()
                    )));
                }
                let mut ap = Vec::with_capacity(nx);
                let mut fp = Vec::with_capacity(nx);
                for (i, row) in table.iter().enumerate() {
                    if row.x.len() != 1 || row.sigma_bar.len() != 1 || row.f_bar.len() != 1 {
                        return Err(TsError::invalid(
                            "averaged-coefficient tables must be one-dimensional",
                        ));
                    }
                    if (row.x[0] - xg[i]).abs() > 1e-9 * (1.0 + xg[i].abs()) {
                        return Err(TsError::invalid(format!(
                            "policy {pi} row {i} sits at x = {}, grid node is {}",
                            row.x[0], xg[i]
                        )));
                    }
                    let diff = row.sigma_bar[0] * row.sigma_bar[0];
                    ap.push(diff);
                    fp.push(row.f_bar[0]);
                    ell.push(row.ell_bar);
                    s_max = s_max
                        .max(lambda + 2.0 * diff / (dx * dx) + row.f_bar[0].abs() / dx);
                }
                a.push(ap);
                f.push(fp);
            }
            Ok(EffPrep { xg, dx, terminal: g0, s_max, route: Route::Tables { a, f, ell } })
        }
    }
}

/// Smallest admissible step count for the averaged solve on this grid.
pub fn effective_cfl_steps(
    h: &EffectiveHamiltonian<'_>,
    terminal: &(dyn Fn(f64) -> f64 + Sync),
    grid: &GridSpec1d,
    lambda: f64,
) -> TsResult<usize> {
    let prep = prepare(h, terminal, grid, lambda)?;
    let mut nt = ((grid.t_end * prep.s_max / 0.95).ceil() as usize).max(1);
    // `ceil` can land exactly on the bound, which one rounding of `T / nt`
    // then overshoots; make the returned count pass the solver's check.
    if prep.s_max > 0.0 && grid.t_end / nt as f64 > 0.95 / prep.s_max {
        nt += 1;
    }
    Ok(nt)
}

/// Solve the averaged backward equation for `V(t, x)` from the terminal
/// data.  Evaluator input runs a dissipation-stabilized central scheme with
/// the dissipation sized from probed gradient sensitivity; table input runs
/// per-policy upwinding with exhaustive minimization over the policies.
pub fn solve_effective_hjb(
    h: &EffectiveHamiltonian<'_>,
    terminal: &(dyn Fn(f64) -> f64 + Sync),
    grid: &GridSpec1d,
    lambda: f64,
) -> TsResult<ValueField> {
    let prep = prepare(h, terminal, grid, lambda)?;
    let nt = grid.nt;
    let dt = grid.t_end / nt as f64;
    if prep.s_max > 0.0 && dt > 0.95 / prep.s_max {
        return Err(TsError::CflViolation {
            given_dt: dt,
            required_dt: 0.95 / prep.s_max,
            detail: format!(
                "explicit step exceeds the stability bound; need nt >= {}",
                (grid.t_end * prep.s_max / 0.95).ceil() as usize
            ),
        });
    }

    let nx = grid.nx;
    let dx = prep.dx;
    let mut v_next = prep.terminal.clone();
    let mask = snapshot_mask(nt);
    let mut slices: Vec<(f64, Vec<f64>)> = vec![(grid.t_end, v_next.clone())];
    let mut v_curr = vec![0.0; nx];

    for k_step in (0..nt).rev() {
        let t_next = grid.t_end * (k_step + 1) as f64 / nt as f64;
        for i in 0..nx {
            let v = v_next[i];
            let new = match &prep.route {
                Route::Eval { alpha } => {
                    let ham = if i == 0 {
                        let p = (v_next[1] - v) / dx;
                        eval_only(h, t_next, prep.xg[i], p, 0.0)
                    } else if i + 1 == nx {
                        let p = (v - v_next[i - 1]) / dx;
                        eval_only(h, t_next, prep.xg[i], p, 0.0)
                    } else {
                        let second = v_next[i + 1] - 2.0 * v + v_next[i - 1];
                        let p = (v_next[i + 1] - v_next[i - 1]) / (2.0 * dx);
                        eval_only(h, t_next, prep.xg[i], p, second / (dx * dx))
                            - alpha * second / (2.0 * dx)
                    };
                    v - dt * (ham + lambda * v)
                }
                Route::Tables { a, f, ell } => {
                    let de = if i + 1 < nx { (v_next[i + 1] - v) / dx } else { 0.0 };
                    let dw = if i > 0 { (v - v_next[i - 1]) / dx } else { 0.0 };
                    let vxx = if i > 0 && i + 1 < nx {
                        (v_next[i + 1] - 2.0 * v + v_next[i - 1]) / (dx * dx)
                    } else {
                        0.0
                    };
                    let mut best = f64::NEG_INFINITY;
                    for (pi, (ap, fp)) in a.iter().zip(f).enumerate() {
                        let fv = fp[i];
                        let val = ap[i] * vxx
                            + fv.max(0.0) * de
                            + fv.min(0.0) * dw
                            + ell[pi * nx + i];
                        if val > best {
                            best = val;
                        }
                    }
                    v + dt * (best - lambda * v)
                }
            };
            v_curr[i] = new;
        }
        std::mem::swap(&mut v_next, &mut v_curr);
        if mask[k_step] {
            slices.push((grid.t_end * k_step as f64 / nt as f64, v_next.clone()));
        }
    }

    if v_next.iter().any(|v| !v.is_finite()) {
        return Err(TsError::NonFinite {
            context: "averaged backward time stepping".into(),
            time: 0.0,
            state: vec![],
        });
    }

    slices.reverse();
    let times: Vec<f64> = slices.iter().map(|(t, _)| *t).collect();
    let values: Vec<f64> = slices.into_iter().flat_map(|(_, v)| v).collect();
    let growth = fit_growth_constant(&values, &prep.xg, None, nx);
    Ok(ValueField {
        times,
        x_grid: prep.xg,
        y_grid: None,
        values,
        boundary_treatment: BOUNDARY_TAG,
        growth_constant: growth,
    })
}

fn eval_only(h: &EffectiveHamiltonian<'_>, t: f64, x: f64, p: f64, pp: f64) -> f64 {
    match h {
        EffectiveHamiltonian::Evaluator(eval) => eval(t, x, p, pp),
        EffectiveHamiltonian::PolicyTables(_) => unreachable!("table route never calls through"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lq_tables(xg: &[f64]) -> Vec<Vec<EffectiveCoefficients>> {
        vec![xg
            .iter()
            .map(|&x| EffectiveCoefficients {
                t: 0.0,
                x: vec![x],
                sigma_bar: vec![0.0],
                f_bar: vec![-2.0 * x / 3.0],
                ell_bar: 0.0,
                sigma_clip_magnitude: 0.0,
                structure_warning: None,
            })
            .collect()]
    }

    #[test]
    fn transport_profile_is_exact() {
        let ham = |_t: f64, _x: f64, p: f64, _pp: f64| -p;
        let h = EffectiveHamiltonian::Evaluator(&ham);
        let terminal = |x: f64| x;
        let mut grid = GridSpec1d { x_lo: -1.0, x_hi: 3.0, nx: 41, nt: 1, t_end: 0.7 };
        grid.nt = effective_cfl_steps(&h, &terminal, &grid, 0.0).unwrap();
        let vf = solve_effective_hjb(&h, &terminal, &grid, 0.0).unwrap();
        for (ti, &t) in vf.times.iter().enumerate() {
            for (ix, &x) in vf.x_grid.iter().enumerate() {
                let want = x + (0.7 - t);
                assert!(
                    (vf.value(ti, ix, 0) - want).abs() < 1e-10,
                    "V({t},{x}) = {} vs {want}",
                    vf.value(ti, ix, 0)
                );
            }
        }
        assert_eq!(vf.slice(vf.n_times() - 1), &vf.x_grid[..]);
    }

    #[test]
    fn zero_hamiltonian_keeps_constants() {
        let ham = |_t: f64, _x: f64, _p: f64, _pp: f64| 0.0;
        let h = EffectiveHamiltonian::Evaluator(&ham);
        let terminal = |_x: f64| 1.7;
        let grid = GridSpec1d { x_lo: 0.0, x_hi: 1.0, nx: 11, nt: 8, t_end: 1.0 };
        let vf = solve_effective_hjb(&h, &terminal, &grid, 0.0).unwrap();
        assert!(vf.values.iter().all(|&v| v == 1.7));
    }

    #[test]
    fn policy_frozen_linear_flow() {
        let grid0 = GridSpec1d { x_lo: -3.0, x_hi: 3.0, nx: 513, nt: 1, t_end: 0.5 };
        let xg = super::super::linspace(grid0.x_lo, grid0.x_hi, grid0.nx);
        let tables = lq_tables(&xg);
        let h = EffectiveHamiltonian::PolicyTables(&tables);
        let terminal = |x: f64| x * x;
        let mut grid = grid0;
        grid.nt = effective_cfl_steps(&h, &terminal, &grid, 0.0).unwrap();
        let vf = solve_effective_hjb(&h, &terminal, &grid, 0.0).unwrap();
        // Deterministic contraction toward the origin: V(t,x) is the
        // terminal reward ridden along the flow.
        for &ix in &[298usize, 342, 384, 426, 128, 86] {
            let x = vf.x_grid[ix];
            let want = x * x * (-2.0f64 / 3.0).exp();
            let got = vf.value(0, ix, 0);
            assert!(
                (got / want - 1.0).abs() < 0.01,
                "x = {x}: {got} vs {want}"
            );
        }
        let mid = vf.nearest_time(0.25);
        let t = vf.times[mid];
        let x = vf.x_grid[384];
        let want = x * x * (-4.0 * (0.5 - t) / 3.0).exp();
        assert!((vf.value(mid, 384, 0) / want - 1.0).abs() < 0.01);
    }

    #[test]
    fn quadratic_hamiltonian_matches_hopf_lax() {
        let ham = |_t: f64, _x: f64, p: f64, _pp: f64| -0.5 * p * p;
        let h = EffectiveHamiltonian::Evaluator(&ham);
        let terminal = |x: f64| 0.5 * x * x;
        let mut grid = GridSpec1d { x_lo: -3.0, x_hi: 3.0, nx: 513, nt: 1, t_end: 0.5 };
        grid.nt = effective_cfl_steps(&h, &terminal, &grid, 0.0).unwrap();
        let vf = solve_effective_hjb(&h, &terminal, &grid, 0.0).unwrap();
        // Backward equation V_t = -p^2/2 from g = x^2/2: the sup form of
        // the Hopf-Lax envelope gives V(t, x) = x^2 / (2 (1 - (T - t))),
        // drawing terminal data from y = 2x.  Probe only |x| <= 1.5 so the
        // dependence cone stays inside the box, and away from the origin
        // where the globally sized dissipation costs relative accuracy.
        for &ix in &[384usize, 356, 128, 156] {
            let x = vf.x_grid[ix];
            let want = x * x / (2.0 * (1.0 - 0.5));
            let got = vf.value(0, ix, 0);
            assert!((got / want - 1.0).abs() < 0.03, "x = {x}: {got} vs {want}");
        }
    }

    #[test]
    fn curvature_sign_violation_is_rejected() {
        let ham = |_t: f64, _x: f64, _p: f64, pp: f64| pp;
        let h = EffectiveHamiltonian::Evaluator(&ham);
        let terminal = |x: f64| x * x;
        let grid = GridSpec1d { x_lo: -1.0, x_hi: 1.0, nx: 21, nt: 50, t_end: 0.3 };
        match solve_effective_hjb(&h, &terminal, &grid, 0.0) {
            Err(TsError::Constraint { name, .. }) => {
                assert!(name.contains("ellipticity"), "unexpected constraint: {name}");
            }
            other => panic!("expected ellipticity rejection, got {other:?}"),
        }
    }

    #[test]
    fn table_validation_errors() {
        let grid = GridSpec1d { x_lo: -1.0, x_hi: 1.0, nx: 11, nt: 50, t_end: 0.3 };
        let xg = super::super::linspace(grid.x_lo, grid.x_hi, grid.nx);
        let terminal = |x: f64| x;

        let empty: Vec<Vec<EffectiveCoefficients>> = Vec::new();
        assert!(solve_effective_hjb(
            &EffectiveHamiltonian::PolicyTables(&empty),
            &terminal,
            &grid,
            0.0
        )
        .is_err());

        let mut short = lq_tables(&xg);
        short[0].pop();
        assert!(solve_effective_hjb(
            &EffectiveHamiltonian::PolicyTables(&short),
            &terminal,
            &grid,
            0.0
        )
        .is_err());

        let mut shifted = lq_tables(&xg);
        shifted[0][3].x[0] += 0.05;
        assert!(solve_effective_hjb(
            &EffectiveHamiltonian::PolicyTables(&shifted),
            &terminal,
            &grid,
            0.0
        )
        .is_err());

        let mut fat = lq_tables(&xg);
        fat[0][0].sigma_bar = vec![0.0, 0.0, 0.0, 0.0];
        assert!(solve_effective_hjb(
            &EffectiveHamiltonian::PolicyTables(&fat),
            &terminal,
            &grid,
            0.0
        )
        .is_err());
    }
}
