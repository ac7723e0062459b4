//! Scale-ratio convergence study: solve the coupled equation at several
//! values of the ratio, solve the averaged equation once, and measure the
//! sup-norm gap on a compact probe region well inside the computational
//! box.

use super::effective::{effective_cfl_steps, solve_effective_hjb, EffectiveHamiltonian};
use super::full::{full_cfl_steps, solve_full_hjb};
use super::{nearest_index, GridSpec1d, GridSpec2d, ValueField};
use crate::error::{TsError, TsResult};
use crate::model::TwoScaleModel;

/// Compact region the gap metrics are restricted to.  Keep it well inside
/// the grid box so lateral-boundary artifacts stay outside.
#[derive(Clone, Copy, Debug)]
pub struct ProbeBox {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    /// Only slices with `t <= t_hi` enter the gap.
    pub t_hi: f64,
}

#[derive(Clone, Debug)]
pub struct ConvergenceStudy {
    pub epsilons: Vec<f64>,
    /// Per ratio: sup over the probe region, at the fixed fast slice, of
    /// the coupled-minus-averaged difference.
    pub gaps: Vec<f64>,
    /// Per ratio: largest across-the-fast-axis spread of the coupled
    /// solution at mid-horizon (the limit is flat in the fast variable).
    pub spreads: Vec<f64>,
    /// Sup-norm movement of the smallest-ratio solve under one 2x grid
    /// refinement, on the same probe region.
    pub grid_error: f64,
    pub gaps_decreasing: bool,
    pub spreads_decreasing: bool,
    /// Final gap within three times the refinement movement.
    pub final_gap_bounded: bool,
    pub verdict: bool,
}

fn probe_x_indices(xg: &[f64], probe: &ProbeBox) -> Vec<usize> {
    (0..xg.len()).filter(|&i| xg[i] >= probe.x_lo && xg[i] <= probe.x_hi).collect()
}

/// Gap at the `iy_star` fast line between a coupled field and the averaged
/// field, over probe times and slow nodes.  `stride` maps coarse slow
/// indices to the coupled field's (possibly refined) axis.
fn slice_gap(
    full: &ValueField,
    eff: &ValueField,
    xs: &[usize],
    iy_star: usize,
    stride: usize,
    t_hi: f64,
) -> f64 {
    let mut gap = 0.0f64;
    for (ti, &t) in full.times.iter().enumerate() {
        if t > t_hi {
            continue;
        }
        let tj = eff.nearest_time(t);
        for &ix in xs {
            let d = (full.value(ti, ix * stride, iy_star) - eff.value(tj, ix, 0)).abs();
            gap = gap.max(d);
        }
    }
    gap
}

/// Fast-axis spread of a coupled field at mid-horizon over the probe box.
fn mid_horizon_spread(full: &ValueField, xs: &[usize], probe: &ProbeBox, t_end: f64) -> f64 {
    let ti = full.nearest_time(0.5 * t_end);
    let yg = full.y_grid.as_ref().expect("coupled field carries a fast axis");
    let ys: Vec<usize> =
        (0..yg.len()).filter(|&j| yg[j] >= probe.y_lo && yg[j] <= probe.y_hi).collect();
    let mut spread = 0.0f64;
    for &ix in xs {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &iy in &ys {
            let v = full.value(ti, ix, iy);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        spread = spread.max(hi - lo);
    }
    spread
}

/// Solve the coupled equation at each scale ratio and the averaged
/// equation once, and report gap and flatness metrics plus a refinement
/// estimate of the discretization error at the smallest ratio.
pub fn convergence_study(
    model: &TwoScaleModel,
    effective: &EffectiveHamiltonian<'_>,
    terminal_bar: &(dyn Fn(f64) -> f64 + Sync),
    y_star: f64,
    epsilons: &[f64],
    grid: &GridSpec2d,
    probe: &ProbeBox,
) -> TsResult<ConvergenceStudy> {
    if epsilons.is_empty() {
        return Err(TsError::invalid("need at least one scale ratio"));
    }
    if epsilons.windows(2).any(|w| w[0] <= w[1]) || epsilons.iter().any(|&e| !(e > 0.0)) {
        return Err(TsError::invalid("scale ratios must be positive and strictly decreasing"));
    }
    if probe.x_lo < grid.x_lo
        || probe.x_hi > grid.x_hi
        || probe.y_lo < grid.y_lo
        || probe.y_hi > grid.y_hi
        || !(probe.x_lo < probe.x_hi)
        || !(probe.y_lo < probe.y_hi)
    {
        return Err(TsError::invalid("probe region must sit inside the grid box"));
    }
    let t_end = model.horizon();
    if !(probe.t_hi > 0.0) || probe.t_hi > t_end {
        return Err(TsError::invalid("probe time cutoff must lie in (0, T]"));
    }
    if y_star < grid.y_lo || y_star > grid.y_hi {
        return Err(TsError::invalid("fast slice must lie inside the grid box"));
    }

    let eff_grid0 = GridSpec1d {
        x_lo: grid.x_lo,
        x_hi: grid.x_hi,
        nx: grid.nx,
        nt: 1,
        t_end,
    };
    let eff_grid = GridSpec1d {
        nt: effective_cfl_steps(effective, terminal_bar, &eff_grid0, model.lambda())?,
        ..eff_grid0
    };
    let v_eff = solve_effective_hjb(effective, terminal_bar, &eff_grid, model.lambda())?;

    let xs = probe_x_indices(&v_eff.x_grid, probe);
    if xs.is_empty() {
        return Err(TsError::invalid("probe region contains no slow grid nodes"));
    }

    let mut gaps = Vec::with_capacity(epsilons.len());
    let mut spreads = Vec::with_capacity(epsilons.len());
    let mut last_full: Option<ValueField> = None;
    for &eps in epsilons {
        let spec = GridSpec2d { nt: full_cfl_steps(model, grid, eps)?, ..*grid };
        let vf = solve_full_hjb(model, &spec, eps)?;
        let iy_star = nearest_index(vf.y_grid.as_ref().unwrap(), y_star);
        gaps.push(slice_gap(&vf, &v_eff, &xs, iy_star, 1, probe.t_hi));
        spreads.push(mid_horizon_spread(&vf, &xs, probe, t_end));
        last_full = Some(vf);
    }

    // One dyadic refinement at the smallest ratio bounds the portion of
    // the final gap owed to the grid rather than to the scale ratio.
    let eps_min = *epsilons.last().unwrap();
    let fine_spec0 = GridSpec2d {
        nx: 2 * grid.nx - 1,
        ny: 2 * grid.ny - 1,
        nt: 1,
        ..*grid
    };
    let fine_spec =
        GridSpec2d { nt: full_cfl_steps(model, &fine_spec0, eps_min)?, ..fine_spec0 };
    let v_fine = solve_full_hjb(model, &fine_spec, eps_min)?;
    let coarse = last_full.expect("at least one ratio was solved");
    let iy_star_c = nearest_index(coarse.y_grid.as_ref().unwrap(), y_star);
    let mut grid_error = 0.0f64;
    for (ti, &t) in coarse.times.iter().enumerate() {
        if t > probe.t_hi {
            continue;
        }
        let tj = v_fine.nearest_time(t);
        for &ix in &xs {
            let d = (coarse.value(ti, ix, iy_star_c)
                - v_fine.value(tj, 2 * ix, 2 * iy_star_c))
            .abs();
            grid_error = grid_error.max(d);
        }
    }

    let gaps_decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    let spreads_decreasing = spreads.windows(2).all(|w| w[1] < w[0] + 1e-12);
    let final_gap_bounded = *gaps.last().unwrap() <= 3.0 * grid_error;
    Ok(ConvergenceStudy {
        epsilons: epsilons.to_vec(),
        gaps,
        spreads,
        grid_error,
        gaps_decreasing,
        spreads_decreasing,
        final_gap_bounded,
        verdict: gaps_decreasing && spreads_decreasing && final_gap_bounded,
    })
}
