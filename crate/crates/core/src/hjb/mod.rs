//! Explicit monotone finite-difference solvers for the backward
//! dynamic-programming equation: the full two-scale problem in one slow and
//! one fast dimension, the averaged one-dimensional limit problem, and the
//! study comparing the two as the scale ratio shrinks.
//!
//! Schemes are first-order upwind in drift, central in diffusion, with the
//! mixed second-order term handled by the seven-point tilted stencil that
//! keeps every off-diagonal weight nonnegative.  Time stepping is explicit
//! with a hard stability bound; a step count too small for the bound is
//! rejected rather than silently clipped.

mod effective;
mod full;
mod study;

pub use effective::{
    effective_cfl_steps, solve_effective_hjb, EffectiveHamiltonian,
};
pub use full::{full_cfl_steps, solve_full_hjb};
pub use study::{convergence_study, ConvergenceStudy, ProbeBox};

use crate::error::{TsError, TsResult};
use crate::report::CsvTable;

/// How many time slices a solve retains (endpoints always included).
pub(crate) const STORED_SLICES: usize = 65;

/// Space-time grid for the full solver: a box in `(x, y)` and `nt` uniform
/// steps over the model horizon.
#[derive(Clone, Copy, Debug)]
pub struct GridSpec2d {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
}

/// Grid for the averaged problem: an interval in `x`, `nt` steps on
/// `[0, t_end]`.
#[derive(Clone, Copy, Debug)]
pub struct GridSpec1d {
    pub x_lo: f64,
    pub x_hi: f64,
    pub nx: usize,
    pub nt: usize,
    pub t_end: f64,
}

/// A solved value function on subsampled time slices.
///
/// `values` is laid out time-major: slice `ti` covers
/// `[ti * nx * ny .. (ti + 1) * nx * ny)` with the fast index innermost
/// (`ny = 1` when `y_grid` is absent).  The last slice is the terminal data
/// verbatim.
#[derive(Clone, Debug)]
pub struct ValueField {
    pub times: Vec<f64>,
    pub x_grid: Vec<f64>,
    pub y_grid: Option<Vec<f64>>,
    pub values: Vec<f64>,
    pub boundary_treatment: &'static str,
    /// Smallest `K` with `|V| <= K (1 + |x|^2 + |y|^2)` over the stored
    /// nodes.
    pub growth_constant: f64,
}

impl ValueField {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_x(&self) -> usize {
        self.x_grid.len()
    }

    pub fn n_y(&self) -> usize {
        self.y_grid.as_ref().map_or(1, |g| g.len())
    }

    pub fn slice(&self, ti: usize) -> &[f64] {
        let stride = self.n_x() * self.n_y();
        &self.values[ti * stride..(ti + 1) * stride]
    }

    /// Value at a stored slice, slow node `ix`, fast node `iy` (pass 0 for
    /// a one-dimensional field).
    pub fn value(&self, ti: usize, ix: usize, iy: usize) -> f64 {
        self.slice(ti)[ix * self.n_y() + iy]
    }

    /// Index of the stored slice closest to `t`.
    pub fn nearest_time(&self, t: f64) -> usize {
        nearest_index(&self.times, t)
    }

    /// Rows `t, x[, y], value` over every stored node.
    pub fn to_csv(&self) -> CsvTable {
        let mut table = if self.y_grid.is_some() {
            CsvTable::new(&["t", "x", "y", "value"])
        } else {
            CsvTable::new(&["t", "x", "value"])
        };
        for (ti, &t) in self.times.iter().enumerate() {
            for (ix, &x) in self.x_grid.iter().enumerate() {
                match &self.y_grid {
                    Some(yg) => {
                        for (iy, &y) in yg.iter().enumerate() {
                            table.push_row(&[t, x, y, self.value(ti, ix, iy)]);
                        }
                    }
                    None => table.push_row(&[t, x, self.value(ti, ix, 0)]),
                }
            }
        }
        table
    }
}

pub(crate) fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    g[n - 1] = hi;
    g
}

pub(crate) fn nearest_index(grid: &[f64], v: f64) -> usize {
    let mut best = 0;
    let mut d = f64::INFINITY;
    for (i, &g) in grid.iter().enumerate() {
        let di = (g - v).abs();
        if di < d {
            d = di;
            best = i;
        }
    }
    best
}

/// Marks which backward step indices `0..=nt` get a stored slice: about
/// [`STORED_SLICES`] of them, evenly spread, always including both ends.
pub(crate) fn snapshot_mask(nt: usize) -> Vec<bool> {
    let mut mask = vec![false; nt + 1];
    let slices = STORED_SLICES.min(nt + 1).max(2);
    for j in 0..slices {
        let k = (j as f64 * nt as f64 / (slices - 1) as f64).round() as usize;
        mask[k.min(nt)] = true;
    }
    mask
}

pub(crate) fn fit_growth_constant(
    values: &[f64],
    x_grid: &[f64],
    y_grid: Option<&[f64]>,
    nodes_per_slice: usize,
) -> f64 {
    let ny = y_grid.map_or(1, |g| g.len());
    let mut k = 0.0f64;
    for (idx, v) in values.iter().enumerate() {
        let node = idx % nodes_per_slice;
        let x = x_grid[node / ny];
        let y = y_grid.map_or(0.0, |g| g[node % ny]);
        k = k.max(v.abs() / (1.0 + x * x + y * y));
    }
    k
}

pub(crate) fn check_box(lo: f64, hi: f64, n: usize, axis: &str) -> TsResult<()> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(TsError::invalid(format!("{axis} box [{lo}, {hi}] is not a proper interval")));
    }
    if n < 5 {
        return Err(TsError::invalid(format!("{axis} axis needs at least 5 nodes, got {n}")));
    }
    Ok(())
}
