//! Deterministic quadrature of Gibbs expectations `E[h]` under the density
//! proportional to `exp(-beta Phi)`.
//!
//! This is the analytic reference for the stochastic invariant-measure
//! sampler whenever the fast drift is `-grad Phi` and the fast diffusion is
//! `beta^{-1/2} I`.  The quadrature box is auto-sized: starting from the
//! potential minimum, it doubles until the boundary density is negligible
//! and the normalizing mass is stable under further enlargement.

use crate::error::{TsError, TsResult};
use crate::quad::gauss_legendre_on;
use std::sync::Arc;

pub type PotentialFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Scalar potential with its gradient.
#[derive(Clone)]
pub struct Potential {
    pub dim: usize,
    pub value: PotentialFn,
    pub gradient: GradientFn,
}

impl Potential {
    pub fn new(dim: usize, value: PotentialFn, gradient: GradientFn) -> Potential {
        Potential { dim, value, gradient }
    }

    /// 1D convenience constructor with a central-difference gradient.
    pub fn scalar(value: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Potential {
        let value = Arc::new(value);
        let v = value.clone();
        Potential {
            dim: 1,
            value: Arc::new(move |y| value(y[0])),
            gradient: Arc::new(move |y, out| {
                let h = 1e-6 * (1.0 + y[0].abs());
                out[0] = (v(y[0] + h) - v(y[0] - h)) / (2.0 * h);
            }),
        }
    }

    fn eval(&self, y: &[f64]) -> f64 {
        (self.value)(y)
    }
}

/// What to ask of the Gibbs measure.
pub enum GibbsQuery<'a> {
    /// `E[y_c]`.
    Mean(usize),
    /// `Var[y_c]`.
    Variance(usize),
    /// `E[h(y)]` for an arbitrary integrand.
    Expectation(&'a (dyn Fn(&[f64]) -> f64 + Sync)),
}

/// Gibbs expectation by tensor Gauss-Legendre quadrature (`dim <= 2`,
/// default 257 nodes per axis).
///
/// Rejects potentials that fail to confine on any box the auto-sizing is
/// willing to try.
pub fn gibbs_oracle(potential: &Potential, beta: f64, query: GibbsQuery) -> TsResult<f64> {
    gibbs_oracle_nodes(potential, beta, query, 257)
}

pub fn gibbs_oracle_nodes(
    potential: &Potential,
    beta: f64,
    query: GibbsQuery,
    nodes_per_axis: usize,
) -> TsResult<f64> {
    if !(beta > 0.0) {
        return Err(TsError::invalid("inverse temperature must be positive"));
    }
    if potential.dim == 0 || potential.dim > 2 {
        return Err(TsError::invalid("quadrature supports 1 or 2 fast dimensions"));
    }
    if nodes_per_axis < 9 {
        return Err(TsError::invalid("need at least 9 quadrature nodes per axis"));
    }
    let center = minimize_potential(potential);
    let phi_min = potential.eval(&center);
    if !phi_min.is_finite() {
        return Err(TsError::constraint("confinement", "potential is not finite at its minimum"));
    }

    // Grow a symmetric box around the minimum until the potential rises by
    // at least 36/beta toward every face (boundary density ~ 2e-16 of the
    // peak), then shrink back toward the smallest such box so the node
    // budget is not wasted on empty tails, and finally confirm the
    // normalizing mass is stable under a 1.5x enlargement.
    let rise_needed = 36.0 / beta;
    let mut half_width = 1.0;
    let mut found = false;
    for _ in 0..60 {
        if confines(potential, &center, half_width, phi_min, rise_needed) {
            found = true;
            break;
        }
        half_width *= 2.0;
    }
    if !found {
        return Err(TsError::constraint(
            "confinement",
            "potential does not confine the Gibbs density on any probed box",
        ));
    }
    let mut lo = half_width / 2.0;
    let mut hi = half_width;
    for _ in 0..24 {
        let mid = 0.5 * (lo + hi);
        if confines(potential, &center, mid, phi_min, rise_needed) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let candidate = 1.25 * hi;
    let half_width = if confines(potential, &center, candidate, phi_min, rise_needed) {
        candidate
    } else {
        half_width
    };
    let mass = normalizing_mass(potential, beta, &center, half_width, phi_min, nodes_per_axis);
    let bigger = normalizing_mass(potential, beta, &center, 1.5 * half_width, phi_min, nodes_per_axis);
    if !((bigger - mass).abs() <= 1e-10 * bigger.abs()) {
        return Err(TsError::constraint(
            "confinement",
            "Gibbs mass keeps growing when the quadrature box is enlarged",
        ));
    }

    let eval = |h: &dyn Fn(&[f64]) -> f64| -> f64 {
        weighted_integral(potential, beta, &center, half_width, phi_min, nodes_per_axis, h)
    };
    let mass = eval(&|_y| 1.0);
    let answer = match query {
        GibbsQuery::Mean(c) => {
            check_coord(c, potential.dim)?;
            eval(&|y| y[c]) / mass
        }
        GibbsQuery::Variance(c) => {
            check_coord(c, potential.dim)?;
            let mean = eval(&|y| y[c]) / mass;
            eval(&|y| (y[c] - mean) * (y[c] - mean)) / mass
        }
        GibbsQuery::Expectation(h) => eval(&|y| h(y)) / mass,
    };
    Ok(answer)
}

fn check_coord(c: usize, dim: usize) -> TsResult<()> {
    if c >= dim {
        return Err(TsError::invalid(format!("coordinate {c} out of range for dimension {dim}")));
    }
    Ok(())
}

/// Gradient descent with backtracking; the potentials in scope are smooth
/// and confining, so modest iteration counts reach the basin bottom.
fn minimize_potential(potential: &Potential) -> Vec<f64> {
    let dim = potential.dim;
    let mut y = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut step = 0.5;
    let mut best = potential.eval(&y);
    for _ in 0..400 {
        (potential.gradient)(&y, &mut grad);
        let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < 1e-12 {
            break;
        }
        let trial: Vec<f64> = y.iter().zip(&grad).map(|(&v, &g)| v - step * g).collect();
        let val = potential.eval(&trial);
        if val < best {
            y = trial;
            best = val;
            step *= 1.2;
        } else {
            step *= 0.5;
            if step < 1e-14 {
                break;
            }
        }
    }
    y
}

fn confines(
    potential: &Potential,
    center: &[f64],
    half_width: f64,
    phi_min: f64,
    rise_needed: f64,
) -> bool {
    let dim = potential.dim;
    let mut probe = center.to_vec();
    for d in 0..dim {
        for sign in [-1.0, 1.0] {
            probe.copy_from_slice(center);
            probe[d] = center[d] + sign * half_width;
            if potential.eval(&probe) - phi_min < rise_needed {
                return false;
            }
        }
    }
    if dim == 2 {
        // Corners too: a saddle can hide along the diagonal.
        for sx in [-1.0, 1.0] {
            for sy in [-1.0, 1.0] {
                probe[0] = center[0] + sx * half_width;
                probe[1] = center[1] + sy * half_width;
                if potential.eval(&probe) - phi_min < rise_needed {
                    return false;
                }
            }
        }
    }
    true
}

fn normalizing_mass(
    potential: &Potential,
    beta: f64,
    center: &[f64],
    half_width: f64,
    phi_min: f64,
    nodes: usize,
) -> f64 {
    weighted_integral(potential, beta, center, half_width, phi_min, nodes, &|_y| 1.0)
}

/// `int h(y) exp(-beta (Phi(y) - Phi_min)) dy` over the box, tensor
/// Gauss-Legendre.
fn weighted_integral(
    potential: &Potential,
    beta: f64,
    center: &[f64],
    half_width: f64,
    phi_min: f64,
    nodes: usize,
    h: &dyn Fn(&[f64]) -> f64,
) -> f64 {
    match potential.dim {
        1 => {
            let (pts, wts) = gauss_legendre_on(nodes, center[0] - half_width, center[0] + half_width);
            let mut acc = 0.0;
            let mut y = [0.0];
            for (p, w) in pts.iter().zip(&wts) {
                y[0] = *p;
                acc += w * h(&y) * (-beta * (potential.eval(&y) - phi_min)).exp();
            }
            acc
        }
        2 => {
            let (px, wx) = gauss_legendre_on(nodes, center[0] - half_width, center[0] + half_width);
            let (py, wy) = gauss_legendre_on(nodes, center[1] - half_width, center[1] + half_width);
            let mut acc = 0.0;
            let mut y = [0.0, 0.0];
            for (p0, w0) in px.iter().zip(&wx) {
                y[0] = *p0;
                let mut inner = 0.0;
                for (p1, w1) in py.iter().zip(&wy) {
                    y[1] = *p1;
                    inner += w1 * h(&y) * (-beta * (potential.eval(&y) - phi_min)).exp();
                }
                acc += w0 * inner;
            }
            acc
        }
        _ => unreachable!("dimension checked by caller"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn standard_gaussian_moments() {
        let p = Potential::scalar(|y| 0.5 * y * y);
        let mean = gibbs_oracle(&p, 1.0, GibbsQuery::Mean(0)).unwrap();
        let var = gibbs_oracle(&p, 1.0, GibbsQuery::Variance(0)).unwrap();
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(var, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_shift_is_invisible() {
        let p = Potential::scalar(|y| 0.5 * y * y);
        let q = Potential::scalar(|y| 0.5 * y * y + 17.0);
        let a = gibbs_oracle(&p, 1.0, GibbsQuery::Variance(0)).unwrap();
        let b = gibbs_oracle(&q, 1.0, GibbsQuery::Variance(0)).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-13);
    }

    #[test]
    fn lq_potential_moments() {
        // Phi(y) = q y^2/2 + (x - y)^2 / (2 gamma) with q=1, gamma=0.5,
        // x=1, beta=1: mean 2/3, variance 1/3.
        let (q, gamma, x) = (1.0, 0.5, 1.0);
        let p = Potential::scalar(move |y| 0.5 * q * y * y + (x - y) * (x - y) / (2.0 * gamma));
        let mean = gibbs_oracle(&p, 1.0, GibbsQuery::Mean(0)).unwrap();
        let var = gibbs_oracle(&p, 1.0, GibbsQuery::Variance(0)).unwrap();
        assert_abs_diff_eq!(mean, 2.0 / 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(var, 1.0 / 3.0, epsilon = 1e-10);
    }

    #[test]
    fn expectation_of_supplied_function() {
        let p = Potential::scalar(|y| 0.5 * y * y);
        let second = gibbs_oracle(&p, 1.0, GibbsQuery::Expectation(&|y: &[f64]| y[0] * y[0]))
            .unwrap();
        assert_abs_diff_eq!(second, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn two_dimensional_product_measure() {
        let p = Potential::new(
            2,
            Arc::new(|y: &[f64]| 0.5 * (y[0] * y[0] + 4.0 * y[1] * y[1])),
            Arc::new(|y: &[f64], out: &mut [f64]| {
                out[0] = y[0];
                out[1] = 4.0 * y[1];
            }),
        );
        let v0 = gibbs_oracle_nodes(&p, 1.0, GibbsQuery::Variance(0), 129).unwrap();
        let v1 = gibbs_oracle_nodes(&p, 1.0, GibbsQuery::Variance(1), 129).unwrap();
        assert_abs_diff_eq!(v0, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v1, 0.25, epsilon = 1e-9);
    }

    #[test]
    fn non_confining_potential_rejected() {
        let p = Potential::scalar(|y| -(y * y));
        let err = gibbs_oracle(&p, 1.0, GibbsQuery::Mean(0));
        assert!(err.is_err());
    }

    #[test]
    fn double_well_mean_is_symmetric() {
        let p = Potential::scalar(|y| 0.25 * (y * y - 1.0) * (y * y - 1.0));
        let mean = gibbs_oracle(&p, 2.0, GibbsQuery::Mean(0)).unwrap();
        // The minimizer lands in one well, but the box grows to cover both;
        // symmetry forces a zero mean.
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-8);
    }
}
