//! Monte Carlo evaluation of the discounted payoff and the policy-family
//! lower bound.

use super::{integral_steps, ControlPolicy, CoupledStepper};
use crate::error::{TsError, TsResult};
use crate::model::TwoScaleModel;
use crate::quad::mean_and_se;
use crate::rng::PathStream;
use rayon::prelude::*;

/// Sample mean and standard error of the payoff under one policy.
#[derive(Clone, Copy, Debug)]
pub struct PayoffEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub n_paths: u64,
}

/// Result of maximizing the payoff over a finite policy family on common
/// random numbers.
#[derive(Clone, Debug)]
pub struct PolicyComparison {
    pub best_value: f64,
    pub best_policy_index: usize,
    pub per_policy: Vec<PayoffEstimate>,
}

/// Monte Carlo mean of the discounted payoff started at `(t, x0, y0)`.
///
/// The terminal reward is weighted by `exp(lambda (t - T))` and the running
/// reward at time `s` by `exp(lambda (s - T))` — both anchored at the
/// horizon — with the running integral taken by left-endpoint quadrature on
/// the path grid.
pub fn estimate_payoff(
    model: &TwoScaleModel,
    policy: &ControlPolicy,
    t: f64,
    x0: &[f64],
    y0: &[f64],
    dt: f64,
    n_paths: u64,
    seed: u64,
) -> TsResult<PayoffEstimate> {
    let values = payoff_samples(model, policy, t, x0, y0, dt, n_paths, seed)?;
    let (mean, standard_error) = mean_and_se(&values);
    Ok(PayoffEstimate { mean, standard_error, n_paths })
}

/// Best payoff over a policy family, every policy evaluated on identical
/// noise streams (common random numbers).  Ties resolve to the smallest
/// index.
pub fn mc_value_lower_bound(
    model: &TwoScaleModel,
    policy_family: &[ControlPolicy],
    t: f64,
    x0: &[f64],
    y0: &[f64],
    dt: f64,
    n_paths: u64,
    seed: u64,
) -> TsResult<PolicyComparison> {
    if policy_family.is_empty() {
        return Err(TsError::invalid("policy family must be nonempty"));
    }
    let mut per_policy = Vec::with_capacity(policy_family.len());
    for policy in policy_family {
        per_policy.push(estimate_payoff(model, policy, t, x0, y0, dt, n_paths, seed)?);
    }
    let mut best_policy_index = 0;
    for (i, est) in per_policy.iter().enumerate() {
        if est.mean > per_policy[best_policy_index].mean {
            best_policy_index = i;
        }
    }
    Ok(PolicyComparison {
        best_value: per_policy[best_policy_index].mean,
        best_policy_index,
        per_policy,
    })
}

/// One payoff value per path, in path order.
fn payoff_samples(
    model: &TwoScaleModel,
    policy: &ControlPolicy,
    t: f64,
    x0: &[f64],
    y0: &[f64],
    dt: f64,
    n_paths: u64,
    seed: u64,
) -> TsResult<Vec<f64>> {
    if x0.len() != model.slow_dim() || y0.len() != model.fast_dim() {
        return Err(TsError::invalid("initial state dimensions do not match the model"));
    }
    if n_paths == 0 {
        return Err(TsError::invalid("need at least one path"));
    }
    let horizon = model.horizon();
    if !(0.0..horizon).contains(&t) {
        return Err(TsError::invalid(format!(
            "start time {t} must lie in [0, {horizon})"
        )));
    }
    super::check_stiffness(dt, model.epsilon())?;
    let steps = integral_steps(horizon - t, dt)?;
    let lambda = model.lambda();

    // Discount weights, shared across paths.
    let weights: Vec<f64> = (0..steps)
        .map(|k| (lambda * (t + k as f64 * dt - horizon)).exp())
        .collect();
    let terminal_weight = (lambda * (t - horizon)).exp();

    (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let stream = PathStream::new(seed, p);
            let mut stepper = CoupledStepper::new(model, dt);
            let mut x = x0.to_vec();
            let mut y = y0.to_vec();
            let mut u = vec![0.0; model.controls().dim()];
            let mut running = 0.0;
            for k in 0..steps {
                let s = t + k as f64 * dt;
                policy.eval(s, &x, &y, &mut u);
                model.controls().clamp(&mut u);
                running += weights[k] * model.eval_ell(s, &x, &y, &u) * dt;
                stepper.step(s, &mut x, &mut y, &u, &stream, k as u64)?;
            }
            Ok(terminal_weight * model.eval_g(&x, &y) + running)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn constant_model(g: f64, lambda: f64, horizon: f64) -> TwoScaleModel {
        TwoScaleModel::builder(1, 1, 1)
            .terminal_reward(Arc::new(move |_x, _y| g))
            .lambda(lambda)
            .horizon(horizon)
            .build()
            .unwrap()
    }

    #[test]
    fn constant_terminal_is_exact() {
        let model = constant_model(3.5, 0.0, 1.0);
        let est = estimate_payoff(
            &model,
            &ControlPolicy::constant(&[0.0]),
            0.0,
            &[0.0],
            &[0.0],
            0.05,
            64,
            1,
        )
        .unwrap();
        assert_eq!(est.mean, 3.5);
        assert_eq!(est.standard_error, 0.0);
    }

    #[test]
    fn discount_factor_is_deterministic() {
        let model = constant_model(2.0, 0.7, 1.0);
        let est = estimate_payoff(
            &model,
            &ControlPolicy::constant(&[0.0]),
            0.25,
            &[0.0],
            &[0.0],
            0.025,
            64,
            1,
        )
        .unwrap();
        assert_eq!(est.mean, 2.0 * (0.7_f64 * (0.25 - 1.0)).exp());
        assert_eq!(est.standard_error, 0.0);
    }

    #[test]
    fn unit_running_reward_integrates_to_span() {
        let model = TwoScaleModel::builder(1, 1, 1)
            .running_reward(Arc::new(|_t, _x, _y, _u| 1.0))
            .horizon(1.0)
            .build()
            .unwrap();
        let est = estimate_payoff(
            &model,
            &ControlPolicy::constant(&[0.0]),
            0.25,
            &[0.0],
            &[0.0],
            0.0125,
            8,
            1,
        )
        .unwrap();
        assert!((est.mean - 0.75).abs() < 1e-12);
    }

    #[test]
    fn terminal_scaling_is_exact_on_fixed_noise() {
        // Doubling g doubles the g-term bit-exactly (same noise, and
        // multiplication by two is exact).
        let base = TwoScaleModel::builder(1, 1, 1)
            .fast_diffusion(Arc::new(|_x, _y, out| out[0] = 1.0))
            .terminal_reward(Arc::new(|_x, y| y[0]))
            .horizon(0.5)
            .build()
            .unwrap();
        let doubled = base.with_terminal(Arc::new(|_x, y: &[f64]| 2.0 * y[0]));
        let policy = ControlPolicy::constant(&[0.0]);
        let a = estimate_payoff(&base, &policy, 0.0, &[0.0], &[0.3], 0.01, 256, 9).unwrap();
        let b = estimate_payoff(&doubled, &policy, 0.0, &[0.0], &[0.3], 0.01, 256, 9).unwrap();
        assert_eq!(b.mean, 2.0 * a.mean);
    }

    #[test]
    fn lower_bound_picks_dominant_policy() {
        // f = -u x with ell = -x^2 from x0 = 1: playing u = 1 contracts the
        // state and strictly improves the (negative) running reward.
        let model = TwoScaleModel::builder(1, 1, 1)
            .slow_drift(Arc::new(|x, _y, u, out| out[0] = -u[0] * x[0]))
            .running_reward(Arc::new(|_t, x, _y, _u| -x[0] * x[0]))
            .controls(crate::model::ControlSet::grid_1d(0.0, 1.0, 2).unwrap())
            .horizon(1.0)
            .build()
            .unwrap();
        let family = [
            ControlPolicy::constant(&[0.0]),
            ControlPolicy::constant(&[1.0]),
        ];
        let cmp =
            mc_value_lower_bound(&model, &family, 0.0, &[1.0], &[0.0], 0.01, 4, 3).unwrap();
        assert_eq!(cmp.best_policy_index, 1);
        assert!(cmp.per_policy[1].mean > cmp.per_policy[0].mean);
    }

    #[test]
    fn duplicated_policies_agree_bitwise() {
        let model = TwoScaleModel::builder(1, 1, 1)
            .fast_diffusion(Arc::new(|_x, _y, out| out[0] = 1.0))
            .terminal_reward(Arc::new(|_x, y| y[0] * y[0]))
            .horizon(0.25)
            .build()
            .unwrap();
        let family = [
            ControlPolicy::constant(&[0.0]),
            ControlPolicy::constant(&[0.0]),
        ];
        let cmp =
            mc_value_lower_bound(&model, &family, 0.0, &[0.0], &[1.0], 0.005, 128, 17).unwrap();
        assert_eq!(cmp.per_policy[0].mean.to_bits(), cmp.per_policy[1].mean.to_bits());
        assert_eq!(cmp.best_policy_index, 0);
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let model = constant_model(1.0, 0.0, 1.0);
        let policy = ControlPolicy::constant(&[0.0]);
        assert!(estimate_payoff(&model, &policy, 0.0, &[0.0], &[0.0], 0.05, 0, 1).is_err());
        assert!(estimate_payoff(&model, &policy, 1.0, &[0.0], &[0.0], 0.05, 8, 1).is_err());
        assert!(mc_value_lower_bound(&model, &[], 0.0, &[0.0], &[0.0], 0.05, 8, 1).is_err());
    }
}
