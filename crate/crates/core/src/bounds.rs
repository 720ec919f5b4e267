//! Computable performance-bound quantities for the index policies:
//! floors from the linearized-reward ratio and ceilings from the
//! linearized argmax, all by enumeration on small instances.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{enumerate_feasible_actions, ActionVector, RmabgInstance, StateVector};
use crate::policy::top_k_arms;

/// Enumeration over joint states caps the arm count here.
pub const BOUND_ARM_LIMIT: usize = 10;

fn check_enumerable(inst: &RmabgInstance) -> Result<()> {
    if inst.n_arms > BOUND_ARM_LIMIT {
        return Err(Error::TooManyArms {
            n: inst.n_arms,
            limit: BOUND_ARM_LIMIT,
        });
    }
    Ok(())
}

fn check_rows(inst: &RmabgInstance, rows: &[Vec<f64>], context: &'static str) -> Result<()> {
    if rows.len() != inst.n_arms {
        return Err(Error::Shape {
            context,
            expected: inst.n_arms,
            actual: rows.len(),
        });
    }
    for row in rows {
        if row.len() != inst.state_count {
            return Err(Error::Shape {
                context,
                expected: inst.state_count,
                actual: row.len(),
            });
        }
    }
    Ok(())
}

/// Optimistic lone-pull marginals `p[i][s]`, the per-arm linearization
/// the floor and ceiling bounds are stated against.
pub fn exact_marginal_rows(inst: &RmabgInstance) -> Result<Vec<Vec<f64>>> {
    (0..inst.n_arms)
        .map(|i| {
            (0..inst.state_count)
                .map(|s| {
                    inst.global_reward
                        .marginal_reward(i, s, inst.n_arms, inst.state_count)
                })
                .collect()
        })
        .collect()
}

/// Combined-reward decomposition the index policies plan on: per-arm
/// rewards at their weight plus the weighted per-arm surrogate for
/// every pulled arm.
fn surrogate_sum(inst: &RmabgInstance, rows: &[Vec<f64>], s: &StateVector, a: &ActionVector) -> f64 {
    (0..inst.n_arms)
        .map(|i| {
            inst.alpha * inst.arms[i].reward(s.0[i], a.0[i] as usize)
                + (1.0 - inst.alpha) * rows[i][s.0[i]] * f64::from(a.0[i])
        })
        .sum()
}

/// Smallest and largest reward-to-surrogate ratio over every (state,
/// feasible action) pair. Pairs with a zero surrogate are skipped when
/// the reward is also zero; otherwise they saturate the maximum.
fn ratio_extremes(inst: &RmabgInstance, rows: &[Vec<f64>]) -> Result<(f64, f64)> {
    let actions = enumerate_feasible_actions(inst.n_arms, inst.budget)?;
    let (lo, hi) = inst
        .enumerate_states()
        .par_iter()
        .map(|s| -> Result<(f64, f64)> {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for a in &actions {
                let num = inst.total_reward(s, a)?;
                let den = surrogate_sum(inst, rows, s, a);
                if den == 0.0 {
                    if num != 0.0 {
                        hi = f64::INFINITY;
                    }
                    continue;
                }
                let ratio = num / den;
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
            Ok((lo, hi))
        })
        .try_reduce(
            || (f64::INFINITY, f64::NEG_INFINITY),
            |a, b| Ok((a.0.min(b.0), a.1.max(b.1))),
        )?;
    if lo.is_infinite() {
        return Err(Error::EmptyInput(
            "every feasible (state, action) pair has a zero surrogate denominator",
        ));
    }
    Ok((lo, hi))
}

/// Worst-case ratio of the combined reward to its optimistic
/// linearization; the index policy's asymptotic floor relative to
/// optimal.
pub fn beta_linear(inst: &RmabgInstance) -> Result<f64> {
    check_enumerable(inst)?;
    let rows = exact_marginal_rows(inst)?;
    Ok(ratio_extremes(inst, &rows)?.0)
}

/// Floor for the coalition-value index policy: the spread between the
/// worst and best reward-to-surrogate ratios under the exact per-arm
/// coalition values `u[i][s]`.
pub fn beta_shapley(inst: &RmabgInstance, exact_u: &[Vec<f64>]) -> Result<f64> {
    check_enumerable(inst)?;
    check_rows(inst, exact_u, "coalition value rows")?;
    let (lo, hi) = ratio_extremes(inst, exact_u)?;
    if hi.is_infinite() {
        return Ok(0.0);
    }
    Ok(lo / hi)
}

/// Per-state reward ratio of the linearized argmax against the true
/// best action, minimized over states.
fn linearized_argmax_ratio(inst: &RmabgInstance, rows: &[Vec<f64>]) -> Result<f64> {
    let actions = enumerate_feasible_actions(inst.n_arms, inst.budget)?;
    let worst = inst
        .enumerate_states()
        .par_iter()
        .map(|s| -> Result<f64> {
            let gains: Vec<f64> = (0..inst.n_arms)
                .map(|i| {
                    let arm = &inst.arms[i];
                    inst.alpha * (arm.reward(s.0[i], 1) - arm.reward(s.0[i], 0))
                        + (1.0 - inst.alpha) * rows[i][s.0[i]]
                })
                .collect();
            let picked = ActionVector::from_pulls(
                inst.n_arms,
                &top_k_arms(&gains, inst.budget, false),
            );
            let num = inst.total_reward(s, &picked)?;
            let mut den = f64::NEG_INFINITY;
            for a in &actions {
                den = den.max(inst.total_reward(s, a)?);
            }
            if den == 0.0 {
                return Ok(f64::INFINITY);
            }
            Ok(num / den)
        })
        .try_reduce(|| f64::INFINITY, |a, b| Ok(a.min(b)))?;
    if worst.is_infinite() {
        return Err(Error::EmptyInput(
            "the best feasible action earns zero reward in every state",
        ));
    }
    Ok(worst)
}

/// Ceiling for the optimistic-linearization policy: how much reward the
/// linearized argmax can leave on the table in the worst state.
pub fn theta_linear(inst: &RmabgInstance) -> Result<f64> {
    check_enumerable(inst)?;
    let rows = exact_marginal_rows(inst)?;
    linearized_argmax_ratio(inst, &rows)
}

/// Ceiling for the coalition-value policy, with `u[i][s]` in place of
/// the optimistic marginals.
pub fn theta_shapley(inst: &RmabgInstance, exact_u: &[Vec<f64>]) -> Result<f64> {
    check_enumerable(inst)?;
    check_rows(inst, exact_u, "coalition value rows")?;
    linearized_argmax_ratio(inst, exact_u)
}
