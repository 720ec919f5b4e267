//! Per-arm subsidized planning: value iteration, bisection indices, the
//! precomputed index tables behind the index policies, and the
//! round-adaptive variants that replace this round's pull bonus with a
//! marginal gain conditioned on the arms already chosen.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArmModel, RmabgInstance};
use crate::reward::{MarginalTable, UEstimator};
use crate::rng::Stream;

/// Sup-norm tolerance for per-arm value iteration.
pub const VI_TOL: f64 = 1e-9;
/// Iteration cap for per-arm value iteration.
pub const VI_MAX_ITER: usize = 100_000;
/// Bracket width at which subsidy bisection stops.
pub const INDEX_TOL: f64 = 1e-4;
/// Hard cap on bisection steps; 64 halvings exhaust f64 precision.
pub const BISECT_MAX_STEPS: usize = 64;

/// Converged action values of one arm when every pull is charged a
/// subsidy `w` on top of the pull bonus.
#[derive(Debug, Clone)]
pub struct SubsidizedQ {
    /// `q[s][a]` for idle (`a = 0`) and pull (`a = 1`).
    pub q: Vec<[f64; 2]>,
    /// Subsidy charged per pull.
    pub w: f64,
}

impl SubsidizedQ {
    pub fn value(&self, s: usize) -> f64 {
        self.q[s][0].max(self.q[s][1])
    }
}

fn dot(p: &[f64], v: &[f64]) -> f64 {
    p.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidParameter {
            name: "gamma",
            message: format!("must lie in [0, 1), got {gamma}"),
        });
    }
    Ok(())
}

/// Solves one arm's MDP where pulling in state `s` earns
/// `per_arm_reward[s][1] + bonus[s] - w` and idling earns
/// `per_arm_reward[s][0]`. Sweeps until successive values change by at
/// most `tol` in sup norm, then reports the Q-values at the fixed point.
pub fn value_iteration_subsidized(
    arm: &ArmModel,
    bonus: &[f64],
    w: f64,
    gamma: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SubsidizedQ> {
    check_gamma(gamma)?;
    let sc = arm.transitions.len();
    if bonus.len() != sc {
        return Err(Error::Shape {
            context: "pull bonus vector",
            expected: sc,
            actual: bonus.len(),
        });
    }
    let mut v = vec![0.0; sc];
    let mut next = vec![0.0; sc];
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for _ in 0..max_iter {
        residual = 0.0;
        for s in 0..sc {
            let idle = arm.per_arm_reward[s][0] + gamma * dot(&arm.transitions[s][0], &v);
            let pull = arm.per_arm_reward[s][1] + bonus[s] - w
                + gamma * dot(&arm.transitions[s][1], &v);
            next[s] = idle.max(pull);
            residual = residual.max((next[s] - v[s]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        if residual <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            residual,
            iterations: max_iter,
        });
    }
    let q = (0..sc)
        .map(|s| {
            [
                arm.per_arm_reward[s][0] + gamma * dot(&arm.transitions[s][0], &v),
                arm.per_arm_reward[s][1] + bonus[s] - w
                    + gamma * dot(&arm.transitions[s][1], &v),
            ]
        })
        .collect();
    Ok(SubsidizedQ { q, w })
}

/// Q(s, pull) - Q(s, idle) under subsidy `w`, with this round's pull
/// bonus overridden by `root_bonus` while the continuation keeps
/// `bonus`. Decreasing in `w`; its zero is the index.
fn pull_advantage(
    arm: &ArmModel,
    bonus: &[f64],
    root_bonus: f64,
    state: usize,
    w: f64,
    gamma: f64,
) -> Result<f64> {
    let sq = value_iteration_subsidized(arm, bonus, w, gamma, VI_TOL, VI_MAX_ITER)?;
    Ok(sq.q[state][1] - bonus[state] + root_bonus - sq.q[state][0])
}

/// Subsidy that makes the arm indifferent between pulling and idling in
/// `state`: bisection on the pull advantage over a bracket wide enough
/// to contain any indifference point, stopping at width `tol_w` and
/// returning the midpoint. Endpoints that fail the sign test report the
/// arm as non-indexable instead of returning a bogus root.
pub fn whittle_index(
    arm: &ArmModel,
    bonus: &[f64],
    state: usize,
    gamma: f64,
    tol_w: f64,
) -> Result<f64> {
    whittle_index_with_root(arm, bonus, bonus[state], state, gamma, tol_w)
}

/// [`whittle_index`] with the first pull's bonus overridden by
/// `root_bonus`; later pulls keep `bonus`.
pub fn whittle_index_with_root(
    arm: &ArmModel,
    bonus: &[f64],
    root_bonus: f64,
    state: usize,
    gamma: f64,
    tol_w: f64,
) -> Result<f64> {
    check_gamma(gamma)?;
    if state >= arm.transitions.len() {
        return Err(Error::InvalidParameter {
            name: "state",
            message: format!(
                "index {state} out of range for {} states",
                arm.transitions.len()
            ),
        });
    }
    let max_r = arm
        .per_arm_reward
        .iter()
        .flatten()
        .fold(0.0f64, |m, &r| m.max(r.abs()));
    let max_b = bonus
        .iter()
        .fold(root_bonus.abs(), |m, &b| m.max(b.abs()));
    let bound = (max_r + max_b) / (1.0 - gamma) + 1.0;
    let mut lo = -bound;
    let mut hi = bound;
    let d_lo = pull_advantage(arm, bonus, root_bonus, state, lo, gamma)?;
    let d_hi = pull_advantage(arm, bonus, root_bonus, state, hi, gamma)?;
    if d_lo < 0.0 || d_hi > 0.0 {
        return Err(Error::NotIndexable { lo, hi, state });
    }
    for _ in 0..BISECT_MAX_STEPS {
        if hi - lo <= tol_w {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if pull_advantage(arm, bonus, root_bonus, state, mid, gamma)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Which pull bonus an index table was built with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexFlavor {
    /// Per-arm rewards only, no share of the global reward.
    Vanilla,
    /// Optimistic lone-pull marginal of the global reward.
    Linear,
    /// Worst-case-completion random-coalition marginal.
    Shapley,
}

impl IndexFlavor {
    pub const ALL: [IndexFlavor; 3] =
        [IndexFlavor::Vanilla, IndexFlavor::Linear, IndexFlavor::Shapley];

    pub fn as_str(self) -> &'static str {
        match self {
            IndexFlavor::Vanilla => "vanilla",
            IndexFlavor::Linear => "linear",
            IndexFlavor::Shapley => "shapley",
        }
    }
}

/// Index of every (arm, state) pair under one bonus flavor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexTable {
    pub flavor: IndexFlavor,
    /// `w[i][s]` is the index of arm `i` in state `s`.
    pub w: Vec<Vec<f64>>,
    /// Standard errors of the sampled pull bonuses (already carrying the
    /// global-reward weight) when they were estimated rather than
    /// enumerated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_stderr: Option<Vec<Vec<f64>>>,
}

impl IndexTable {
    pub fn to_json(&self) -> String {
        let mut text =
            serde_json::to_string_pretty(self).expect("index table serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Clone of `arm` with its rewards scaled by the standalone weight, so
/// per-arm planning prices its share of the combined objective.
pub fn weighted_arm(arm: &ArmModel, alpha: f64) -> ArmModel {
    ArmModel {
        transitions: arm.transitions.clone(),
        per_arm_reward: arm
            .per_arm_reward
            .iter()
            .map(|row| row.iter().map(|&r| alpha * r).collect())
            .collect(),
    }
}

fn index_table(
    inst: &RmabgInstance,
    flavor: IndexFlavor,
    bonuses: &[Vec<f64>],
    u_stderr: Option<Vec<Vec<f64>>>,
) -> Result<IndexTable> {
    let weighted: Vec<ArmModel> = inst
        .arms
        .iter()
        .map(|arm| weighted_arm(arm, inst.alpha))
        .collect();
    let w = weighted
        .par_iter()
        .zip(bonuses.par_iter())
        .map(|(arm, bonus)| {
            (0..inst.state_count)
                .map(|s| whittle_index(arm, bonus, s, inst.gamma, INDEX_TOL))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IndexTable {
        flavor,
        w,
        u_stderr,
    })
}

/// Index table from per-arm rewards alone; the global reward contributes
/// no pull bonus.
pub fn vanilla_whittle_table(inst: &RmabgInstance) -> Result<IndexTable> {
    let zeros = vec![vec![0.0; inst.state_count]; inst.n_arms];
    index_table(inst, IndexFlavor::Vanilla, &zeros, None)
}

/// Index table whose pull bonus is the weighted optimistic lone-pull
/// marginal of the global reward.
pub fn linear_whittle_table(inst: &RmabgInstance) -> Result<IndexTable> {
    let scale = 1.0 - inst.alpha;
    let mut bonuses = vec![vec![0.0; inst.state_count]; inst.n_arms];
    for (i, row) in bonuses.iter_mut().enumerate() {
        for (s, b) in row.iter_mut().enumerate() {
            *b = scale
                * inst
                    .global_reward
                    .marginal_reward(i, s, inst.n_arms, inst.state_count)?;
        }
    }
    index_table(inst, IndexFlavor::Linear, &bonuses, None)
}

/// Builds the Shapley-flavor index table from marginals that were
/// already computed, so callers needing both artifacts estimate the
/// coalition values once.
pub fn shapley_whittle_table_from(
    inst: &RmabgInstance,
    table: &MarginalTable,
) -> Result<IndexTable> {
    let scale = 1.0 - inst.alpha;
    let bonuses: Vec<Vec<f64>> = table
        .u
        .iter()
        .map(|row| row.iter().map(|&u| scale * u).collect())
        .collect();
    let u_stderr = table.u_stderr.as_ref().map(|rows| {
        rows.iter()
            .map(|row| row.iter().map(|&c| scale * c).collect())
            .collect()
    });
    index_table(inst, IndexFlavor::Shapley, &bonuses, u_stderr)
}

/// Index table whose pull bonus is the weighted random-coalition
/// marginal, estimated with `n_samples` draws per (arm, state).
pub fn shapley_whittle_table(
    inst: &RmabgInstance,
    n_samples: usize,
    seed: u64,
) -> Result<IndexTable> {
    let table = MarginalTable::compute(inst, UEstimator::MonteCarlo { n_samples, seed })?;
    shapley_whittle_table_from(inst, &table)
}

/// [`shapley_whittle_table`] with the coalition distribution enumerated
/// instead of sampled. Exponential in the budget; test-sized instances
/// only.
pub fn shapley_whittle_table_exact(inst: &RmabgInstance) -> Result<IndexTable> {
    let table = MarginalTable::compute(inst, UEstimator::Exact)?;
    shapley_whittle_table_from(inst, &table)
}

/// Bonus flavor for the round-adaptive indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterativeFlavor {
    Linear,
    Shapley,
}

/// Realized marginal gain of adding arm `i` to the pulls `chosen`, with
/// every arm at its actual state this round.
pub fn root_gain_linear(
    inst: &RmabgInstance,
    i: usize,
    state: &[usize],
    chosen: &[usize],
) -> Result<f64> {
    let mut base = vec![0u8; inst.n_arms];
    for &j in chosen {
        base[j] = 1;
    }
    let mut with_i = base.clone();
    with_i[i] = 1;
    Ok(inst.global_reward.evaluate(state, &with_i)?
        - inst.global_reward.evaluate(state, &base)?)
}

/// Round-adaptive index of arm `i`: the continuation keeps the
/// unconditioned bonus profile (`continuation[s]`, unweighted), while
/// this round's pull pays `root_gain` (unweighted) conditioned on the
/// arms already chosen. Both are scaled by the global-reward weight
/// before pricing.
pub fn iterative_index_with_bonus(
    inst: &RmabgInstance,
    i: usize,
    s_i: usize,
    continuation: &[f64],
    root_gain: f64,
) -> Result<f64> {
    let scale = 1.0 - inst.alpha;
    let arm = weighted_arm(&inst.arms[i], inst.alpha);
    let bonus: Vec<f64> = continuation.iter().map(|&b| scale * b).collect();
    whittle_index_with_root(
        &arm,
        &bonus,
        scale * root_gain,
        s_i,
        inst.gamma,
        INDEX_TOL,
    )
}

/// Self-contained round-adaptive index: recomputes the continuation
/// bonus profile and the conditioned root gain for arm `i` at the joint
/// state `state`, given the pulls `chosen` committed earlier this round.
/// Shapley bonuses are Monte Carlo estimates with `n_samples` draws
/// each; use [`iterative_index_exact`] when enumeration is affordable.
pub fn iterative_index(
    inst: &RmabgInstance,
    i: usize,
    state: &[usize],
    chosen: &[usize],
    flavor: IterativeFlavor,
    n_samples: usize,
    rng: &mut Stream,
) -> Result<f64> {
    let (n, sc) = (inst.n_arms, inst.state_count);
    let spec = &inst.global_reward;
    let (continuation, root_gain) = match flavor {
        IterativeFlavor::Linear => {
            let cont = (0..sc)
                .map(|s| spec.marginal_reward(i, s, n, sc))
                .collect::<Result<Vec<f64>>>()?;
            (cont, root_gain_linear(inst, i, state, chosen)?)
        }
        IterativeFlavor::Shapley => {
            let mut cont = Vec::with_capacity(sc);
            for s in 0..sc {
                cont.push(spec.shapley_mc(i, s, n, sc, inst.budget, n_samples, rng)?.0);
            }
            let (gain, _) = spec.shapley_mc_given(
                i, state[i], n, sc, inst.budget, chosen, n_samples, rng,
            )?;
            (cont, gain)
        }
    };
    iterative_index_with_bonus(inst, i, state[i], &continuation, root_gain)
}

/// [`iterative_index`] with every coalition distribution enumerated.
pub fn iterative_index_exact(
    inst: &RmabgInstance,
    i: usize,
    state: &[usize],
    chosen: &[usize],
    flavor: IterativeFlavor,
) -> Result<f64> {
    let (n, sc) = (inst.n_arms, inst.state_count);
    let spec = &inst.global_reward;
    let (continuation, root_gain) = match flavor {
        IterativeFlavor::Linear => {
            let cont = (0..sc)
                .map(|s| spec.marginal_reward(i, s, n, sc))
                .collect::<Result<Vec<f64>>>()?;
            (cont, root_gain_linear(inst, i, state, chosen)?)
        }
        IterativeFlavor::Shapley => {
            let cont = (0..sc)
                .map(|s| spec.shapley_exact(i, s, n, sc, inst.budget))
                .collect::<Result<Vec<f64>>>()?;
            let gain =
                spec.shapley_exact_given(i, state[i], n, sc, inst.budget, chosen)?;
            (cont, gain)
        }
    };
    iterative_index_with_bonus(inst, i, state[i], &continuation, root_gain)
}
