//! The policy zoo behind one prepared-policy interface: index rules,
//! round-adaptive rules, tree searches, the uniform and greedy
//! baselines, and the exact joint solvers used as references.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as index_sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcts::{mcts_policy_search, prepare_mcts_context, vanilla_mcts, MctsContext};
use crate::model::{
    enumerate_feasible_actions, ActionVector, RmabgInstance, StateVector,
};
use crate::reward::{MarginalTable, UEstimator};
use crate::rng::Stream;
use crate::whittle::{
    iterative_index_with_bonus, linear_whittle_table, shapley_whittle_table,
    vanilla_whittle_table, IndexTable, IterativeFlavor,
};

/// Default gate for the exact joint solver.
pub const OPTIMAL_DEFAULT_MAX_ARMS: usize = 4;
/// Hard ceiling for the exact joint solver, regardless of configuration.
pub const OPTIMAL_HARD_MAX_ARMS: usize = 12;
/// Largest joint state space the exact solvers will enumerate.
pub const JOINT_STATE_LIMIT: usize = 4096;
/// Largest (state, action) table the exact solvers will sweep.
pub const JOINT_TABLE_LIMIT: usize = 1 << 26;
/// Sup-norm tolerance for joint value iteration and policy evaluation.
pub const JOINT_VI_TOL: f64 = 1e-9;
const JOINT_VI_MAX_ITER: usize = 1_000_000;

/// Every action-selection rule the harness knows how to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    VanillaWhittle,
    Greedy,
    VanillaMcts,
    LinearWhittle,
    ShapleyWhittle,
    IterLinear,
    IterShapley,
    MctsLinear,
    MctsShapley,
    Optimal,
    GreedyOverQ,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 12] = [
        PolicyKind::Random,
        PolicyKind::VanillaWhittle,
        PolicyKind::Greedy,
        PolicyKind::VanillaMcts,
        PolicyKind::LinearWhittle,
        PolicyKind::ShapleyWhittle,
        PolicyKind::IterLinear,
        PolicyKind::IterShapley,
        PolicyKind::MctsLinear,
        PolicyKind::MctsShapley,
        PolicyKind::Optimal,
        PolicyKind::GreedyOverQ,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::VanillaWhittle => "vanilla_whittle",
            PolicyKind::Greedy => "greedy",
            PolicyKind::VanillaMcts => "vanilla_mcts",
            PolicyKind::LinearWhittle => "linear_whittle",
            PolicyKind::ShapleyWhittle => "shapley_whittle",
            PolicyKind::IterLinear => "iter_linear",
            PolicyKind::IterShapley => "iter_shapley",
            PolicyKind::MctsLinear => "mcts_linear",
            PolicyKind::MctsShapley => "mcts_shapley",
            PolicyKind::Optimal => "optimal",
            PolicyKind::GreedyOverQ => "greedy_over_q",
        }
    }

    /// True for the two rules that need the exact joint solve.
    pub fn needs_joint_solve(self) -> bool {
        matches!(self, PolicyKind::Optimal | PolicyKind::GreedyOverQ)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter {
                name: "policy",
                message: format!("unknown policy `{s}`"),
            })
    }
}

/// Tunables shared by the prepared policies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyParams {
    pub mcts_iterations: usize,
    pub mcts_c: f64,
    pub rollout_epsilon: f64,
    /// The baseline tree searches to `mcts_depth_factor * budget` picks.
    pub mcts_depth_factor: usize,
    /// Classic sqrt(ln n / n_c) exploration instead of sqrt(n / n_c).
    pub classic_uct: bool,
    pub shapley_samples: usize,
    /// Drop arms whose score is not strictly positive instead of always
    /// pulling the full budget.
    pub allow_fewer: bool,
    pub optimal_max_arms: usize,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            mcts_iterations: 400,
            mcts_c: 5.0,
            rollout_epsilon: 0.1,
            mcts_depth_factor: 2,
            classic_uct: false,
            shapley_samples: 1000,
            allow_fewer: false,
            optimal_max_arms: OPTIMAL_DEFAULT_MAX_ARMS,
        }
    }
}

impl PolicyParams {
    fn validate(&self) -> Result<()> {
        let positives: [(&'static str, f64); 5] = [
            ("mcts_iterations", self.mcts_iterations as f64),
            ("mcts_c", self.mcts_c),
            ("mcts_depth_factor", self.mcts_depth_factor as f64),
            ("shapley_samples", self.shapley_samples as f64),
            ("optimal_max_arms", self.optimal_max_arms as f64),
        ];
        for (name, value) in positives {
            if value <= 0.0 {
                return Err(Error::InvalidParameter {
                    name,
                    message: "must be positive".into(),
                });
            }
        }
        if !(0.0..=1.0).contains(&self.rollout_epsilon) {
            return Err(Error::InvalidParameter {
                name: "rollout_epsilon",
                message: format!("must lie in [0, 1], got {}", self.rollout_epsilon),
            });
        }
        Ok(())
    }
}

/// Arms of the `k` largest scores, ties toward smaller ids, returned in
/// ascending id order. With `allow_fewer` only strictly positive scores
/// survive the cut.
pub fn top_k_arms(scores: &[f64], k: usize, allow_fewer: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    if allow_fewer {
        order.retain(|&i| scores[i] > 0.0);
    }
    order.sort_unstable();
    order
}

/// Uniformly random budget-sized pull set.
pub fn choose_random(inst: &RmabgInstance, _s: &StateVector, rng: &mut Stream) -> ActionVector {
    let picks = index_sample(rng, inst.n_arms, inst.budget).into_vec();
    ActionVector::from_pulls(inst.n_arms, &picks)
}

/// Top-budget arms by the optimistic lone-pull marginal `p[i][s_i]`.
pub fn choose_greedy(
    inst: &RmabgInstance,
    s: &StateVector,
    marginals: &MarginalTable,
) -> ActionVector {
    let scores: Vec<f64> = (0..inst.n_arms)
        .map(|i| marginals.p[i][s.0[i]])
        .collect();
    ActionVector::from_pulls(inst.n_arms, &top_k_arms(&scores, inst.budget, false))
}

/// Top-budget arms by their precomputed index at the current state.
pub fn choose_by_index(
    inst: &RmabgInstance,
    s: &StateVector,
    table: &IndexTable,
) -> ActionVector {
    let scores: Vec<f64> = (0..inst.n_arms).map(|i| table.w[i][s.0[i]]).collect();
    ActionVector::from_pulls(inst.n_arms, &top_k_arms(&scores, inst.budget, false))
}

/// Budget-many rounds of picking the arm with the largest round-adaptive
/// index given everything chosen so far. `marginals` holds each arm's
/// unconditioned continuation bonus per state (`p` rows for the Linear
/// flavor, `u` rows for Shapley).
fn iterative_rounds(
    inst: &RmabgInstance,
    s: &StateVector,
    flavor: IterativeFlavor,
    marginals: &[Vec<f64>],
    n_samples: usize,
    allow_fewer: bool,
    rng: &mut Stream,
) -> Result<ActionVector> {
    let n = inst.n_arms;
    let mut chosen: Vec<usize> = Vec::with_capacity(inst.budget);
    for _ in 0..inst.budget {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if chosen.contains(&i) {
                continue;
            }
            let gain = match flavor {
                IterativeFlavor::Linear => {
                    crate::whittle::root_gain_linear(inst, i, &s.0, &chosen)?
                }
                IterativeFlavor::Shapley => {
                    inst.global_reward
                        .shapley_mc_given(
                            i,
                            s.0[i],
                            n,
                            inst.state_count,
                            inst.budget,
                            &chosen,
                            n_samples,
                            rng,
                        )?
                        .0
                }
            };
            let index = iterative_index_with_bonus(inst, i, s.0[i], &marginals[i], gain)?;
            if best.map_or(true, |(_, bw)| index > bw) {
                best = Some((i, index));
            }
        }
        let (arm, index) = best.expect("budget is at most the arm count");
        if allow_fewer && index <= 0.0 {
            break;
        }
        chosen.push(arm);
    }
    chosen.sort_unstable();
    Ok(ActionVector::from_pulls(n, &chosen))
}

/// Round-adaptive selection with the marginals recomputed from scratch.
/// Sampling happens only for the Shapley flavor.
pub fn choose_iterative(
    inst: &RmabgInstance,
    s: &StateVector,
    flavor: IterativeFlavor,
    n_samples: usize,
    rng: &mut Stream,
) -> Result<ActionVector> {
    let marginals = unconditioned_marginals(inst, flavor, n_samples, rng)?;
    iterative_rounds(inst, s, flavor, &marginals, n_samples, false, rng)
}

fn unconditioned_marginals(
    inst: &RmabgInstance,
    flavor: IterativeFlavor,
    n_samples: usize,
    rng: &mut Stream,
) -> Result<Vec<Vec<f64>>> {
    let (n, sc) = (inst.n_arms, inst.state_count);
    let spec = &inst.global_reward;
    let mut rows = vec![vec![0.0; sc]; n];
    for (i, row) in rows.iter_mut().enumerate() {
        for (s, cell) in row.iter_mut().enumerate() {
            *cell = match flavor {
                IterativeFlavor::Linear => spec.marginal_reward(i, s, n, sc)?,
                IterativeFlavor::Shapley => {
                    spec.shapley_mc(i, s, n, sc, inst.budget, n_samples, rng)?.0
                }
            };
        }
    }
    Ok(rows)
}

/// Exact optimal values of the joint budget-constrained MDP, with
/// action values recoverable on demand.
#[derive(Debug, Clone)]
pub struct JointValueFunction {
    inst: RmabgInstance,
    v: Vec<f64>,
    pub gamma: f64,
}

impl JointValueFunction {
    pub fn v(&self, s: &StateVector) -> f64 {
        self.v[self.inst.state_rank(s)]
    }

    /// One-step lookahead value of `a` in `s` under the stored values.
    pub fn q(&self, s: &StateVector, a: &ActionVector) -> Result<f64> {
        Ok(self.inst.total_reward(s, a)?
            + self.gamma * expected_next_value(&self.inst, s, a, &self.v))
    }

    /// Highest-Q feasible action; ties go to the first action in
    /// enumeration order, the lexicographically smallest pull vector.
    pub fn best_action(&self, s: &StateVector) -> Result<ActionVector> {
        let actions = enumerate_feasible_actions(self.inst.n_arms, self.inst.budget)?;
        let mut best = actions[0].clone();
        let mut best_q = self.q(s, &best)?;
        for a in &actions[1..] {
            let q = self.q(s, a)?;
            if q > best_q {
                best_q = q;
                best = a.clone();
            }
        }
        Ok(best)
    }

    pub fn instance(&self) -> &RmabgInstance {
        &self.inst
    }
}

/// Expected stored value of the joint successor of (s, a): the per-arm
/// chains are independent, so the sum walks every successor with a
/// product of row probabilities.
fn expected_next_value(
    inst: &RmabgInstance,
    s: &StateVector,
    a: &ActionVector,
    v: &[f64],
) -> f64 {
    let n = inst.n_arms;
    let rows: Vec<&[f64]> = (0..n)
        .map(|i| inst.arms[i].transitions[s.0[i]][a.0[i] as usize].as_slice())
        .collect();
    let mut digits = vec![0usize; n];
    let mut total = 0.0;
    let mut rank = 0usize;
    loop {
        let mut prob = 1.0;
        for (i, &d) in digits.iter().enumerate() {
            prob *= rows[i][d];
        }
        if prob > 0.0 {
            total += prob * v[rank];
        }
        let mut i = n;
        loop {
            if i == 0 {
                return total;
            }
            i -= 1;
            digits[i] += 1;
            rank += inst.state_count.pow((n - 1 - i) as u32);
            if digits[i] < inst.state_count {
                break;
            }
            rank -= inst.state_count.pow((n - i) as u32);
            digits[i] = 0;
        }
    }
}

/// Whether the exact joint solvers will accept this instance under
/// `max_arms` (itself clamped to the hard ceiling).
pub fn ensure_joint_enumerable(inst: &RmabgInstance, max_arms: usize) -> Result<()> {
    check_joint_enumerable(inst, max_arms)
}

fn check_joint_enumerable(inst: &RmabgInstance, max_arms: usize) -> Result<()> {
    let limit = max_arms.min(OPTIMAL_HARD_MAX_ARMS);
    let states = inst.joint_state_count();
    let actions = enumerate_feasible_action_count(inst.n_arms, inst.budget);
    if inst.n_arms > limit
        || states > JOINT_STATE_LIMIT
        || states.saturating_mul(actions) > JOINT_TABLE_LIMIT
    {
        return Err(Error::JointTooLarge {
            n: inst.n_arms,
            limit,
            states,
            max_states: JOINT_STATE_LIMIT,
        });
    }
    Ok(())
}

fn enumerate_feasible_action_count(n: usize, k: usize) -> usize {
    let mut total = 0usize;
    let mut c = 1usize;
    for j in 0..=k.min(n) {
        if j > 0 {
            c = c * (n - j + 1) / j;
        }
        total = total.saturating_add(c);
    }
    total
}

/// Exact joint value iteration under the default arm gate.
pub fn solve_optimal(inst: &RmabgInstance) -> Result<JointValueFunction> {
    solve_optimal_with_cap(inst, OPTIMAL_DEFAULT_MAX_ARMS)
}

/// Exact joint value iteration with an explicit arm gate (still subject
/// to the hard caps on arms and table size).
pub fn solve_optimal_with_cap(
    inst: &RmabgInstance,
    max_arms: usize,
) -> Result<JointValueFunction> {
    check_joint_enumerable(inst, max_arms)?;
    let states = inst.enumerate_states();
    let actions = enumerate_feasible_actions(inst.n_arms, inst.budget)?;
    let rewards: Vec<Vec<f64>> = states
        .iter()
        .map(|s| {
            actions
                .iter()
                .map(|a| inst.total_reward(s, a))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut v = vec![0.0; states.len()];
    let mut next = vec![0.0; states.len()];
    let mut converged = false;
    let mut residual = f64::INFINITY;
    for _ in 0..JOINT_VI_MAX_ITER {
        residual = 0.0;
        for (si, s) in states.iter().enumerate() {
            let mut best = f64::NEG_INFINITY;
            for (ai, a) in actions.iter().enumerate() {
                let q = rewards[si][ai] + inst.gamma * expected_next_value(inst, s, a, &v);
                best = best.max(q);
            }
            next[si] = best;
            residual = residual.max((next[si] - v[si]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        if residual <= JOINT_VI_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            residual,
            iterations: JOINT_VI_MAX_ITER,
        });
    }
    Ok(JointValueFunction {
        inst: inst.clone(),
        v,
        gamma: inst.gamma,
    })
}

/// Budget-many rounds of adding the single arm with the largest one-step
/// lookahead value; stops early once no addition strictly improves.
pub fn greedy_over_q(vf: &JointValueFunction, s: &StateVector) -> Result<ActionVector> {
    let n = vf.inst.n_arms;
    let mut pulls = vec![0u8; n];
    let mut current = vf.q(s, &ActionVector(pulls.clone()))?;
    for _ in 0..vf.inst.budget {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if pulls[i] == 1 {
                continue;
            }
            pulls[i] = 1;
            let q = vf.q(s, &ActionVector(pulls.clone()))?;
            pulls[i] = 0;
            if best.map_or(true, |(_, bq)| q > bq) {
                best = Some((i, q));
            }
        }
        match best {
            Some((i, q)) if q > current => {
                pulls[i] = 1;
                current = q;
            }
            _ => break,
        }
    }
    Ok(ActionVector(pulls))
}

/// Exact discounted value of a deterministic stationary rule on the
/// joint chain, one entry per state in enumeration order.
pub fn evaluate_stationary_policy<F>(
    inst: &RmabgInstance,
    mut rule: F,
) -> Result<Vec<f64>>
where
    F: FnMut(&StateVector) -> Result<ActionVector>,
{
    check_joint_enumerable(inst, OPTIMAL_HARD_MAX_ARMS)?;
    let states = inst.enumerate_states();
    let actions: Vec<ActionVector> = states
        .iter()
        .map(|s| rule(s))
        .collect::<Result<Vec<_>>>()?;
    let rewards: Vec<f64> = states
        .iter()
        .zip(&actions)
        .map(|(s, a)| inst.total_reward(s, a))
        .collect::<Result<Vec<_>>>()?;
    let mut v = vec![0.0; states.len()];
    let mut next = vec![0.0; states.len()];
    let mut residual = f64::INFINITY;
    for _ in 0..JOINT_VI_MAX_ITER {
        residual = 0.0;
        for si in 0..states.len() {
            next[si] = rewards[si]
                + inst.gamma * expected_next_value(inst, &states[si], &actions[si], &v);
            residual = residual.max((next[si] - v[si]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        if residual <= JOINT_VI_TOL {
            return Ok(v);
        }
    }
    Err(Error::NoConvergence {
        residual,
        iterations: JOINT_VI_MAX_ITER,
    })
}

/// Discounted value of a deterministic stationary rule over exactly
/// `horizon` rounds (rewards at t = 0..horizon-1), by backward
/// induction on the joint chain.
pub fn finite_horizon_policy_value<F>(
    inst: &RmabgInstance,
    mut rule: F,
    horizon: usize,
) -> Result<Vec<f64>>
where
    F: FnMut(&StateVector) -> Result<ActionVector>,
{
    check_joint_enumerable(inst, OPTIMAL_HARD_MAX_ARMS)?;
    let states = inst.enumerate_states();
    let actions: Vec<ActionVector> = states
        .iter()
        .map(|s| rule(s))
        .collect::<Result<Vec<_>>>()?;
    let rewards: Vec<f64> = states
        .iter()
        .zip(&actions)
        .map(|(s, a)| inst.total_reward(s, a))
        .collect::<Result<Vec<_>>>()?;
    let mut v = vec![0.0; states.len()];
    for _ in 0..horizon {
        let next: Vec<f64> = (0..states.len())
            .map(|si| {
                rewards[si]
                    + inst.gamma * expected_next_value(inst, &states[si], &actions[si], &v)
            })
            .collect();
        v = next;
    }
    Ok(v)
}

/// Optimal discounted value over exactly `horizon` rounds, by backward
/// induction over all feasible actions.
pub fn finite_horizon_optimal_value(
    inst: &RmabgInstance,
    horizon: usize,
) -> Result<Vec<f64>> {
    check_joint_enumerable(inst, OPTIMAL_HARD_MAX_ARMS)?;
    let states = inst.enumerate_states();
    let actions = enumerate_feasible_actions(inst.n_arms, inst.budget)?;
    let rewards: Vec<Vec<f64>> = states
        .iter()
        .map(|s| {
            actions
                .iter()
                .map(|a| inst.total_reward(s, a))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut v = vec![0.0; states.len()];
    for _ in 0..horizon {
        let next: Vec<f64> = (0..states.len())
            .map(|si| {
                let mut best = f64::NEG_INFINITY;
                for (ai, a) in actions.iter().enumerate() {
                    let q = rewards[si][ai]
                        + inst.gamma * expected_next_value(inst, &states[si], a, &v);
                    best = best.max(q);
                }
                best
            })
            .collect();
        v = next;
    }
    Ok(v)
}

enum Prepared {
    Stateless,
    Greedy(MarginalTable),
    Table(IndexTable),
    Iterative {
        flavor: IterativeFlavor,
        marginals: Vec<Vec<f64>>,
    },
    Mcts(MctsContext),
    Joint(JointValueFunction),
}

/// A policy with all of its per-instance precomputation done, ready to
/// pick an action for any state.
pub struct PreparedPolicy {
    kind: PolicyKind,
    params: PolicyParams,
    inst: RmabgInstance,
    data: Prepared,
}

impl PreparedPolicy {
    /// Runs the kind-specific precomputation (index tables, coalition
    /// estimates, joint solves). `seed` feeds only the Monte Carlo
    /// estimators; decision-time randomness comes from the stream handed
    /// to [`Self::choose`].
    pub fn prepare(
        inst: &RmabgInstance,
        kind: PolicyKind,
        params: PolicyParams,
        seed: u64,
    ) -> Result<Self> {
        params.validate()?;
        let data = match kind {
            PolicyKind::Random | PolicyKind::VanillaMcts => Prepared::Stateless,
            PolicyKind::Greedy => {
                // Only the optimistic marginals are needed; one coalition
                // sample keeps the pessimistic side cheap.
                let table = MarginalTable::compute(
                    inst,
                    UEstimator::MonteCarlo { n_samples: 1, seed },
                )?;
                Prepared::Greedy(table)
            }
            PolicyKind::VanillaWhittle => Prepared::Table(vanilla_whittle_table(inst)?),
            PolicyKind::LinearWhittle => Prepared::Table(linear_whittle_table(inst)?),
            PolicyKind::ShapleyWhittle => Prepared::Table(shapley_whittle_table(
                inst,
                params.shapley_samples,
                seed,
            )?),
            PolicyKind::IterLinear => {
                let mut rng = crate::rng::derive_stream(seed, &[0]);
                Prepared::Iterative {
                    flavor: IterativeFlavor::Linear,
                    marginals: unconditioned_marginals(
                        inst,
                        IterativeFlavor::Linear,
                        params.shapley_samples,
                        &mut rng,
                    )?,
                }
            }
            PolicyKind::IterShapley => {
                let table = MarginalTable::compute(
                    inst,
                    UEstimator::MonteCarlo {
                        n_samples: params.shapley_samples,
                        seed,
                    },
                )?;
                Prepared::Iterative {
                    flavor: IterativeFlavor::Shapley,
                    marginals: table.u,
                }
            }
            PolicyKind::MctsLinear => Prepared::Mcts(prepare_mcts_context(
                inst,
                IterativeFlavor::Linear,
                UEstimator::Exact,
            )?),
            PolicyKind::MctsShapley => Prepared::Mcts(prepare_mcts_context(
                inst,
                IterativeFlavor::Shapley,
                UEstimator::MonteCarlo {
                    n_samples: params.shapley_samples,
                    seed,
                },
            )?),
            PolicyKind::Optimal | PolicyKind::GreedyOverQ => {
                Prepared::Joint(solve_optimal_with_cap(inst, params.optimal_max_arms)?)
            }
        };
        Ok(PreparedPolicy {
            kind,
            params,
            inst: inst.clone(),
            data,
        })
    }

    pub fn kind(&self) -> PolicyKind {
        self.kind
    }

    /// Picks this round's action. Deterministic kinds ignore `rng`.
    pub fn choose(&self, s: &StateVector, rng: &mut Stream) -> Result<ActionVector> {
        let (n, k) = (self.inst.n_arms, self.inst.budget);
        match (&self.data, self.kind) {
            (Prepared::Stateless, PolicyKind::Random) => {
                Ok(choose_random(&self.inst, s, rng))
            }
            (Prepared::Stateless, PolicyKind::VanillaMcts) => vanilla_mcts(
                &self.inst,
                s,
                self.params.mcts_iterations,
                self.params.mcts_depth_factor * k,
                rng,
            ),
            (Prepared::Greedy(marginals), _) => {
                let scores: Vec<f64> =
                    (0..n).map(|i| marginals.p[i][s.0[i]]).collect();
                Ok(ActionVector::from_pulls(
                    n,
                    &top_k_arms(&scores, k, self.params.allow_fewer),
                ))
            }
            (Prepared::Table(table), _) => {
                let scores: Vec<f64> = (0..n).map(|i| table.w[i][s.0[i]]).collect();
                Ok(ActionVector::from_pulls(
                    n,
                    &top_k_arms(&scores, k, self.params.allow_fewer),
                ))
            }
            (Prepared::Iterative { flavor, marginals }, _) => iterative_rounds(
                &self.inst,
                s,
                *flavor,
                marginals,
                self.params.shapley_samples,
                self.params.allow_fewer,
                rng,
            ),
            (Prepared::Mcts(ctx), _) => mcts_policy_search(
                &self.inst,
                s,
                ctx,
                self.params.mcts_iterations,
                self.params.mcts_c,
                self.params.rollout_epsilon,
                self.params.classic_uct,
                rng,
            ),
            (Prepared::Joint(vf), PolicyKind::Optimal) => vf.best_action(s),
            (Prepared::Joint(vf), PolicyKind::GreedyOverQ) => greedy_over_q(vf, s),
            _ => unreachable!("prepared data always matches the kind"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{
        adversarial_instance, coverage_example_instance, gen_instance, AdversarialVariant,
        SyntheticConfig, SyntheticRewardKind,
    };
    use crate::model::ArmModel;
    use crate::reward::GlobalRewardSpec;
    use crate::rng::derive_stream;

    #[test]
    fn policy_names_round_trip() {
        for kind in PolicyKind::ALL {
            assert_eq!(kind.as_str().parse::<PolicyKind>().unwrap(), kind);
        }
        assert!("bogus".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn top_k_prefers_small_ids_on_ties() {
        assert_eq!(top_k_arms(&[1.0, 1.0, 1.0], 2, false), vec![0, 1]);
        assert_eq!(top_k_arms(&[1.0, 2.0, 2.0], 2, false), vec![1, 2]);
        assert_eq!(top_k_arms(&[0.0, -1.0, 2.0], 2, true), vec![2]);
        assert_eq!(top_k_arms(&[-1.0, -2.0], 2, true), Vec::<usize>::new());
    }

    #[test]
    fn random_policy_pulls_uniformly() {
        let inst = coverage_example_instance();
        let s = StateVector(vec![1; 4]);
        let mut rng = derive_stream(17, &[0]);
        let mut counts = [0usize; 4];
        let draws = 40_000;
        for _ in 0..draws {
            let a = choose_random(&inst, &s, &mut rng);
            assert_eq!(a.pull_count(), 2);
            for (i, &x) in a.0.iter().enumerate() {
                counts[i] += x as usize;
            }
        }
        // Each arm appears with probability K/N = 1/2.
        let expected = draws as f64 * 0.5;
        let sigma = (draws as f64 * 0.25).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expected).abs() < 4.0 * sigma,
                "arm {i}: {c} draws"
            );
        }
    }

    #[test]
    fn budget_equal_to_arm_count_pulls_everything() {
        let inst = adversarial_instance(3, 3, 0.9, AdversarialVariant::AllArms).unwrap();
        let s = StateVector(vec![1; 3]);
        let mut rng = derive_stream(1, &[0]);
        assert_eq!(choose_random(&inst, &s, &mut rng).0, vec![1, 1, 1]);
    }

    #[test]
    fn greedy_ranks_by_optimistic_marginal() {
        let inst = coverage_example_instance();
        let marginals = MarginalTable::compute(
            &inst,
            UEstimator::MonteCarlo { n_samples: 1, seed: 0 },
        )
        .unwrap();
        let a = choose_greedy(&inst, &StateVector(vec![1; 4]), &marginals);
        assert_eq!(a.0, vec![1, 1, 0, 0]);
    }

    #[test]
    fn index_policy_picks_the_top_pair() {
        let inst = coverage_example_instance();
        let table = linear_whittle_table(&inst).unwrap();
        let a = choose_by_index(&inst, &StateVector(vec![1; 4]), &table);
        assert_eq!(a.0, vec![1, 1, 0, 0]);
        let zeros = IndexTable {
            flavor: table.flavor,
            w: vec![vec![0.0; 2]; 4],
            u_stderr: None,
        };
        let a = choose_by_index(&inst, &StateVector(vec![1; 4]), &zeros);
        assert_eq!(a.0, vec![1, 1, 0, 0]);
    }

    #[test]
    fn index_choice_ignores_positive_scaling() {
        let inst = coverage_example_instance();
        let mut table = linear_whittle_table(&inst).unwrap();
        let before = choose_by_index(&inst, &StateVector(vec![1; 4]), &table);
        for row in &mut table.w {
            for w in row {
                *w *= 37.5;
            }
        }
        let after = choose_by_index(&inst, &StateVector(vec![1; 4]), &table);
        assert_eq!(before.0, after.0);
    }

    #[test]
    fn round_adaptive_choice_fixes_the_overlap_blind_spot() {
        // The plain index policy pulls the twin arms 0 and 1; adapting
        // the bonus after committing arm 0 swaps in the only arm that
        // still covers anything new.
        let inst = coverage_example_instance();
        let s = StateVector(vec![1; 4]);
        let mut rng = derive_stream(0, &[0]);
        let a = choose_iterative(&inst, &s, IterativeFlavor::Linear, 100, &mut rng).unwrap();
        assert_eq!(a.0, vec![1, 0, 0, 1]);
    }

    #[test]
    fn round_adaptive_choice_avoids_the_duplicate_trap() {
        let inst = adversarial_instance(4, 2, 0.9, AdversarialVariant::TwoArms).unwrap();
        let s = StateVector(vec![1; 4]);
        let mut rng = derive_stream(0, &[0]);
        let a = choose_iterative(&inst, &s, IterativeFlavor::Linear, 100, &mut rng).unwrap();
        assert_eq!(a.0, vec![1, 0, 1, 0]);
    }

    #[test]
    fn single_round_budget_matches_the_index_policy() {
        let mut inst = coverage_example_instance();
        inst.budget = 1;
        let s = StateVector(vec![1; 4]);
        let table = linear_whittle_table(&inst).unwrap();
        let by_index = choose_by_index(&inst, &s, &table);
        let mut rng = derive_stream(0, &[0]);
        let adaptive =
            choose_iterative(&inst, &s, IterativeFlavor::Linear, 100, &mut rng).unwrap();
        assert_eq!(by_index.0, adaptive.0);
    }

    #[test]
    fn additive_rewards_make_adaptation_a_no_op() {
        let cfg = SyntheticConfig {
            kind: SyntheticRewardKind::Linear,
            ..SyntheticConfig::default()
        };
        let inst = gen_instance(&cfg, 5).unwrap();
        let table = linear_whittle_table(&inst).unwrap();
        for s in inst.enumerate_states() {
            let by_index = choose_by_index(&inst, &s, &table);
            let mut rng = derive_stream(0, &[0]);
            let adaptive =
                choose_iterative(&inst, &s, IterativeFlavor::Linear, 100, &mut rng).unwrap();
            assert_eq!(by_index.0, adaptive.0, "state {:?}", s.0);
        }
    }

    #[test]
    fn joint_solve_matches_repeated_best_action_on_identity_dynamics() {
        let inst = coverage_example_instance();
        let vf = solve_optimal(&inst).unwrap();
        let all_on = StateVector(vec![1; 4]);
        assert!((vf.v(&all_on) - 40.0).abs() < 1e-6);
        assert_eq!(vf.best_action(&all_on).unwrap().0, vec![0, 0, 1, 1]);
    }

    #[test]
    fn joint_solve_prices_the_kill_trap_by_spreading_pulls() {
        // Pulling one arm per round preserves the other for later:
        // 1 + gamma beats pulling both at once.
        let inst = adversarial_instance(2, 2, 0.9, AdversarialVariant::AllArms).unwrap();
        let vf = solve_optimal(&inst).unwrap();
        assert!((vf.v(&StateVector(vec![1, 1])) - 1.9).abs() < 1e-6);
    }

    #[test]
    fn joint_values_dominate_every_action_value() {
        let cfg = SyntheticConfig::default();
        let inst = gen_instance(&cfg, 3).unwrap();
        let vf = solve_optimal(&inst).unwrap();
        let actions = enumerate_feasible_actions(inst.n_arms, inst.budget).unwrap();
        for s in inst.enumerate_states() {
            let best = actions
                .iter()
                .map(|a| vf.q(&s, a).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((vf.v(&s) - best).abs() < 1e-6, "state {:?}", s.0);
        }
    }

    #[test]
    fn arm_gate_rejects_oversized_instances() {
        let cfg = SyntheticConfig {
            n_arms: 5,
            ..SyntheticConfig::default()
        };
        let inst = gen_instance(&cfg, 0).unwrap();
        assert!(solve_optimal(&inst).is_err());
        assert!(solve_optimal_with_cap(&inst, 6).is_ok());
    }

    #[test]
    fn greedy_over_q_is_exact_when_q_is_additive_in_the_pull_set() {
        // Action-blind kernels make the continuation a constant per
        // state, so with an additive reward the action value is modular
        // in the pull set and the greedy build-up cannot lose.
        let rows = [
            vec![vec![0.3, 0.7], vec![0.3, 0.7]],
            vec![vec![0.6, 0.4], vec![0.6, 0.4]],
        ];
        let arms = (0..4)
            .map(|_| ArmModel {
                transitions: rows.to_vec(),
                per_arm_reward: vec![vec![0.0; 2], vec![1.0; 2]],
            })
            .collect();
        let inst = RmabgInstance {
            n_arms: 4,
            budget: 2,
            gamma: 0.9,
            alpha: 0.5,
            state_count: 2,
            arms,
            global_reward: GlobalRewardSpec::linear(vec![2.0, -1.0, 0.5, 1.0]),
        };
        let vf = solve_optimal(&inst).unwrap();
        for s in inst.enumerate_states() {
            let greedy = greedy_over_q(&vf, &s).unwrap();
            let best = vf.best_action(&s).unwrap();
            let gq = vf.q(&s, &greedy).unwrap();
            let bq = vf.q(&s, &best).unwrap();
            assert!(
                (gq - bq).abs() < 1e-9,
                "state {:?}: greedy {gq}, best {bq}",
                s.0
            );
        }
    }

    #[test]
    fn single_budget_greedy_over_q_is_the_single_arm_argmax() {
        let mut inst = coverage_example_instance();
        inst.budget = 1;
        let vf = solve_optimal(&inst).unwrap();
        let s = StateVector(vec![1; 4]);
        let a = greedy_over_q(&vf, &s).unwrap();
        assert_eq!(a.0, vec![1, 0, 0, 0]);
    }

    #[test]
    fn stationary_evaluation_recovers_the_known_coverage_values() {
        let inst = coverage_example_instance();
        let table = linear_whittle_table(&inst).unwrap();
        let v =
            evaluate_stationary_policy(&inst, |s| Ok(choose_by_index(&inst, s, &table)))
                .unwrap();
        let all_on = inst.state_rank(&StateVector(vec![1; 4]));
        assert!((v[all_on] - 30.0).abs() < 1e-6, "got {}", v[all_on]);
    }

    #[test]
    fn finite_horizon_values_accumulate_discounted_rounds() {
        let inst = coverage_example_instance();
        let v1 = finite_horizon_optimal_value(&inst, 1).unwrap();
        let v2 = finite_horizon_optimal_value(&inst, 2).unwrap();
        let all_on = inst.state_rank(&StateVector(vec![1; 4]));
        assert!((v1[all_on] - 4.0).abs() < 1e-9);
        assert!((v2[all_on] - 7.6).abs() < 1e-9);
        let table = linear_whittle_table(&inst).unwrap();
        let vp = finite_horizon_policy_value(
            &inst,
            |s| Ok(choose_by_index(&inst, s, &table)),
            1,
        )
        .unwrap();
        assert!((vp[all_on] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn every_prepared_policy_emits_feasible_actions() {
        let inst = coverage_example_instance();
        for kind in PolicyKind::ALL {
            let policy =
                PreparedPolicy::prepare(&inst, kind, PolicyParams::default(), 42).unwrap();
            let mut rng = derive_stream(5, &[kind as u64]);
            for s in [StateVector(vec![0; 4]), StateVector(vec![1, 0, 1, 0])] {
                let a = policy.choose(&s, &mut rng).unwrap();
                assert_eq!(a.len(), 4, "{kind}");
                assert!(a.pull_count() <= inst.budget, "{kind}");
                if !matches!(kind, PolicyKind::Optimal | PolicyKind::GreedyOverQ) {
                    assert_eq!(a.pull_count(), inst.budget, "{kind}");
                }
            }
        }
    }

    #[test]
    fn prepared_policies_replay_deterministically() {
        let inst = coverage_example_instance();
        let s = StateVector(vec![1, 1, 0, 1]);
        for kind in PolicyKind::ALL {
            let policy =
                PreparedPolicy::prepare(&inst, kind, PolicyParams::default(), 7).unwrap();
            let a = policy.choose(&s, &mut derive_stream(3, &[1])).unwrap();
            let b = policy.choose(&s, &mut derive_stream(3, &[1])).unwrap();
            assert_eq!(a.0, b.0, "{kind}");
        }
    }

    #[test]
    fn allow_fewer_drops_worthless_pulls() {
        let inst = adversarial_instance(4, 2, 0.9, AdversarialVariant::TwoArms).unwrap();
        let params = PolicyParams {
            allow_fewer: true,
            ..PolicyParams::default()
        };
        // Every trap index is negative, so the table policy pulls
        // nothing at all once allowed to.
        let policy =
            PreparedPolicy::prepare(&inst, PolicyKind::LinearWhittle, params, 0).unwrap();
        let a = policy
            .choose(&StateVector(vec![1; 4]), &mut derive_stream(0, &[0]))
            .unwrap();
        assert_eq!(a.pull_count(), 0);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let inst = coverage_example_instance();
        let params = PolicyParams {
            rollout_epsilon: 1.5,
            ..PolicyParams::default()
        };
        assert!(
            PreparedPolicy::prepare(&inst, PolicyKind::Random, params, 0).is_err()
        );
        let params = PolicyParams {
            mcts_iterations: 0,
            ..PolicyParams::default()
        };
        assert!(
            PreparedPolicy::prepare(&inst, PolicyKind::VanillaMcts, params, 0).is_err()
        );
    }
}
