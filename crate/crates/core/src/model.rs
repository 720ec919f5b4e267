//! Problem instances: per-arm Markov chains, budgets, and the combined
//! reward weighting. The JSON layout of [`RmabgInstance`] is a public
//! interface; field names and nesting are stable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::reward::GlobalRewardSpec;
use crate::rng::Stream;
use rand::Rng;

/// Row-sum slop accepted on load; rows within this distance of 1 are
/// rescaled, anything further out is rejected.
pub const ROW_SUM_NORMALIZE_TOL: f64 = 1e-6;
/// Row-sum tolerance required after normalization.
pub const ROW_SUM_STRICT_TOL: f64 = 1e-9;
/// Action enumeration is exponential in the arm count; refuse beyond this.
pub const ENUMERATION_ARM_LIMIT: usize = 20;

/// Joint state: one entry per arm, each in `[0, state_count)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateVector(pub Vec<usize>);

/// Joint action: one 0/1 entry per arm. Feasibility (`sum <= budget`) is
/// checked where actions are consumed, not by the type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionVector(pub Vec<u8>);

impl StateVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[usize] {
        &self.0
    }
}

impl ActionVector {
    /// Builds the vector with ones at `pulls`.
    pub fn from_pulls(n: usize, pulls: &[usize]) -> Self {
        let mut a = vec![0u8; n];
        for &i in pulls {
            a[i] = 1;
        }
        ActionVector(a)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[u8] {
        &self.0
    }

    pub fn pull_count(&self) -> usize {
        self.0.iter().map(|&a| a as usize).sum()
    }

    /// Indices of pulled arms, ascending.
    pub fn pulled(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i] == 1).collect()
    }
}

/// One arm's chain: `transitions[s][a][s']` and `per_arm_reward[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub per_arm_reward: Vec<Vec<f64>>,
}

impl ArmModel {
    pub fn transition(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[s][a][next]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.per_arm_reward[s][a]
    }
}

/// A full problem instance. `alpha` weights the combined reward:
/// `(1 - alpha) * global + alpha * sum of per-arm rewards`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmabgInstance {
    pub n_arms: usize,
    pub budget: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub state_count: usize,
    pub arms: Vec<ArmModel>,
    pub global_reward: GlobalRewardSpec,
}

impl RmabgInstance {
    /// Parses and validates; rows whose sums are within
    /// [`ROW_SUM_NORMALIZE_TOL`] of 1 are rescaled, worse rows reject.
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let mut inst: RmabgInstance = serde_json::from_slice(bytes)?;
        inst.normalize_rows()?;
        inst.validate()?;
        Ok(inst)
    }

    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("instance serializes");
        out.push('\n');
        out
    }

    fn normalize_rows(&mut self) -> Result<()> {
        let mut violations = Vec::new();
        for (i, arm) in self.arms.iter_mut().enumerate() {
            for (s, per_action) in arm.transitions.iter_mut().enumerate() {
                for (a, row) in per_action.iter_mut().enumerate() {
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() <= ROW_SUM_STRICT_TOL {
                        continue;
                    }
                    if (sum - 1.0).abs() <= ROW_SUM_NORMALIZE_TOL {
                        for p in row.iter_mut() {
                            *p /= sum;
                        }
                    } else {
                        violations.push(Violation {
                            arm: Some(i),
                            field: format!("transitions[{s}][{a}]"),
                            detail: format!("row sums to {sum}, outside the normalizable band"),
                        });
                    }
                }
            }
        }
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(violations))
        }
    }

    /// Checks every structural invariant; collects all defects.
    pub fn validate(&self) -> Result<()> {
        let report = self.validation_report();
        if report.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(report))
        }
    }

    pub fn validation_report(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |arm: Option<usize>, field: String, detail: String| {
            out.push(Violation { arm, field, detail });
        };
        if self.n_arms == 0 {
            push(None, "n_arms".into(), "must be positive".into());
        }
        if self.budget == 0 || self.budget > self.n_arms {
            push(
                None,
                "budget".into(),
                format!("must be in [1, n_arms]; got {}", self.budget),
            );
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            push(None, "gamma".into(), format!("must be in (0, 1); got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            push(None, "alpha".into(), format!("must be in [0, 1]; got {}", self.alpha));
        }
        if self.state_count < 2 {
            push(None, "state_count".into(), "need at least two states".into());
        }
        if self.arms.len() != self.n_arms {
            push(
                None,
                "arms".into(),
                format!("expected {} entries, got {}", self.n_arms, self.arms.len()),
            );
        }
        let s_count = self.state_count;
        for (i, arm) in self.arms.iter().enumerate() {
            if arm.transitions.len() != s_count {
                push(
                    Some(i),
                    "transitions".into(),
                    format!("expected {s_count} state rows, got {}", arm.transitions.len()),
                );
                continue;
            }
            for (s, per_action) in arm.transitions.iter().enumerate() {
                if per_action.len() != 2 {
                    push(
                        Some(i),
                        format!("transitions[{s}]"),
                        format!("expected 2 action rows, got {}", per_action.len()),
                    );
                    continue;
                }
                for (a, row) in per_action.iter().enumerate() {
                    if row.len() != s_count {
                        push(
                            Some(i),
                            format!("transitions[{s}][{a}]"),
                            format!("expected {s_count} entries, got {}", row.len()),
                        );
                        continue;
                    }
                    if row.iter().any(|p| !(0.0..=1.0).contains(p) || !p.is_finite()) {
                        push(
                            Some(i),
                            format!("transitions[{s}][{a}]"),
                            "probabilities must lie in [0, 1]".into(),
                        );
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > ROW_SUM_STRICT_TOL {
                        push(
                            Some(i),
                            format!("transitions[{s}][{a}]"),
                            format!("row sums to {sum}, want 1 within {ROW_SUM_STRICT_TOL:.0e}"),
                        );
                    }
                }
            }
            if arm.per_arm_reward.len() != s_count
                || arm.per_arm_reward.iter().any(|r| r.len() != 2)
            {
                push(
                    Some(i),
                    "per_arm_reward".into(),
                    format!("expected {s_count}x2 table"),
                );
            } else if arm
                .per_arm_reward
                .iter()
                .flatten()
                .any(|r| !r.is_finite())
            {
                push(Some(i), "per_arm_reward".into(), "entries must be finite".into());
            }
        }
        for v in self.global_reward.validation_report(self.n_arms, self.state_count) {
            out.push(v);
        }
        out
    }

    /// Combined reward `(1 - alpha) * global + alpha * sum_i R_i`.
    pub fn total_reward(&self, s: &StateVector, a: &ActionVector) -> Result<f64> {
        let glob = self.global_reward.evaluate(s.values(), a.values())?;
        let per_arm: f64 = (0..self.n_arms)
            .map(|i| self.arms[i].reward(s.0[i], a.0[i] as usize))
            .sum();
        Ok((1.0 - self.alpha) * glob + self.alpha * per_arm)
    }

    /// Probability of the joint successor under independent arm chains.
    pub fn joint_transition_prob(
        &self,
        s: &StateVector,
        a: &ActionVector,
        next: &StateVector,
    ) -> f64 {
        (0..self.n_arms)
            .map(|i| self.arms[i].transition(s.0[i], a.0[i] as usize, next.0[i]))
            .product()
    }

    /// Draws each arm's successor independently.
    pub fn sample_next_state(
        &self,
        s: &StateVector,
        a: &ActionVector,
        rng: &mut Stream,
    ) -> StateVector {
        let mut next = Vec::with_capacity(self.n_arms);
        for i in 0..self.n_arms {
            let row = &self.arms[i].transitions[s.0[i]][a.0[i] as usize];
            next.push(sample_categorical(row, rng));
        }
        StateVector(next)
    }

    /// All joint states in mixed-radix order (arm 0 most significant).
    pub fn enumerate_states(&self) -> Vec<StateVector> {
        let mut out = Vec::new();
        let mut cur = vec![0usize; self.n_arms];
        loop {
            out.push(StateVector(cur.clone()));
            let mut i = self.n_arms;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                cur[i] += 1;
                if cur[i] < self.state_count {
                    break;
                }
                cur[i] = 0;
            }
        }
    }

    /// Rank of a state in [`Self::enumerate_states`] order.
    pub fn state_rank(&self, s: &StateVector) -> usize {
        s.0.iter().fold(0, |acc, &v| acc * self.state_count + v)
    }

    pub fn joint_state_count(&self) -> usize {
        self.state_count.pow(self.n_arms as u32)
    }
}

/// Draws an index from an explicit probability row.
pub fn sample_categorical(row: &[f64], rng: &mut Stream) -> usize {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in row.iter().enumerate() {
        acc += p;
        if x < acc {
            return i;
        }
    }
    row.len() - 1
}

/// Every 0/1 vector with at most `k` ones, ascending as binary numbers with
/// arm 0 as the most significant bit. Count is `sum_j C(n, j)` for
/// `j <= k`.
pub fn enumerate_feasible_actions(n: usize, k: usize) -> Result<Vec<ActionVector>> {
    if n > ENUMERATION_ARM_LIMIT {
        return Err(Error::TooManyArms {
            n,
            limit: ENUMERATION_ARM_LIMIT,
        });
    }
    let mut out = Vec::new();
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize > k {
            continue;
        }
        let a: Vec<u8> = (0..n)
            .map(|i| ((mask >> (n - 1 - i)) & 1) as u8)
            .collect();
        out.push(ActionVector(a));
    }
    Ok(out)
}
