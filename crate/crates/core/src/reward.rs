//! Global reward families and the per-arm summaries built from them.
//!
//! Four closed-form families plus an explicit table. The closed forms are
//! monotone and submodular in the action vector by construction, which the
//! marginal machinery exploits: the completion of the unseen coordinates
//! that maximizes a lone pull's reward, and the one that minimizes a
//! marginal gain, are both "every other arm at its top state". Table
//! specs get exhaustive completion enumeration instead.

use rand::seq::index::sample as index_sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};
use crate::model::RmabgInstance;
use crate::rng::{derive_stream, label_hash, Stream};

/// Largest coverage universe representable by the bitmask evaluator.
pub const MAX_UNIVERSE: usize = 128;
/// Completion enumeration (table kind) refuses beyond this many arms.
pub const COMPLETION_ARM_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub s: Vec<usize>,
    pub a: Vec<u8>,
    pub r: f64,
}

/// The non-separable reward over the joint (state, action).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "lowercase")]
pub enum GlobalRewardSpec {
    /// `sum_i m_i * s_i * a_i`
    Linear { m: Vec<f64> },
    /// `1 - prod_i (1 - m_i * s_i * a_i)`
    Probability { m: Vec<f64> },
    /// `max_i m_i * s_i * a_i`
    Max { m: Vec<f64> },
    /// Coverage `|union of sets[i] over pulled engaged arms|`; elements are
    /// ids in `[0, universe)`.
    Subset {
        universe: usize,
        sets: Vec<Vec<usize>>,
    },
    /// Explicit enumeration; lookups outside the table are an error.
    Table { entries: Vec<TableEntry> },
}

impl GlobalRewardSpec {
    pub fn linear(m: Vec<f64>) -> Self {
        GlobalRewardSpec::Linear { m }
    }

    pub fn probability(m: Vec<f64>) -> Self {
        GlobalRewardSpec::Probability { m }
    }

    pub fn max_of(m: Vec<f64>) -> Self {
        GlobalRewardSpec::Max { m }
    }

    pub fn subset(universe: usize, sets: Vec<Vec<usize>>) -> Self {
        GlobalRewardSpec::Subset { universe, sets }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            GlobalRewardSpec::Linear { .. } => "linear",
            GlobalRewardSpec::Probability { .. } => "probability",
            GlobalRewardSpec::Max { .. } => "max",
            GlobalRewardSpec::Subset { .. } => "subset",
            GlobalRewardSpec::Table { .. } => "table",
        }
    }

    /// True for the families with known monotone submodular structure.
    pub fn is_closed_form(&self) -> bool {
        !matches!(self, GlobalRewardSpec::Table { .. })
    }

    pub fn evaluate(&self, s: &[usize], a: &[u8]) -> Result<f64> {
        debug_assert_eq!(s.len(), a.len());
        match self {
            GlobalRewardSpec::Linear { m } => Ok((0..s.len())
                .map(|i| m[i] * s[i] as f64 * a[i] as f64)
                .sum()),
            GlobalRewardSpec::Probability { m } => {
                let miss: f64 = (0..s.len())
                    .map(|i| 1.0 - m[i] * s[i] as f64 * a[i] as f64)
                    .product();
                Ok(1.0 - miss)
            }
            GlobalRewardSpec::Max { m } => Ok((0..s.len())
                .map(|i| m[i] * s[i] as f64 * a[i] as f64)
                .fold(0.0, f64::max)),
            GlobalRewardSpec::Subset { universe, sets } => {
                let mut covered = [0u64; 2];
                debug_assert!(*universe <= MAX_UNIVERSE);
                for i in 0..s.len() {
                    if s[i] >= 1 && a[i] == 1 {
                        for &e in &sets[i] {
                            covered[e / 64] |= 1u64 << (e % 64);
                        }
                    }
                }
                Ok((covered[0].count_ones() + covered[1].count_ones()) as f64)
            }
            GlobalRewardSpec::Table { entries } => entries
                .iter()
                .find(|e| e.s == s && e.a == a)
                .map(|e| e.r)
                .ok_or(Error::MissingTableEntry),
        }
    }

    pub fn validation_report(&self, n: usize, state_count: usize) -> Vec<Violation> {
        fn note(field: String, detail: String) -> Violation {
            Violation {
                arm: None,
                field,
                detail,
            }
        }
        fn check_m(m: &[f64], n: usize, out: &mut Vec<Violation>) {
            if m.len() != n {
                out.push(note(
                    "global_reward.m".into(),
                    format!("expected {n} entries, got {}", m.len()),
                ));
            }
            if m.iter().any(|x| !x.is_finite() || *x < 0.0) {
                out.push(note(
                    "global_reward.m".into(),
                    "entries must be finite and non-negative".into(),
                ));
            }
        }
        let mut out = Vec::new();
        match self {
            GlobalRewardSpec::Linear { m } | GlobalRewardSpec::Max { m } => {
                check_m(m, n, &mut out);
            }
            GlobalRewardSpec::Probability { m } => {
                check_m(m, n, &mut out);
                let top = (state_count - 1) as f64;
                if m.iter().any(|x| x * top > 1.0 + 1e-12) {
                    out.push(note(
                        "global_reward.m".into(),
                        "probability kind needs m_i * max_state <= 1".into(),
                    ));
                }
            }
            GlobalRewardSpec::Subset { universe, sets } => {
                if *universe == 0 || *universe > MAX_UNIVERSE {
                    out.push(note(
                        "global_reward.universe".into(),
                        format!("must be in [1, {MAX_UNIVERSE}]"),
                    ));
                }
                if sets.len() != n {
                    out.push(note(
                        "global_reward.sets".into(),
                        format!("expected {n} sets, got {}", sets.len()),
                    ));
                }
                for (i, set) in sets.iter().enumerate() {
                    if set.iter().any(|&e| e >= *universe) {
                        out.push(note(
                            format!("global_reward.sets[{i}]"),
                            "element outside the universe".into(),
                        ));
                    }
                }
            }
            GlobalRewardSpec::Table { entries } => {
                if entries.is_empty() {
                    out.push(note("global_reward.entries".into(), "table is empty".into()));
                }
                for (j, e) in entries.iter().enumerate() {
                    if e.s.len() != n || e.a.len() != n {
                        out.push(note(
                            format!("global_reward.entries[{j}]"),
                            format!("state/action length must be {n}"),
                        ));
                    }
                    if e.s.iter().any(|&v| v >= state_count)
                        || e.a.iter().any(|&v| v > 1)
                        || !e.r.is_finite()
                    {
                        out.push(note(
                            format!("global_reward.entries[{j}]"),
                            "entry out of range".into(),
                        ));
                    }
                }
            }
        }
        out
    }

    /// The completions of coordinate `i` fixed at `s_i` to scan when
    /// optimizing over unseen coordinates. Closed forms need only the
    /// everything-engaged completion; tables enumerate.
    fn completions(
        &self,
        i: usize,
        s_i: usize,
        n: usize,
        state_count: usize,
    ) -> Result<Vec<Vec<usize>>> {
        if self.is_closed_form() {
            let mut s = vec![state_count - 1; n];
            s[i] = s_i;
            return Ok(vec![s]);
        }
        if n > COMPLETION_ARM_LIMIT {
            return Err(Error::TooManyArms {
                n,
                limit: COMPLETION_ARM_LIMIT,
            });
        }
        let mut out = Vec::new();
        let mut cur = vec![0usize; n];
        cur[i] = s_i;
        loop {
            out.push(cur.clone());
            // odometer over every coordinate except i
            let mut pos = n;
            loop {
                if pos == 0 {
                    return Ok(out);
                }
                pos -= 1;
                if pos == i {
                    continue;
                }
                cur[pos] += 1;
                if cur[pos] < state_count {
                    break;
                }
                cur[pos] = 0;
            }
        }
    }

    /// Best-case reward of pulling arm `i` alone while its own state is
    /// pinned: the optimistic per-arm bonus used by the linearized index.
    pub fn marginal_reward(
        &self,
        i: usize,
        s_i: usize,
        n: usize,
        state_count: usize,
    ) -> Result<f64> {
        let mut a = vec![0u8; n];
        a[i] = 1;
        let mut best = f64::NEG_INFINITY;
        for s in self.completions(i, s_i, n, state_count)? {
            best = best.max(self.evaluate(&s, &a)?);
        }
        Ok(best)
    }

    /// Worst-case-completion expected marginal gain of pulling arm `i` on
    /// top of a random coalition of at most `k_budget - 1` other pulls.
    /// The coalition distribution is size-uniform then subset-uniform,
    /// which is exactly the truncated permutation weighting normalized to
    /// a convex combination.
    pub fn shapley_exact(
        &self,
        i: usize,
        s_i: usize,
        n: usize,
        state_count: usize,
        k_budget: usize,
    ) -> Result<f64> {
        self.shapley_exact_given(i, s_i, n, state_count, k_budget, &[])
    }

    /// [`Self::shapley_exact`] conditioned on arms already committed to
    /// a pull this round: `chosen` is forced into both sides of every
    /// gain, coalitions are drawn from the remaining arms with at most
    /// `k_budget - 1 - chosen.len()` members, and the per-size weights
    /// are renormalized accordingly (no longer uniform over sizes once
    /// `chosen` is non-empty).
    pub fn shapley_exact_given(
        &self,
        i: usize,
        s_i: usize,
        n: usize,
        state_count: usize,
        k_budget: usize,
        chosen: &[usize],
    ) -> Result<f64> {
        check_shapley_args_given(i, n, k_budget, chosen)?;
        let others: Vec<usize> = (0..n)
            .filter(|&j| j != i && !chosen.contains(&j))
            .collect();
        let cap = k_budget - 1 - chosen.len();
        let weights = coalition_size_weights(n, others.len(), cap);
        let mut best = f64::INFINITY;
        for comp in self.completions(i, s_i, n, state_count)? {
            let mut total = 0.0;
            for (size, weight) in weights.iter().enumerate() {
                let mut size_sum = 0.0;
                let mut count = 0usize;
                for_each_combination(&others, size, &mut |subset| {
                    let mut base = vec![0u8; n];
                    for &j in chosen {
                        base[j] = 1;
                    }
                    for &j in subset {
                        base[j] = 1;
                    }
                    let mut with_i = base.clone();
                    with_i[i] = 1;
                    let gain =
                        self.evaluate(&comp, &with_i).unwrap_or(f64::NAN)
                            - self.evaluate(&comp, &base).unwrap_or(f64::NAN);
                    size_sum += gain;
                    count += 1;
                })?;
                total += weight * (size_sum / count as f64);
            }
            if total.is_nan() {
                return Err(Error::MissingTableEntry);
            }
            best = best.min(total);
        }
        Ok(best)
    }

    /// Monte Carlo counterpart of [`Self::shapley_exact`]: `n_samples`
    /// coalitions drawn from the same distribution. Returns
    /// `(estimate, standard error)`.
    pub fn shapley_mc(
        &self,
        i: usize,
        s_i: usize,
        n: usize,
        state_count: usize,
        k_budget: usize,
        n_samples: usize,
        rng: &mut Stream,
    ) -> Result<(f64, f64)> {
        self.shapley_mc_given(i, s_i, n, state_count, k_budget, &[], n_samples, rng)
    }

    /// Monte Carlo counterpart of [`Self::shapley_exact_given`]:
    /// coalition sizes are drawn from the renormalized per-size weights,
    /// then a subset of the free arms uniformly within the size.
    #[allow(clippy::too_many_arguments)]
    pub fn shapley_mc_given(
        &self,
        i: usize,
        s_i: usize,
        n: usize,
        state_count: usize,
        k_budget: usize,
        chosen: &[usize],
        n_samples: usize,
        rng: &mut Stream,
    ) -> Result<(f64, f64)> {
        check_shapley_args_given(i, n, k_budget, chosen)?;
        if n_samples == 0 {
            return Err(Error::InvalidParameter {
                name: "n_samples",
                message: "need at least one sample".into(),
            });
        }
        let completions = self.completions(i, s_i, n, state_count)?;
        let others: Vec<usize> = (0..n)
            .filter(|&j| j != i && !chosen.contains(&j))
            .collect();
        let cap = k_budget - 1 - chosen.len();
        let weights = coalition_size_weights(n, others.len(), cap);
        let mut cumulative = 0.0;
        let size_cdf: Vec<f64> = weights
            .iter()
            .map(|w| {
                cumulative += w;
                cumulative
            })
            .collect();
        // Welford accumulators, one per candidate completion; every
        // completion shares the same coalition draws.
        let mut stats = vec![(0.0f64, 0.0f64); completions.len()];
        let mut base = vec![0u8; n];
        let mut with_i = vec![0u8; n];
        for t in 0..n_samples {
            let u: f64 = rng.random();
            let size = size_cdf.iter().position(|&c| u < c).unwrap_or(cap);
            base.iter_mut().for_each(|x| *x = 0);
            for &j in chosen {
                base[j] = 1;
            }
            if size > 0 {
                for idx in index_sample(rng, others.len(), size) {
                    base[others[idx]] = 1;
                }
            }
            with_i.copy_from_slice(&base);
            with_i[i] = 1;
            for (c, comp) in completions.iter().enumerate() {
                let gain = self.evaluate(comp, &with_i)? - self.evaluate(comp, &base)?;
                let (mean, m2) = &mut stats[c];
                let delta = gain - *mean;
                *mean += delta / (t + 1) as f64;
                *m2 += delta * (gain - *mean);
            }
        }
        let (mean, m2) = stats
            .into_iter()
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("at least one completion");
        let stderr = if n_samples > 1 {
            (m2 / (n_samples - 1) as f64 / n_samples as f64).sqrt()
        } else {
            0.0
        };
        Ok((mean, stderr))
    }
}

/// Probability of each coalition size `0..=cap` when one size-`j`
/// subset of the `pool_len` free arms carries weight `j!(n-j-1)!`.
/// Computed through the ratio of consecutive per-size totals,
/// `(pool_len - j + 1) / (n - j)`, so nothing overflows for large `n`.
/// With no arms forced in (`pool_len == n - 1`) every size is equally
/// likely.
fn coalition_size_weights(n: usize, pool_len: usize, cap: usize) -> Vec<f64> {
    let mut weights = Vec::with_capacity(cap + 1);
    let mut current = 1.0;
    for j in 0..=cap {
        if j > 0 {
            current *= (pool_len - j + 1) as f64 / (n - j) as f64;
        }
        weights.push(current);
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    weights
}

fn check_shapley_args_given(
    i: usize,
    n: usize,
    k_budget: usize,
    chosen: &[usize],
) -> Result<()> {
    check_shapley_args(i, n, k_budget)?;
    if chosen.len() >= k_budget {
        return Err(Error::InvalidParameter {
            name: "chosen",
            message: format!(
                "{} arms already chosen leaves no budget for arm {i}",
                chosen.len()
            ),
        });
    }
    for (pos, &j) in chosen.iter().enumerate() {
        if j >= n || j == i || chosen[..pos].contains(&j) {
            return Err(Error::InvalidParameter {
                name: "chosen",
                message: format!(
                    "entry {j} is out of range, repeated, or equal to the queried arm"
                ),
            });
        }
    }
    Ok(())
}

fn check_shapley_args(i: usize, n: usize, k_budget: usize) -> Result<()> {
    if k_budget == 0 || k_budget > n {
        return Err(Error::InvalidParameter {
            name: "k_budget",
            message: format!("must be in [1, {n}], got {k_budget}"),
        });
    }
    if i >= n {
        return Err(Error::InvalidParameter {
            name: "arm",
            message: format!("index {i} out of range for {n} arms"),
        });
    }
    Ok(())
}

/// Visits every `size`-element combination of `items` in lexicographic
/// order. Plain index odometer; no allocation per combination.
fn for_each_combination(
    items: &[usize],
    size: usize,
    visit: &mut dyn FnMut(&[usize]),
) -> Result<()> {
    if size > items.len() {
        return Err(Error::InvalidParameter {
            name: "size",
            message: "combination size exceeds the pool".into(),
        });
    }
    if size == 0 {
        visit(&[]);
        return Ok(());
    }
    let mut idx: Vec<usize> = (0..size).collect();
    let mut buf = vec![0usize; size];
    loop {
        for (b, &ix) in buf.iter_mut().zip(idx.iter()) {
            *b = items[ix];
        }
        visit(&buf);
        // advance the odometer from the right
        let mut pos = size;
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] <= items.len() - (size - pos) {
                for later in pos + 1..size {
                    idx[later] = idx[later - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Where a structure check failed and by how much.
#[derive(Debug, Clone)]
pub struct StructureCounterexample {
    pub property: StructureProperty,
    pub s: Vec<usize>,
    pub a: Vec<u8>,
    pub arm_i: usize,
    pub arm_j: Option<usize>,
    pub violation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureProperty {
    Monotone,
    Submodular,
}

/// Randomly probes monotonicity (adding a pull never loses reward) and
/// diminishing returns (a pull helps less on top of a bigger coalition).
/// Returns the first counterexample, or `None` if every probe passed.
pub fn check_monotone_submodular(
    spec: &GlobalRewardSpec,
    n: usize,
    state_count: usize,
    samples: usize,
    rng: &mut Stream,
) -> Result<Option<StructureCounterexample>> {
    const TOL: f64 = 1e-9;
    for _ in 0..samples {
        let s: Vec<usize> = (0..n).map(|_| rng.random_range(0..state_count)).collect();
        let mut a: Vec<u8> = (0..n).map(|_| u8::from(rng.random::<bool>())).collect();
        let i = rng.random_range(0..n);
        a[i] = 0;
        let mut a_i = a.clone();
        a_i[i] = 1;
        let gain_i = spec.evaluate(&s, &a_i)? - spec.evaluate(&s, &a)?;
        if gain_i < -TOL {
            return Ok(Some(StructureCounterexample {
                property: StructureProperty::Monotone,
                s,
                a,
                arm_i: i,
                arm_j: None,
                violation: -gain_i,
            }));
        }
        if n < 2 {
            continue;
        }
        let j = loop {
            let j = rng.random_range(0..n);
            if j != i {
                break j;
            }
        };
        a[j] = 0;
        a_i[j] = 0;
        let mut a_j = a.clone();
        a_j[j] = 1;
        let mut a_ij = a_i.clone();
        a_ij[j] = 1;
        let lhs = spec.evaluate(&s, &a_i)? - spec.evaluate(&s, &a)?;
        let rhs = spec.evaluate(&s, &a_ij)? - spec.evaluate(&s, &a_j)?;
        if lhs < rhs - TOL {
            return Ok(Some(StructureCounterexample {
                property: StructureProperty::Submodular,
                s,
                a,
                arm_i: i,
                arm_j: Some(j),
                violation: rhs - lhs,
            }));
        }
    }
    Ok(None)
}

/// How the pessimistic per-arm values of a [`MarginalTable`] are computed.
#[derive(Debug, Clone, Copy)]
pub enum UEstimator {
    Exact,
    MonteCarlo { n_samples: usize, seed: u64 },
}

/// Per-arm, per-state summaries of the global reward: optimistic lone-pull
/// values `p` and pessimistic coalition values `u` (with standard errors
/// when estimated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalTable {
    pub p: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub u_stderr: Option<Vec<Vec<f64>>>,
}

impl MarginalTable {
    pub fn compute(inst: &RmabgInstance, estimator: UEstimator) -> Result<Self> {
        let n = inst.n_arms;
        let sc = inst.state_count;
        let spec = &inst.global_reward;
        let mut p = vec![vec![0.0; sc]; n];
        for (i, row) in p.iter_mut().enumerate() {
            for (s_i, slot) in row.iter_mut().enumerate() {
                *slot = spec.marginal_reward(i, s_i, n, sc)?;
            }
        }
        let mut u = vec![vec![0.0; sc]; n];
        let mut u_stderr = None;
        match estimator {
            UEstimator::Exact => {
                for (i, row) in u.iter_mut().enumerate() {
                    for (s_i, slot) in row.iter_mut().enumerate() {
                        *slot = spec.shapley_exact(i, s_i, n, sc, inst.budget)?;
                    }
                }
            }
            UEstimator::MonteCarlo { n_samples, seed } => {
                let mut err = vec![vec![0.0; sc]; n];
                for i in 0..n {
                    for s_i in 0..sc {
                        let mut rng = derive_stream(
                            seed,
                            &[label_hash("shapley"), i as u64, s_i as u64],
                        );
                        let (est, se) = spec.shapley_mc(
                            i, s_i, n, sc, inst.budget, n_samples, &mut rng,
                        )?;
                        u[i][s_i] = est;
                        err[i][s_i] = se;
                    }
                }
                u_stderr = Some(err);
            }
        }
        Ok(MarginalTable { p, u, u_stderr })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::coverage_example_instance;
    use crate::rng::derive_stream;

    #[test]
    fn linear_evaluates() {
        let spec = GlobalRewardSpec::linear(vec![0.5, 0.25]);
        assert_eq!(spec.evaluate(&[1, 1], &[1, 0]).unwrap(), 0.5);
        assert_eq!(spec.evaluate(&[1, 1], &[1, 1]).unwrap(), 0.75);
        assert_eq!(spec.evaluate(&[0, 1], &[1, 1]).unwrap(), 0.25);
    }

    #[test]
    fn probability_evaluates() {
        let spec = GlobalRewardSpec::probability(vec![0.5, 0.5]);
        let r = spec.evaluate(&[1, 1], &[1, 1]).unwrap();
        assert!((r - 0.75).abs() < 1e-12);
        assert_eq!(spec.evaluate(&[1, 1], &[0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn max_evaluates() {
        let spec = GlobalRewardSpec::max_of(vec![0.3, 0.8]);
        assert_eq!(spec.evaluate(&[1, 1], &[1, 1]).unwrap(), 0.8);
        assert_eq!(spec.evaluate(&[1, 0], &[1, 1]).unwrap(), 0.3);
    }

    #[test]
    fn subset_counts_union() {
        let spec = GlobalRewardSpec::subset(5, vec![vec![0, 1, 2], vec![2, 3]]);
        assert_eq!(spec.evaluate(&[1, 1], &[1, 1]).unwrap(), 4.0);
        assert_eq!(spec.evaluate(&[1, 0], &[1, 1]).unwrap(), 3.0);
        assert_eq!(spec.evaluate(&[1, 1], &[0, 1]).unwrap(), 2.0);
    }

    #[test]
    fn table_lookup_and_missing_entry() {
        let spec = GlobalRewardSpec::Table {
            entries: vec![TableEntry {
                s: vec![1, 1],
                a: vec![1, 0],
                r: 2.5,
            }],
        };
        assert_eq!(spec.evaluate(&[1, 1], &[1, 0]).unwrap(), 2.5);
        assert!(matches!(
            spec.evaluate(&[0, 0], &[1, 0]),
            Err(Error::MissingTableEntry)
        ));
    }

    #[test]
    fn marginal_reward_of_coverage_sets() {
        let inst = coverage_example_instance();
        let spec = &inst.global_reward;
        let p: Vec<f64> = (0..4)
            .map(|i| spec.marginal_reward(i, 1, 4, 2).unwrap())
            .collect();
        assert_eq!(p, vec![3.0, 3.0, 2.0, 2.0]);
        for i in 0..4 {
            assert_eq!(spec.marginal_reward(i, 0, 4, 2).unwrap(), 0.0);
        }
    }

    #[test]
    fn shapley_exact_two_arm_max() {
        // Both arms worth 1, budget 2: the lone-arrival case contributes 1,
        // arriving second contributes 0, each with weight 1/2.
        let spec = GlobalRewardSpec::max_of(vec![1.0, 1.0]);
        let u = spec.shapley_exact(0, 1, 2, 2, 2).unwrap();
        assert!((u - 0.5).abs() < 1e-12);
    }

    #[test]
    fn shapley_exact_single_arm_equals_marginal() {
        let spec = GlobalRewardSpec::probability(vec![0.35]);
        let u = spec.shapley_exact(0, 1, 1, 2, 1).unwrap();
        let p = spec.marginal_reward(0, 1, 1, 2).unwrap();
        assert!((u - p).abs() < 1e-12);
    }

    #[test]
    fn shapley_exact_coverage_example_values() {
        let inst = coverage_example_instance();
        let spec = &inst.global_reward;
        let u: Vec<f64> = (0..4)
            .map(|i| spec.shapley_exact(i, 1, 4, 2, 2).unwrap())
            .collect();
        let expected = [2.0, 2.0, 4.0 / 3.0, 5.0 / 3.0];
        for (got, want) in u.iter().zip(expected.iter()) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn shapley_exact_matches_permutation_sum() {
        // Independent oracle: raw truncated permutation weights
        // |A|!(n-|A|-1)!/(n!/(n-k)!), renormalized by their sum afterward.
        let spec = GlobalRewardSpec::probability(vec![0.7, 0.4, 0.9, 0.2, 0.55]);
        let (n, k) = (5, 3);
        let i = 0;
        let comp = vec![1usize; n];
        let others: Vec<usize> = (1..n).collect();
        let fact = |x: usize| (1..=x).map(|v| v as f64).product::<f64>();
        let denom = fact(n) / fact(n - k);
        let mut total = 0.0;
        let mut wsum = 0.0;
        for mask in 0u32..(1 << others.len()) {
            let size = mask.count_ones() as usize;
            if size > k - 1 {
                continue;
            }
            let mut base = vec![0u8; n];
            for (bit, &arm) in others.iter().enumerate() {
                if mask >> bit & 1 == 1 {
                    base[arm] = 1;
                }
            }
            let mut with_i = base.clone();
            with_i[i] = 1;
            let w = fact(size) * fact(n - size - 1) / denom;
            total += w
                * (spec.evaluate(&comp, &with_i).unwrap()
                    - spec.evaluate(&comp, &base).unwrap());
            wsum += w;
        }
        let oracle = total / wsum;
        let got = spec.shapley_exact(i, 1, n, 2, k).unwrap();
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    }

    #[test]
    fn shapley_linear_kind_equals_marginal() {
        let spec = GlobalRewardSpec::linear(vec![0.3, 0.6, 0.2, 0.9]);
        for i in 0..4 {
            for s_i in 0..2 {
                let u = spec.shapley_exact(i, s_i, 4, 2, 2).unwrap();
                let p = spec.marginal_reward(i, s_i, 4, 2).unwrap();
                assert!((u - p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shapley_mc_tracks_exact_on_coverage_sets() {
        let inst = coverage_example_instance();
        let spec = &inst.global_reward;
        let mut rng = derive_stream(3, &[0]);
        let (est, se) = spec.shapley_mc(0, 1, 4, 2, 2, 4000, &mut rng).unwrap();
        let exact = spec.shapley_exact(0, 1, 4, 2, 2).unwrap();
        assert!(
            (est - exact).abs() <= 3.0 * se.max(1e-12),
            "est {est} exact {exact} se {se}"
        );
    }

    #[test]
    fn shapley_mc_rejects_zero_samples() {
        let spec = GlobalRewardSpec::linear(vec![1.0]);
        let mut rng = derive_stream(0, &[0]);
        assert!(spec.shapley_mc(0, 1, 1, 2, 1, 0, &mut rng).is_err());
    }

    #[test]
    fn structure_check_passes_closed_forms() {
        let mut rng = derive_stream(5, &[1]);
        for spec in [
            GlobalRewardSpec::linear(vec![0.2, 0.8, 0.5]),
            GlobalRewardSpec::probability(vec![0.2, 0.8, 0.5]),
            GlobalRewardSpec::max_of(vec![0.2, 0.8, 0.5]),
            GlobalRewardSpec::subset(6, vec![vec![0, 1], vec![1, 2], vec![3]]),
        ] {
            let verdict = check_monotone_submodular(&spec, 3, 2, 2000, &mut rng).unwrap();
            assert!(verdict.is_none(), "{spec:?} flagged {verdict:?}");
        }
    }

    #[test]
    fn structure_check_flags_supermodular_table() {
        // Two arms together worth more than their parts.
        let mut entries = Vec::new();
        for s0 in 0..2usize {
            for s1 in 0..2usize {
                for a0 in 0..2u8 {
                    for a1 in 0..2u8 {
                        let r = match (a0, a1) {
                            (1, 1) => 3.0,
                            (1, 0) | (0, 1) => 1.0,
                            _ => 0.0,
                        };
                        entries.push(TableEntry {
                            s: vec![s0, s1],
                            a: vec![a0, a1],
                            r,
                        });
                    }
                }
            }
        }
        let spec = GlobalRewardSpec::Table { entries };
        let mut rng = derive_stream(5, &[2]);
        let found = check_monotone_submodular(&spec, 2, 2, 500, &mut rng)
            .unwrap()
            .expect("supermodular table must be flagged");
        assert_eq!(found.property, StructureProperty::Submodular);
    }

    #[test]
    fn disjoint_subsets_are_exactly_modular() {
        let spec = GlobalRewardSpec::subset(9, vec![vec![0, 1, 2], vec![3, 4, 5], vec![6, 7]]);
        let s = vec![1usize; 3];
        // gain of arm 0 alone vs on top of arm 1 must match exactly
        let g_alone = spec.evaluate(&s, &[1, 0, 0]).unwrap() - spec.evaluate(&s, &[0, 0, 0]).unwrap();
        let g_on_top = spec.evaluate(&s, &[1, 1, 0]).unwrap() - spec.evaluate(&s, &[0, 1, 0]).unwrap();
        assert_eq!(g_alone, g_on_top);
    }

    #[test]
    fn marginal_table_invariants_on_coverage_example() {
        let inst = coverage_example_instance();
        let table = MarginalTable::compute(&inst, UEstimator::Exact).unwrap();
        for i in 0..4 {
            for s_i in 0..2 {
                assert!(table.u[i][s_i] >= -1e-12);
                assert!(table.p[i][s_i] >= table.u[i][s_i] - 1e-12);
            }
        }
    }

    #[test]
    fn marginal_table_mc_is_deterministic_per_seed() {
        let inst = coverage_example_instance();
        let est = UEstimator::MonteCarlo {
            n_samples: 200,
            seed: 42,
        };
        let a = MarginalTable::compute(&inst, est).unwrap();
        let b = MarginalTable::compute(&inst, est).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn table_kind_shapley_enumerates_completions() {
        // A table where the gain of arm 0 depends on arm 1's state: the
        // pessimistic completion must pick the smaller gain.
        let mut entries = Vec::new();
        for s1 in 0..2usize {
            for a0 in 0..2u8 {
                for a1 in 0..2u8 {
                    // gain of pulling arm 0: 2 when s1=0, 1 when s1=1
                    let r = a0 as f64 * if s1 == 0 { 2.0 } else { 1.0 }
                        + a1 as f64 * 0.5 * s1 as f64;
                    entries.push(TableEntry {
                        s: vec![1, s1],
                        a: vec![a0, a1],
                        r,
                    });
                }
            }
            for a0 in 0..2u8 {
                for a1 in 0..2u8 {
                    let r = a1 as f64 * 0.5 * s1 as f64;
                    entries.push(TableEntry {
                        s: vec![0, s1],
                        a: vec![a0, a1],
                        r,
                    });
                }
            }
        }
        let spec = GlobalRewardSpec::Table { entries };
        // k_budget = 1: u = min over completions of the lone-pull reward
        let u = spec.shapley_exact(0, 1, 2, 2, 1).unwrap();
        assert!((u - 1.0).abs() < 1e-12);
        // p takes the optimistic completion instead
        let p = spec.marginal_reward(0, 1, 2, 2).unwrap();
        assert!((p - 2.0).abs() < 1e-12);
    }

    #[test]
    fn size_weights_uniform_without_forced_pulls() {
        let w = coalition_size_weights(5, 4, 2);
        for x in &w {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
        // n = 4, k = 3, one arm forced: totals 1*0!*3! = 6 and 2*1!*2! = 4
        let w = coalition_size_weights(4, 2, 1);
        assert!((w[0] - 0.6).abs() < 1e-12);
        assert!((w[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn conditioned_exact_matches_truncated_permutation_oracle() {
        // Direct evaluation with factorial weights for a small instance:
        // value = sum over subsets a of the free arms, |a| <= cap, of
        // |a|!(n-|a|-1)! * gain(a + chosen) / Z.
        let m = vec![0.3, 0.9, 0.5, 0.7, 0.2];
        let spec = GlobalRewardSpec::probability(m);
        let (n, sc, k) = (5usize, 2usize, 3usize);
        let chosen = [2usize];
        let i = 0usize;
        let factorial = |x: usize| (1..=x).map(|v| v as f64).product::<f64>();
        let comp = vec![1usize; n];
        let free: Vec<usize> = (0..n).filter(|&j| j != i && j != chosen[0]).collect();
        let mut num = 0.0;
        let mut z = 0.0;
        for mask in 0..(1u32 << free.len()) {
            let picked: Vec<usize> = free
                .iter()
                .enumerate()
                .filter(|(b, _)| mask >> b & 1 == 1)
                .map(|(_, &j)| j)
                .collect();
            if picked.len() > k - 1 - chosen.len() {
                continue;
            }
            let weight = factorial(picked.len()) * factorial(n - picked.len() - 1);
            let mut base = vec![0u8; n];
            base[chosen[0]] = 1;
            for &j in &picked {
                base[j] = 1;
            }
            let mut with_i = base.clone();
            with_i[i] = 1;
            num += weight
                * (spec.evaluate(&comp, &with_i).unwrap()
                    - spec.evaluate(&comp, &base).unwrap());
            z += weight;
        }
        let oracle = num / z;
        let got = spec
            .shapley_exact_given(i, 1, n, sc, k, &chosen)
            .unwrap();
        assert!((got - oracle).abs() < 1e-12, "got {got}, oracle {oracle}");
    }

    #[test]
    fn conditioned_exact_with_no_forced_pulls_matches_unconditioned() {
        let spec = GlobalRewardSpec::subset(
            4,
            vec![vec![0, 1, 2], vec![0, 1, 2], vec![0, 1], vec![2, 3]],
        );
        for i in 0..4 {
            let a = spec.shapley_exact(i, 1, 4, 2, 2).unwrap();
            let b = spec.shapley_exact_given(i, 1, 4, 2, 2, &[]).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conditioned_gain_is_zero_when_sets_overlap_fully() {
        // Arm 1's set is identical to arm 0's, so once arm 0 is pulled
        // the remaining budget (zero coalitions) leaves no gain at all.
        let spec = GlobalRewardSpec::subset(
            4,
            vec![vec![0, 1, 2], vec![0, 1, 2], vec![0, 1], vec![2, 3]],
        );
        let g = spec.shapley_exact_given(1, 1, 4, 2, 2, &[0]).unwrap();
        assert!(g.abs() < 1e-12);
        // Arm 3 still contributes element 3 on top of arm 0's set.
        let g = spec.shapley_exact_given(3, 1, 4, 2, 2, &[0]).unwrap();
        assert!((g - 1.0).abs() < 1e-12);
    }

    #[test]
    fn conditioned_mc_agrees_with_conditioned_exact() {
        let m = vec![0.3, 0.9, 0.5, 0.7, 0.2];
        let spec = GlobalRewardSpec::probability(m);
        let exact = spec.shapley_exact_given(0, 1, 5, 2, 3, &[2]).unwrap();
        let mut rng = crate::rng::derive_stream(77, &[1]);
        let (mc, se) = spec
            .shapley_mc_given(0, 1, 5, 2, 3, &[2], 20_000, &mut rng)
            .unwrap();
        assert!(
            (mc - exact).abs() < 5.0 * se.max(1e-4),
            "mc {mc}, exact {exact}, se {se}"
        );
    }

    #[test]
    fn conditioned_args_are_validated() {
        let spec = GlobalRewardSpec::linear(vec![1.0, 1.0, 1.0]);
        // chosen exhausts the budget
        assert!(spec.shapley_exact_given(0, 1, 3, 2, 2, &[1]).is_ok());
        assert!(spec.shapley_exact_given(0, 1, 3, 2, 1, &[1]).is_err());
        // chosen contains the queried arm
        assert!(spec.shapley_exact_given(0, 1, 3, 2, 3, &[0]).is_err());
        // duplicate entry
        assert!(spec.shapley_exact_given(0, 1, 3, 2, 3, &[1, 1]).is_err());
    }
}
