//! Tree search over this round's pull set, guided by per-arm index
//! tables, plus the multi-round baseline variant that samples chance
//! transitions between rounds.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{ActionVector, RmabgInstance, StateVector};
use crate::reward::{MarginalTable, UEstimator};
use crate::rng::Stream;
use crate::whittle::{
    linear_whittle_table, shapley_whittle_table_from, value_iteration_subsidized,
    weighted_arm, IndexTable, IterativeFlavor, VI_MAX_ITER, VI_TOL,
};

/// Everything the round tree search needs precomputed: the index table
/// that orders unexplored children and each arm's zero-subsidy value
/// function under the flavor's weighted pull bonus.
#[derive(Debug, Clone)]
pub struct MctsContext {
    pub flavor: IterativeFlavor,
    pub table: IndexTable,
    /// `v0[i][s]`: value of arm `i` in state `s` when pulls are free.
    pub v0: Vec<Vec<f64>>,
}

/// Builds the per-arm artifacts for [`mcts_policy_search`]. The Shapley
/// flavor estimates coalition values with `estimator`; the Linear flavor
/// enumerates its optimistic bonuses exactly.
pub fn prepare_mcts_context(
    inst: &RmabgInstance,
    flavor: IterativeFlavor,
    estimator: UEstimator,
) -> Result<MctsContext> {
    let (n, sc) = (inst.n_arms, inst.state_count);
    let scale = 1.0 - inst.alpha;
    let (table, bonus) = match flavor {
        IterativeFlavor::Linear => {
            let mut bonus = vec![vec![0.0; sc]; n];
            for (i, row) in bonus.iter_mut().enumerate() {
                for (s, b) in row.iter_mut().enumerate() {
                    *b = scale * inst.global_reward.marginal_reward(i, s, n, sc)?;
                }
            }
            (linear_whittle_table(inst)?, bonus)
        }
        IterativeFlavor::Shapley => {
            let marginals = MarginalTable::compute(inst, estimator)?;
            let bonus = marginals
                .u
                .iter()
                .map(|row| row.iter().map(|&u| scale * u).collect())
                .collect();
            (shapley_whittle_table_from(inst, &marginals)?, bonus)
        }
    };
    let mut v0 = Vec::with_capacity(n);
    for (i, arm) in inst.arms.iter().enumerate() {
        let weighted = weighted_arm(arm, inst.alpha);
        let sq = value_iteration_subsidized(
            &weighted, &bonus[i], 0.0, inst.gamma, VI_TOL, VI_MAX_ITER,
        )?;
        v0.push((0..sc).map(|s| sq.value(s)).collect());
    }
    Ok(MctsContext { flavor, table, v0 })
}

struct Node {
    /// Arm on the incoming edge; the root carries a sentinel.
    arm: usize,
    parent: usize,
    depth: usize,
    children: Vec<usize>,
    /// Candidate arms not yet expanded, best index first.
    unexplored: Vec<usize>,
    v: f64,
    n: u32,
}

const ROOT: usize = 0;
const NO_ARM: usize = usize::MAX;

fn path_arms(nodes: &[Node], mut id: usize) -> Vec<usize> {
    let mut pulls = Vec::with_capacity(nodes[id].depth);
    while id != ROOT {
        pulls.push(nodes[id].arm);
        id = nodes[id].parent;
    }
    pulls.reverse();
    pulls
}

/// Whether a candidate (mean, action) beats the incumbent. Means within
/// a relative 1e-9 count as tied, because averaging n identical backups
/// drifts by an ulp; ties go to the smaller action vector.
fn beats<T: Ord + ?Sized>(mean: f64, action: &T, best_mean: f64, best_action: &T) -> bool {
    let tol = 1e-9 * (1.0 + best_mean.abs());
    if mean > best_mean + tol {
        return true;
    }
    mean >= best_mean - tol && action < best_action
}

/// One round's reward for pulling `pulls` in joint state `s`, plus every
/// arm's expected zero-subsidy continuation. Equivalent to summing the
/// flavor's per-arm action values and then stripping the double-counted
/// immediate bonuses and rewards.
fn leaf_value(
    inst: &RmabgInstance,
    ctx: &MctsContext,
    s: &StateVector,
    pulls: &[usize],
) -> Result<f64> {
    let a = ActionVector::from_pulls(inst.n_arms, pulls);
    let mut total = inst.total_reward(s, &a)?;
    for i in 0..inst.n_arms {
        let row = &inst.arms[i].transitions[s.0[i]][a.0[i] as usize];
        total += inst.gamma
            * row
                .iter()
                .zip(&ctx.v0[i])
                .map(|(p, v)| p * v)
                .sum::<f64>();
    }
    Ok(total)
}

fn sorted_candidates(
    ctx: &MctsContext,
    s: &StateVector,
    excluded: &[usize],
    n: usize,
) -> Vec<usize> {
    let mut arms: Vec<usize> = (0..n).filter(|i| !excluded.contains(i)).collect();
    arms.sort_by(|&a, &b| {
        ctx.table.w[b][s.0[b]]
            .total_cmp(&ctx.table.w[a][s.0[a]])
            .then(a.cmp(&b))
    });
    arms
}

/// Builds a depth-K tree of pull sets for the current round and returns
/// the most promising one. Each iteration descends through explored
/// nodes by the UCT score, then expands unexplored children to a leaf
/// (random with probability `epsilon`, otherwise highest index first),
/// scores the leaf, and backpropagates. The answer is the visited leaf
/// with the best mean value, ties resolved toward the lexicographically
/// smallest action vector.
#[allow(clippy::too_many_arguments)]
pub fn mcts_policy_search(
    inst: &RmabgInstance,
    s: &StateVector,
    ctx: &MctsContext,
    iterations: usize,
    c: f64,
    epsilon: f64,
    classic_uct: bool,
    rng: &mut Stream,
) -> Result<ActionVector> {
    if iterations == 0 {
        return Err(Error::InvalidParameter {
            name: "iterations",
            message: "tree search needs at least one iteration".into(),
        });
    }
    let (n, k) = (inst.n_arms, inst.budget);
    let mut nodes = vec![Node {
        arm: NO_ARM,
        parent: ROOT,
        depth: 0,
        children: Vec::new(),
        unexplored: sorted_candidates(ctx, s, &[], n),
        v: 0.0,
        n: 0,
    }];
    let mut leaves: Vec<usize> = Vec::new();
    let mut value_cache: HashMap<u64, f64> = HashMap::new();
    for _ in 0..iterations {
        let mut cur = ROOT;
        loop {
            if nodes[cur].depth == k {
                break;
            }
            if !nodes[cur].unexplored.is_empty() {
                while nodes[cur].depth < k {
                    let pos = if rng.random::<f64>() < epsilon {
                        rng.random_range(0..nodes[cur].unexplored.len())
                    } else {
                        0
                    };
                    let arm = nodes[cur].unexplored.remove(pos);
                    let mut path = path_arms(&nodes, cur);
                    path.push(arm);
                    let child = Node {
                        arm,
                        parent: cur,
                        depth: nodes[cur].depth + 1,
                        children: Vec::new(),
                        unexplored: if nodes[cur].depth + 1 < k {
                            sorted_candidates(ctx, s, &path, n)
                        } else {
                            Vec::new()
                        },
                        v: 0.0,
                        n: 0,
                    };
                    nodes.push(child);
                    let id = nodes.len() - 1;
                    nodes[cur].children.push(id);
                    cur = id;
                }
                leaves.push(cur);
                break;
            }
            let np = nodes[cur].n as f64;
            let mut best = nodes[cur].children[0];
            let mut best_score = f64::NEG_INFINITY;
            for &ch in &nodes[cur].children {
                let nc = nodes[ch].n as f64;
                let explore = if classic_uct {
                    (np.ln() / nc).sqrt()
                } else {
                    (np / nc).sqrt()
                };
                let score = nodes[ch].v / nc + c * explore;
                if score > best_score {
                    best_score = score;
                    best = ch;
                }
            }
            cur = best;
        }
        let pulls = path_arms(&nodes, cur);
        let mask = pulls.iter().fold(0u64, |m, &i| m | 1 << i);
        let reward = match value_cache.get(&mask) {
            Some(&r) => r,
            None => {
                let r = leaf_value(inst, ctx, s, &pulls)?;
                value_cache.insert(mask, r);
                r
            }
        };
        let mut up = cur;
        loop {
            nodes[up].v += reward;
            nodes[up].n += 1;
            if up == ROOT {
                break;
            }
            up = nodes[up].parent;
        }
    }
    let mut best: Option<(f64, ActionVector)> = None;
    for &leaf in &leaves {
        let mean = nodes[leaf].v / nodes[leaf].n as f64;
        let action = ActionVector::from_pulls(n, &path_arms(&nodes, leaf));
        let better = match &best {
            None => true,
            Some((bm, ba)) => beats(mean, &action.0, *bm, &ba.0),
        };
        if better {
            best = Some((mean, action));
        }
    }
    Ok(best.expect("at least one leaf was visited").1)
}

struct RoundNode {
    arm: usize,
    parent: usize,
    depth: usize,
    children: Vec<usize>,
    unexplored: Vec<usize>,
    v: f64,
    n: u32,
    /// Joint state in which the current round's picks happen; resampled
    /// only when a node closes a round, then cached for every revisit.
    state: StateVector,
    /// Discounted reward of the rounds completed strictly above.
    acc: f64,
    /// Picks so far in the current, incomplete round.
    round: Vec<usize>,
}

/// Multi-round tree search baseline: every pick adds one arm, every
/// `budget` picks close a round whose reward is banked and whose joint
/// successor is sampled once and cached on the node. Rollouts pick
/// uniformly at random down to `depth` total picks, closing rounds the
/// same way with fresh samples. Returns the first completed round of
/// the best visited depth-`budget` node; if the iteration budget never
/// completed a round in the tree, the deepest partial round is topped up
/// with the lowest free arm ids.
pub fn vanilla_mcts(
    inst: &RmabgInstance,
    s: &StateVector,
    iterations: usize,
    depth: usize,
    rng: &mut Stream,
) -> Result<ActionVector> {
    let (n, k) = (inst.n_arms, inst.budget);
    if iterations == 0 {
        return Err(Error::InvalidParameter {
            name: "iterations",
            message: "tree search needs at least one iteration".into(),
        });
    }
    if depth < k {
        return Err(Error::InvalidParameter {
            name: "depth",
            message: format!("must cover at least one round of {k} picks, got {depth}"),
        });
    }
    let mut nodes = vec![RoundNode {
        arm: NO_ARM,
        parent: ROOT,
        depth: 0,
        children: Vec::new(),
        unexplored: (0..n).collect(),
        v: 0.0,
        n: 0,
        state: s.clone(),
        acc: 0.0,
        round: Vec::new(),
    }];
    for _ in 0..iterations {
        // Selection: UCT through fully expanded nodes.
        let mut cur = ROOT;
        while nodes[cur].unexplored.is_empty() && nodes[cur].depth < depth {
            let np = nodes[cur].n as f64;
            let mut best = nodes[cur].children[0];
            let mut best_score = f64::NEG_INFINITY;
            for &ch in &nodes[cur].children {
                let nc = nodes[ch].n as f64;
                let score = nodes[ch].v / nc + 2.0 * (np.ln() / nc).sqrt();
                if score > best_score {
                    best_score = score;
                    best = ch;
                }
            }
            cur = best;
        }
        // Expansion: one uniformly random unexplored child.
        if nodes[cur].depth < depth {
            let pos = rng.random_range(0..nodes[cur].unexplored.len());
            let arm = nodes[cur].unexplored.remove(pos);
            let child = expand_round_node(inst, &nodes, cur, arm, rng)?;
            nodes.push(child);
            let id = nodes.len() - 1;
            nodes[cur].children.push(id);
            cur = id;
        }
        // Rollout: uniform picks to the depth cap, fresh chance samples.
        let mut value = nodes[cur].acc;
        {
            let mut sim_state = nodes[cur].state.clone();
            let mut sim_round = nodes[cur].round.clone();
            let mut d = nodes[cur].depth;
            while d < depth {
                let free: Vec<usize> =
                    (0..n).filter(|i| !sim_round.contains(i)).collect();
                sim_round.push(free[rng.random_range(0..free.len())]);
                d += 1;
                if sim_round.len() == k {
                    let a = ActionVector::from_pulls(n, &sim_round);
                    let r = inst.total_reward(&sim_state, &a)?;
                    value += inst.gamma.powi((d / k) as i32 - 1) * r;
                    sim_state = inst.sample_next_state(&sim_state, &a, rng);
                    sim_round.clear();
                }
            }
            if !sim_round.is_empty() {
                let a = ActionVector::from_pulls(n, &sim_round);
                let r = inst.total_reward(&sim_state, &a)?;
                value += inst.gamma.powi((d / k) as i32) * r;
            }
        }
        // Backpropagation.
        let mut up = cur;
        loop {
            nodes[up].v += value;
            nodes[up].n += 1;
            if up == ROOT {
                break;
            }
            up = nodes[up].parent;
        }
    }
    // Best completed first round, ties toward the smallest action. Any
    // node at depth <= k sits inside the first round, so its pulls are
    // its whole path from the root.
    let mut best: Option<(f64, ActionVector)> = None;
    for id in 0..nodes.len() {
        if nodes[id].depth != k || nodes[id].n == 0 {
            continue;
        }
        let mean = nodes[id].v / nodes[id].n as f64;
        let action = ActionVector::from_pulls(n, &round_path(&nodes, id));
        let better = match &best {
            None => true,
            Some((bm, ba)) => beats(mean, &action.0, *bm, &ba.0),
        };
        if better {
            best = Some((mean, action));
        }
    }
    if let Some((_, action)) = best {
        return Ok(action);
    }
    // No round completed inside the tree: top up the best deepest path.
    let deepest = nodes.iter().map(|nd| nd.depth).max().unwrap_or(0);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for id in 0..nodes.len() {
        if nodes[id].depth != deepest || nodes[id].n == 0 {
            continue;
        }
        let mean = nodes[id].v / nodes[id].n as f64;
        let pulls = round_path(&nodes, id);
        let better = match &best {
            None => true,
            Some((bm, bp)) => beats(mean, pulls.as_slice(), *bm, bp.as_slice()),
        };
        if better {
            best = Some((mean, pulls));
        }
    }
    let mut pulls = best.expect("the root always gains a child").1;
    for i in 0..n {
        if pulls.len() == k {
            break;
        }
        if !pulls.contains(&i) {
            pulls.push(i);
        }
    }
    Ok(ActionVector::from_pulls(n, &pulls))
}

fn expand_round_node(
    inst: &RmabgInstance,
    nodes: &[RoundNode],
    parent: usize,
    arm: usize,
    rng: &mut Stream,
) -> Result<RoundNode> {
    let (n, k) = (inst.n_arms, inst.budget);
    let p = &nodes[parent];
    let mut round = p.round.clone();
    round.push(arm);
    let mut state = p.state.clone();
    let mut acc = p.acc;
    let depth = p.depth + 1;
    if round.len() == k {
        let a = ActionVector::from_pulls(n, &round);
        let r = inst.total_reward(&state, &a)?;
        acc += inst.gamma.powi((depth / k) as i32 - 1) * r;
        state = inst.sample_next_state(&state, &a, rng);
        round.clear();
    }
    Ok(RoundNode {
        arm,
        parent,
        depth,
        children: Vec::new(),
        unexplored: (0..n).filter(|i| !round.contains(i)).collect(),
        v: 0.0,
        n: 0,
        state,
        acc,
        round,
    })
}

fn round_path(nodes: &[RoundNode], mut id: usize) -> Vec<usize> {
    let mut pulls = Vec::with_capacity(nodes[id].depth);
    while id != ROOT {
        pulls.push(nodes[id].arm);
        id = nodes[id].parent;
    }
    pulls.reverse();
    pulls
}
