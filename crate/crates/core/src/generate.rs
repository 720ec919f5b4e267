//! Instance construction: seeded synthetic generators, fixed reference
//! instances, and volunteer event-log ingestion.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::index::sample as index_sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArmModel, RmabgInstance};
use crate::reward::GlobalRewardSpec;
use crate::rng::{derive_stream, label_hash, Stream};

/// Coverage universe used by the subset reward sampler.
pub const SUBSET_UNIVERSE_DEFAULT: usize = 20;
/// Elements drawn per arm by the subset reward sampler.
pub const SUBSET_SET_SIZE_DEFAULT: usize = 6;

/// One arm's `|S| x |A| x |S|` transition table.
pub type Kernel = Vec<Vec<Vec<f64>>>;

fn uniform(rng: &mut Stream, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Samples 2-state kernels in which being engaged (s=1) and being pulled
/// both weakly raise the chance of landing engaged. `q` caps the baseline
/// idle-while-disengaged probability.
pub fn gen_transitions(n: usize, q: f64, rng: &mut Stream) -> Result<Vec<Kernel>> {
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidParameter {
            name: "q",
            message: format!("must be in [0, 1], got {q}"),
        });
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let p001 = uniform(rng, 0.0, q);
        let p101 = uniform(rng, p001, 1.0);
        let p011 = uniform(rng, p001, 1.0);
        let p111 = uniform(rng, p101.max(p011), 1.0);
        out.push(vec![
            vec![vec![1.0 - p001, p001], vec![1.0 - p011, p011]],
            vec![vec![1.0 - p101, p101], vec![1.0 - p111, p111]],
        ]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticRewardKind {
    Linear,
    Probability,
    Max,
    Subset,
}

impl SyntheticRewardKind {
    pub const ALL: [SyntheticRewardKind; 4] = [
        SyntheticRewardKind::Linear,
        SyntheticRewardKind::Probability,
        SyntheticRewardKind::Max,
        SyntheticRewardKind::Subset,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SyntheticRewardKind::Linear => "linear",
            SyntheticRewardKind::Probability => "probability",
            SyntheticRewardKind::Max => "max",
            SyntheticRewardKind::Subset => "subset",
        }
    }
}

impl FromStr for SyntheticRewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(SyntheticRewardKind::Linear),
            "probability" => Ok(SyntheticRewardKind::Probability),
            "max" => Ok(SyntheticRewardKind::Max),
            "subset" => Ok(SyntheticRewardKind::Subset),
            other => Err(Error::UnknownRewardKind(other.to_string())),
        }
    }
}

/// Samples reward parameters: magnitudes uniform in [0,1), or fixed-size
/// coverage sets drawn without replacement (stored sorted).
pub fn gen_reward(kind: SyntheticRewardKind, n: usize, rng: &mut Stream) -> GlobalRewardSpec {
    let draw_m = |rng: &mut Stream| (0..n).map(|_| rng.random::<f64>()).collect::<Vec<_>>();
    match kind {
        SyntheticRewardKind::Linear => GlobalRewardSpec::linear(draw_m(rng)),
        SyntheticRewardKind::Probability => GlobalRewardSpec::probability(draw_m(rng)),
        SyntheticRewardKind::Max => GlobalRewardSpec::max_of(draw_m(rng)),
        SyntheticRewardKind::Subset => {
            let sets = (0..n)
                .map(|_| {
                    let mut set: Vec<usize> =
                        index_sample(rng, SUBSET_UNIVERSE_DEFAULT, SUBSET_SET_SIZE_DEFAULT)
                            .into_iter()
                            .collect();
                    set.sort_unstable();
                    set
                })
                .collect();
            GlobalRewardSpec::subset(SUBSET_UNIVERSE_DEFAULT, sets)
        }
    }
}

/// Per-arm reward `R_i(s, a) = s / n` for every action.
pub fn engagement_reward_rows(n: usize, state_count: usize) -> Vec<Vec<f64>> {
    (0..state_count)
        .map(|s| vec![s as f64 / n as f64; 2])
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct SyntheticConfig {
    pub n_arms: usize,
    pub budget: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub q: f64,
    pub kind: SyntheticRewardKind,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_arms: 4,
            budget: 2,
            gamma: 0.9,
            alpha: 0.5,
            q: 0.5,
            kind: SyntheticRewardKind::Probability,
        }
    }
}

/// Full seeded instance: sampled kernels, sampled reward parameters, and
/// engagement per-arm rewards.
pub fn gen_instance(cfg: &SyntheticConfig, seed: u64) -> Result<RmabgInstance> {
    let mut rng = derive_stream(seed, &[label_hash("instance")]);
    let kernels = gen_transitions(cfg.n_arms, cfg.q, &mut rng)?;
    let global_reward = gen_reward(cfg.kind, cfg.n_arms, &mut rng);
    let arms = kernels
        .into_iter()
        .map(|transitions| ArmModel {
            transitions,
            per_arm_reward: engagement_reward_rows(cfg.n_arms, 2),
        })
        .collect();
    let inst = RmabgInstance {
        n_arms: cfg.n_arms,
        budget: cfg.budget,
        gamma: cfg.gamma,
        alpha: cfg.alpha,
        state_count: 2,
        arms,
        global_reward,
    };
    inst.validate()?;
    Ok(inst)
}

/// Coverage reward with a tunable linearization gap: `k` twin arms share
/// the prefix `{0..twin_size}`, the other `n-k` arms tile consecutive
/// `block_size` blocks from element 0. Per-arm lone values then misrank
/// the twins above the tiles whenever `twin_size > block_size`.
pub fn gen_theta_subsets(
    n: usize,
    k: usize,
    block_size: usize,
    twin_size: usize,
) -> Result<GlobalRewardSpec> {
    if k == 0 || k > n {
        return Err(Error::InvalidParameter {
            name: "k",
            message: format!("must be in [1, {n}], got {k}"),
        });
    }
    if block_size == 0 || block_size >= twin_size {
        return Err(Error::InvalidParameter {
            name: "block_size",
            message: format!("need 1 <= block_size < twin_size, got {block_size} vs {twin_size}"),
        });
    }
    let mut sets: Vec<Vec<usize>> = Vec::with_capacity(n);
    for _ in 0..k {
        sets.push((0..twin_size).collect());
    }
    for j in 0..n - k {
        sets.push((j * block_size..(j + 1) * block_size).collect());
    }
    let universe = twin_size.max((n - k) * block_size);
    Ok(GlobalRewardSpec::subset(universe, sets))
}

/// Raw ratio `twin_size / (k * block_size)`; may exceed 1, reporting clamps.
pub fn nominal_theta(k: usize, block_size: usize, twin_size: usize) -> f64 {
    twin_size as f64 / (k * block_size) as f64
}

/// Seeded kernels combined with the tunable-gap coverage reward; the
/// budget equals the twin count `k`.
#[allow(clippy::too_many_arguments)]
pub fn gen_theta_instance(
    n: usize,
    k: usize,
    block_size: usize,
    twin_size: usize,
    q: f64,
    gamma: f64,
    alpha: f64,
    seed: u64,
) -> Result<RmabgInstance> {
    let mut rng = derive_stream(seed, &[label_hash("instance")]);
    let kernels = gen_transitions(n, q, &mut rng)?;
    let global_reward = gen_theta_subsets(n, k, block_size, twin_size)?;
    let arms = kernels
        .into_iter()
        .map(|transitions| ArmModel {
            transitions,
            per_arm_reward: engagement_reward_rows(n, 2),
        })
        .collect();
    let inst = RmabgInstance {
        n_arms: n,
        budget: k,
        gamma,
        alpha,
        state_count: 2,
        arms,
        global_reward,
    };
    inst.validate()?;
    Ok(inst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversarialVariant {
    /// Budget forced to every arm, pure global max reward, all magnitudes 1.
    AllArms,
    /// Two unit-magnitude arms among duds; the provided budget is kept.
    TwoArms,
}

/// Trap instances where pulling an arm permanently disengages it (pull
/// lands in state 0, which absorbs) while idling preserves the state.
/// Ranking policies burn every valuable arm at once; sequencing wins.
pub fn adversarial_instance(
    n: usize,
    k: usize,
    gamma: f64,
    variant: AdversarialVariant,
) -> Result<RmabgInstance> {
    let kernel: Kernel = vec![
        vec![vec![1.0, 0.0], vec![1.0, 0.0]],
        vec![vec![0.0, 1.0], vec![1.0, 0.0]],
    ];
    let (budget, alpha, per_arm_reward, m) = match variant {
        AdversarialVariant::AllArms => (n, 0.0, vec![vec![0.0; 2]; 2], vec![1.0; n]),
        AdversarialVariant::TwoArms => {
            if n < 2 {
                return Err(Error::InvalidParameter {
                    name: "n",
                    message: "two-arm variant needs at least two arms".into(),
                });
            }
            let mut m = vec![0.0; n];
            m[0] = 1.0;
            m[1] = 1.0;
            (k, 0.5, engagement_reward_rows(n, 2), m)
        }
    };
    let arms = (0..n)
        .map(|_| ArmModel {
            transitions: kernel.clone(),
            per_arm_reward: per_arm_reward.clone(),
        })
        .collect();
    let inst = RmabgInstance {
        n_arms: n,
        budget,
        gamma,
        alpha,
        state_count: 2,
        arms,
        global_reward: GlobalRewardSpec::max_of(m),
    };
    inst.validate()?;
    Ok(inst)
}

/// Four-arm set-coverage instance with deterministic always-engaging
/// dynamics. Two twin arms cover `{0,1,2}` and two arms tile `{0..3}`,
/// so lone-pull values rank the twins first (3 per round) while the
/// optimal pair covers everything (4 per round).
pub fn coverage_example_instance() -> RmabgInstance {
    let kernel: Kernel = vec![vec![vec![0.0, 1.0]; 2]; 2];
    let arms = (0..4)
        .map(|_| ArmModel {
            transitions: kernel.clone(),
            per_arm_reward: vec![vec![0.0; 2]; 2],
        })
        .collect();
    RmabgInstance {
        n_arms: 4,
        budget: 2,
        gamma: 0.9,
        alpha: 0.0,
        state_count: 2,
        arms,
        global_reward: GlobalRewardSpec::subset(
            4,
            vec![vec![0, 1, 2], vec![0, 1, 2], vec![0, 1], vec![2, 3]],
        ),
    }
}

/// Which column of the event log plays the role of the pull when
/// estimating transition kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSource {
    /// Pull = notified flag of the arriving period (default).
    Notified,
    /// Pull = completion flag of the departing period (the alternative
    /// reading; leaves half the cells unobservable by construction).
    Completed,
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub action_source: ActionSource,
    pub cluster_count: usize,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            action_source: ActionSource::Notified,
            cluster_count: 100,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub volunteers_seen: usize,
    pub volunteers_retained: usize,
    pub volunteers_excluded: usize,
    pub cluster_count: usize,
    /// Retained volunteers with zero notified periods; their match
    /// probability is pinned to 0.
    pub never_notified: Vec<String>,
    /// (cluster, state, action) cells with zero observations that kept
    /// the smoothed uniform row.
    pub smoothed_cells: Vec<(usize, usize, usize)>,
}

const LOG_HEADER: [&str; 4] = ["volunteer_id", "period", "notified", "completed"];

fn csv_error(err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0) as usize;
    Error::Parse {
        line,
        message: err.to_string(),
    }
}

fn parse_flag(field: &str, name: &str, line: usize) -> Result<bool> {
    match field {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Parse {
            line,
            message: format!("{name} must be 0 or 1, got {other:?}"),
        }),
    }
}

/// Builds a bandit instance from a notification/completion event log.
///
/// Volunteers with at most two lifetime completions are dropped. The rest
/// are sorted by total completions and split into equal-frequency
/// clusters; each cluster's 2-state kernel is estimated from consecutive
/// period pairs with add-one smoothing. Every retained volunteer becomes
/// an arm carrying its cluster's kernel and its own match probability
/// (completions while notified over notifications) in a probability-kind
/// global reward.
pub fn ingest_volunteer_log(
    csv_text: &str,
    opts: &IngestOptions,
) -> Result<(RmabgInstance, IngestReport)> {
    let mut reader = csv::ReaderBuilder::new().from_reader(csv_text.as_bytes());
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.iter().ne(LOG_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header {}, got {}",
                LOG_HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut volunteers: BTreeMap<String, BTreeMap<u64, (bool, bool)>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0) as usize;
        if record.len() != LOG_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, got {}", LOG_HEADER.len(), record.len()),
            });
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty volunteer_id".into(),
            });
        }
        let period: u64 = record[1].parse().map_err(|_| Error::Parse {
            line,
            message: format!("period must be a non-negative integer, got {:?}", &record[1]),
        })?;
        let notified = parse_flag(&record[2], "notified", line)?;
        let completed = parse_flag(&record[3], "completed", line)?;
        let slot = volunteers.entry(id.clone()).or_default();
        if slot.insert(period, (notified, completed)).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate (volunteer_id, period) = ({id:?}, {period})"),
            });
        }
    }
    if volunteers.is_empty() {
        return Err(Error::EmptyInput("event log has no data rows"));
    }

    let volunteers_seen = volunteers.len();
    let mut retained: Vec<(String, BTreeMap<u64, (bool, bool)>, usize)> = volunteers
        .into_iter()
        .filter_map(|(id, periods)| {
            let completions = periods.values().filter(|(_, c)| *c).count();
            (completions > 2).then_some((id, periods, completions))
        })
        .collect();
    if retained.is_empty() {
        return Err(Error::EmptyInput(
            "every volunteer fell under the completion threshold",
        ));
    }
    // equal-frequency clusters over the total-completions ordering; the
    // stable sort keeps ties in volunteer-id order
    retained.sort_by_key(|(_, _, completions)| *completions);
    let n = retained.len();
    let cluster_count = opts.cluster_count.clamp(1, n);
    let cluster_of = |rank: usize| rank * cluster_count / n;

    let mut counts = vec![[[[0u64; 2]; 2]; 2]; cluster_count];
    for (rank, (_, periods, _)) in retained.iter().enumerate() {
        let c = cluster_of(rank);
        for (&t, &(_, completed_now)) in periods.iter() {
            let Some(&(notified_next, completed_next)) = periods.get(&(t + 1)) else {
                continue;
            };
            let s = usize::from(completed_now);
            let a = match opts.action_source {
                ActionSource::Notified => usize::from(notified_next),
                ActionSource::Completed => s,
            };
            counts[c][s][a][usize::from(completed_next)] += 1;
        }
    }

    let mut report = IngestReport {
        volunteers_seen,
        volunteers_retained: n,
        volunteers_excluded: volunteers_seen - n,
        cluster_count,
        ..IngestReport::default()
    };
    let mut kernels: Vec<Kernel> = Vec::with_capacity(cluster_count);
    for (c, cells) in counts.iter().enumerate() {
        let mut kernel = vec![vec![vec![0.0; 2]; 2]; 2];
        for s in 0..2 {
            for a in 0..2 {
                let total = cells[s][a][0] + cells[s][a][1];
                if total == 0 {
                    report.smoothed_cells.push((c, s, a));
                }
                for next in 0..2 {
                    kernel[s][a][next] = (cells[s][a][next] + 1) as f64 / (total + 2) as f64;
                }
            }
        }
        kernels.push(kernel);
    }

    // arm order is sorted volunteer id so row order never matters
    let mut by_id: Vec<(usize, &String, &BTreeMap<u64, (bool, bool)>)> = retained
        .iter()
        .enumerate()
        .map(|(rank, (id, periods, _))| (rank, id, periods))
        .collect();
    by_id.sort_by_key(|(_, id, _)| id.as_str());
    let mut arms = Vec::with_capacity(n);
    let mut m = Vec::with_capacity(n);
    for &(rank, id, periods) in &by_id {
        let notified = periods.values().filter(|(nf, _)| *nf).count();
        let accepted = periods.values().filter(|(nf, c)| *nf && *c).count();
        if notified == 0 {
            report.never_notified.push(id.clone());
            m.push(0.0);
        } else {
            m.push(accepted as f64 / notified as f64);
        }
        arms.push(ArmModel {
            transitions: kernels[cluster_of(rank)].clone(),
            per_arm_reward: engagement_reward_rows(n, 2),
        });
    }

    let inst = RmabgInstance {
        n_arms: n,
        budget: (n / 2).max(1),
        gamma: 0.9,
        alpha: 0.5,
        state_count: 2,
        arms,
        global_reward: GlobalRewardSpec::probability(m),
    };
    inst.validate()?;
    Ok((inst, report))
}

/// Seeded fixture log for ingestion tests: mixed engagement tiers, a slice
/// of volunteers guaranteed to fall under the exclusion threshold, and a
/// slice never notified.
pub fn gen_synthetic_log(n_volunteers: usize, n_periods: usize, seed: u64) -> String {
    let mut rng = derive_stream(seed, &[label_hash("volunteer-log")]);
    let mut out = String::from("volunteer_id,period,notified,completed\n");
    for v in 0..n_volunteers {
        let engagement: f64 = rng.random();
        let casual = v % 5 == 0;
        let never_notified = v % 7 == 3;
        for t in 0..n_periods {
            let notified = !never_notified && rng.random::<f64>() < 0.5;
            let completed = if casual {
                t < 2
            } else {
                let p = if notified {
                    0.2 + 0.7 * engagement
                } else {
                    0.15 * engagement
                };
                rng.random::<f64>() < p
            };
            out.push_str(&format!(
                "v{v:04},{t},{},{}\n",
                u8::from(notified),
                u8::from(completed)
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transition_chain_ordering_holds() {
        let mut rng = derive_stream(11, &[0]);
        let kernels = gen_transitions(10_000, 0.5, &mut rng).unwrap();
        for k in &kernels {
            let p001 = k[0][0][1];
            let p011 = k[0][1][1];
            let p101 = k[1][0][1];
            let p111 = k[1][1][1];
            assert!(p101 >= p001 && p011 >= p001);
            assert!(p111 >= p101.max(p011));
            for row in k.iter().flatten() {
                assert!((row[0] + row[1] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn q_zero_pins_idle_base_probability() {
        let mut rng = derive_stream(12, &[0]);
        let kernels = gen_transitions(50, 0.0, &mut rng).unwrap();
        for k in &kernels {
            assert_eq!(k[0][0][1], 0.0);
        }
    }

    #[test]
    fn kernels_reproducible_per_seed() {
        let mut a = derive_stream(13, &[0]);
        let mut b = derive_stream(13, &[0]);
        let mut c = derive_stream(14, &[0]);
        assert_eq!(
            gen_transitions(8, 0.5, &mut a).unwrap(),
            gen_transitions(8, 0.5, &mut b).unwrap()
        );
        assert_ne!(
            gen_transitions(8, 0.5, &mut derive_stream(13, &[0])).unwrap(),
            gen_transitions(8, 0.5, &mut c).unwrap()
        );
    }

    #[test]
    fn gen_transitions_rejects_bad_q() {
        let mut rng = derive_stream(0, &[0]);
        assert!(gen_transitions(2, 1.5, &mut rng).is_err());
    }

    #[test]
    fn sampled_rewards_have_expected_shape() {
        let mut rng = derive_stream(15, &[0]);
        match gen_reward(SyntheticRewardKind::Probability, 6, &mut rng) {
            GlobalRewardSpec::Probability { m } => {
                assert_eq!(m.len(), 6);
                assert!(m.iter().all(|x| (0.0..1.0).contains(x)));
            }
            other => panic!("wrong kind {other:?}"),
        }
        match gen_reward(SyntheticRewardKind::Subset, 3, &mut rng) {
            GlobalRewardSpec::Subset { universe, sets } => {
                assert_eq!(universe, SUBSET_UNIVERSE_DEFAULT);
                for set in &sets {
                    assert_eq!(set.len(), SUBSET_SET_SIZE_DEFAULT);
                    assert!(set.windows(2).all(|w| w[0] < w[1]));
                    assert!(set.iter().all(|&e| e < SUBSET_UNIVERSE_DEFAULT));
                }
            }
            other => panic!("wrong kind {other:?}"),
        }
    }

    #[test]
    fn gen_instance_validates_and_reproduces() {
        let cfg = SyntheticConfig::default();
        let a = gen_instance(&cfg, 7).unwrap();
        let b = gen_instance(&cfg, 7).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.arms[0].per_arm_reward, vec![vec![0.0, 0.0], vec![0.25, 0.25]]);
    }

    #[test]
    fn reward_kind_round_trips_through_str() {
        for kind in SyntheticRewardKind::ALL {
            assert_eq!(kind.as_str().parse::<SyntheticRewardKind>().unwrap(), kind);
        }
        assert!("banana".parse::<SyntheticRewardKind>().is_err());
    }

    #[test]
    fn theta_nominal_values() {
        assert!((nominal_theta(5, 2, 3) - 0.3).abs() < 1e-12);
        assert!((nominal_theta(2, 2, 4) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn theta_subsets_structure() {
        let spec = gen_theta_subsets(10, 5, 2, 3).unwrap();
        let GlobalRewardSpec::Subset { universe, sets } = spec else {
            panic!("wrong kind");
        };
        assert_eq!(universe, 10);
        assert_eq!(sets.len(), 10);
        for twin in &sets[..5] {
            assert_eq!(*twin, vec![0, 1, 2]);
        }
        // tiles are pairwise disjoint and consecutive
        for (j, block) in sets[5..].iter().enumerate() {
            assert_eq!(*block, vec![2 * j, 2 * j + 1]);
        }
    }

    #[test]
    fn theta_subsets_at_4_2_2_3_match_coverage_example() {
        let spec = gen_theta_subsets(4, 2, 2, 3).unwrap();
        assert_eq!(spec, coverage_example_instance().global_reward);
    }

    #[test]
    fn theta_subsets_reject_bad_sizes() {
        assert!(gen_theta_subsets(4, 2, 3, 3).is_err());
        assert!(gen_theta_subsets(4, 2, 0, 3).is_err());
        assert!(gen_theta_subsets(4, 0, 2, 3).is_err());
    }

    #[test]
    fn adversarial_kernel_traps_pulled_arms() {
        let inst = adversarial_instance(4, 4, 0.9, AdversarialVariant::AllArms).unwrap();
        assert_eq!(inst.budget, 4);
        assert_eq!(inst.alpha, 0.0);
        for arm in &inst.arms {
            assert_eq!(arm.transitions[1][1], vec![1.0, 0.0]);
            assert_eq!(arm.transitions[0][1], vec![1.0, 0.0]);
            assert_eq!(arm.transitions[1][0], vec![0.0, 1.0]);
            assert_eq!(arm.transitions[0][0], vec![1.0, 0.0]);
            assert_eq!(arm.per_arm_reward, vec![vec![0.0; 2]; 2]);
        }
        let GlobalRewardSpec::Max { m } = &inst.global_reward else {
            panic!("wrong kind");
        };
        assert_eq!(*m, vec![1.0; 4]);
    }

    #[test]
    fn adversarial_two_arm_variant_keeps_budget() {
        let inst = adversarial_instance(4, 2, 0.9, AdversarialVariant::TwoArms).unwrap();
        assert_eq!(inst.budget, 2);
        assert_eq!(inst.alpha, 0.5);
        let GlobalRewardSpec::Max { m } = &inst.global_reward else {
            panic!("wrong kind");
        };
        assert_eq!(*m, vec![1.0, 1.0, 0.0, 0.0]);
        assert!(adversarial_instance(1, 1, 0.9, AdversarialVariant::TwoArms).is_err());
    }

    #[test]
    fn coverage_example_shape() {
        let inst = coverage_example_instance();
        inst.validate().unwrap();
        assert_eq!((inst.n_arms, inst.budget), (4, 2));
        assert_eq!(inst.alpha, 0.0);
        for arm in &inst.arms {
            for s in 0..2 {
                for a in 0..2 {
                    assert_eq!(arm.transitions[s][a], vec![0.0, 1.0]);
                }
            }
        }
        let r = inst
            .global_reward
            .evaluate(&[1, 1, 1, 1], &[1, 1, 0, 0])
            .unwrap();
        assert_eq!(r, 3.0);
    }

    #[test]
    fn ingest_small_log_by_hand() {
        let log = "volunteer_id,period,notified,completed\n\
                   a,0,1,1\n\
                   a,1,1,1\n\
                   a,2,1,0\n\
                   a,3,1,1\n\
                   a,4,0,1\n\
                   b,0,1,1\n\
                   b,1,0,1\n\
                   b,2,1,0\n";
        let (inst, report) = ingest_volunteer_log(log, &IngestOptions::default()).unwrap();
        assert_eq!(report.volunteers_seen, 2);
        assert_eq!(report.volunteers_retained, 1);
        assert_eq!(report.volunteers_excluded, 1);
        assert_eq!(inst.n_arms, 1);
        assert_eq!(inst.budget, 1);
        // match probability: completed on 3 of 4 notified periods
        let GlobalRewardSpec::Probability { m } = &inst.global_reward else {
            panic!("wrong kind");
        };
        assert_eq!(*m, vec![0.75]);
        // pairs: (s=1,a=1)->1, (s=1,a=1)->0, (s=0,a=1)->1, (s=1,a=0)->1
        let k = &inst.arms[0].transitions;
        assert_eq!(k[1][1], vec![0.5, 0.5]);
        assert_eq!(k[0][1], vec![1.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(k[1][0], vec![1.0 / 3.0, 2.0 / 3.0]);
        assert_eq!(k[0][0], vec![0.5, 0.5]);
        assert_eq!(report.smoothed_cells, vec![(0, 0, 0)]);
    }

    #[test]
    fn ingest_rejects_duplicates_with_line_number() {
        let log = "volunteer_id,period,notified,completed\n\
                   a,0,1,1\n\
                   a,1,1,1\n\
                   a,0,0,0\n";
        match ingest_volunteer_log(log, &IngestOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_bad_header_and_fields() {
        assert!(matches!(
            ingest_volunteer_log("volunteer,period,notified,completed\n", &IngestOptions::default()),
            Err(Error::Parse { line: 1, .. })
        ));
        let bad_flag = "volunteer_id,period,notified,completed\na,0,2,1\n";
        match ingest_volunteer_log(bad_flag, &IngestOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_period = "volunteer_id,period,notified,completed\na,-1,1,1\n";
        assert!(matches!(
            ingest_volunteer_log(bad_period, &IngestOptions::default()),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn ingest_is_permutation_invariant() {
        let log = gen_synthetic_log(40, 30, 21);
        let mut lines: Vec<&str> = log.trim_end().lines().collect();
        let header = lines.remove(0);
        lines.reverse();
        let mut shuffled = String::from(header);
        shuffled.push('\n');
        for l in lines {
            shuffled.push_str(l);
            shuffled.push('\n');
        }
        let (a, _) = ingest_volunteer_log(&log, &IngestOptions::default()).unwrap();
        let (b, _) = ingest_volunteer_log(&shuffled, &IngestOptions::default()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn synthetic_log_round_trips() {
        let log = gen_synthetic_log(60, 40, 3);
        assert_eq!(log, gen_synthetic_log(60, 40, 3));
        let (inst, report) = ingest_volunteer_log(&log, &IngestOptions::default()).unwrap();
        inst.validate().unwrap();
        assert!(report.volunteers_excluded > 0, "exclusion path not exercised");
        assert!(!report.never_notified.is_empty(), "never-notified path not exercised");
        assert_eq!(report.volunteers_retained, inst.n_arms);
        let GlobalRewardSpec::Probability { m } = &inst.global_reward else {
            panic!("wrong kind");
        };
        assert!(m.iter().all(|x| (0.0..=1.0).contains(x)));
        for arm in &inst.arms {
            for row in arm.transitions.iter().flatten() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cluster_assignment_is_balanced() {
        let log = gen_synthetic_log(25, 40, 9);
        let opts = IngestOptions {
            cluster_count: 4,
            ..IngestOptions::default()
        };
        let (inst, report) = ingest_volunteer_log(&log, &opts).unwrap();
        assert_eq!(report.cluster_count, 4);
        // distinct kernels <= cluster count
        let mut seen: Vec<&Kernel> = Vec::new();
        for arm in &inst.arms {
            if !seen.contains(&&arm.transitions) {
                seen.push(&arm.transitions);
            }
        }
        assert!(seen.len() <= 4);
    }
}
