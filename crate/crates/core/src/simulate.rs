//! Episode engine and experiment grid: discounted-reward accounting,
//! paired seed/trial scheduling, normalization against the uniform
//! baseline, and CSV/markdown reporting.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::instance_content_hash;
use crate::model::{ActionVector, RmabgInstance, StateVector};
use crate::policy::{PolicyKind, PolicyParams, PreparedPolicy};
use crate::rng::{derive_seed, derive_stream, label_hash, Stream};

/// Below this magnitude the uniform baseline's mean cannot serve as a
/// normalization denominator and raw rewards are reported instead.
pub const NORMALIZATION_GUARD: f64 = 1e-9;

/// Where each episode starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialStateRule {
    /// Every episode starts from this exact joint state.
    Fixed(StateVector),
    /// Each arm's state is drawn uniformly, once per (seed, trial), and
    /// shared by every policy.
    Sampled,
}

/// Grid shape and accounting parameters for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub horizon: usize,
    /// Discount used when accumulating episode rewards.
    pub gamma: f64,
    pub seeds: usize,
    pub trials_per_seed: usize,
    pub initial_state: InitialStateRule,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            horizon: 50,
            gamma: 0.9,
            seeds: 15,
            trials_per_seed: 5,
            initial_state: InitialStateRule::Sampled,
        }
    }
}

impl EpisodeConfig {
    /// Default grid with the discount taken from the instance, so the
    /// accounting matches the objective the policies planned for.
    pub fn for_instance(inst: &RmabgInstance) -> Self {
        EpisodeConfig {
            gamma: inst.gamma,
            ..EpisodeConfig::default()
        }
    }

    fn validate(&self, inst: &RmabgInstance) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidParameter {
                name: "horizon",
                message: "must be at least 1".into(),
            });
        }
        if self.seeds == 0 || self.trials_per_seed == 0 {
            return Err(Error::InvalidParameter {
                name: "seeds",
                message: "seed and trial counts must be at least 1".into(),
            });
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidParameter {
                name: "gamma",
                message: format!("must lie in [0, 1), got {}", self.gamma),
            });
        }
        if let InitialStateRule::Fixed(s0) = &self.initial_state {
            if s0.len() != inst.n_arms {
                return Err(Error::Shape {
                    context: "fixed initial state",
                    expected: inst.n_arms,
                    actual: s0.len(),
                });
            }
            for (i, &v) in s0.0.iter().enumerate() {
                if v >= inst.state_count {
                    return Err(Error::InvalidParameter {
                        name: "initial_state",
                        message: format!("arm {i} state {v} out of range"),
                    });
                }
            }
        }
        Ok(())
    }
}

/// One simulated round.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStep {
    pub state: StateVector,
    pub action: ActionVector,
    pub reward: f64,
}

/// Plays `horizon` rounds from `s0`, discounting with the instance's
/// own gamma. Action choice and transition sampling share `rng`, so
/// one seed fixes the whole trajectory.
pub fn run_episode<F>(
    inst: &RmabgInstance,
    policy: F,
    s0: &StateVector,
    horizon: usize,
    rng: &mut Stream,
) -> Result<(f64, Vec<EpisodeStep>)>
where
    F: FnMut(&StateVector, &mut Stream) -> Result<ActionVector>,
{
    run_episode_discounted(inst, policy, s0, horizon, inst.gamma, rng)
}

fn run_episode_discounted<F>(
    inst: &RmabgInstance,
    mut policy: F,
    s0: &StateVector,
    horizon: usize,
    gamma: f64,
    rng: &mut Stream,
) -> Result<(f64, Vec<EpisodeStep>)>
where
    F: FnMut(&StateVector, &mut Stream) -> Result<ActionVector>,
{
    let mut s = s0.clone();
    let mut total = 0.0;
    let mut discount = 1.0;
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let a = policy(&s, rng)?;
        let r = inst.total_reward(&s, &a)?;
        total += discount * r;
        discount *= gamma;
        let next = inst.sample_next_state(&s, &a, rng);
        steps.push(EpisodeStep {
            state: std::mem::replace(&mut s, next),
            action: a,
            reward: r,
        });
    }
    Ok((total, steps))
}

/// One grid cell's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub policy: PolicyKind,
    pub seed: u64,
    pub trial: u64,
    pub discounted_reward: f64,
    pub normalized_reward: f64,
}

/// Per-policy aggregate over the whole grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    pub mean_normalized: f64,
    pub stderr: f64,
    pub n_runs: usize,
}

/// Everything needed to reproduce or audit a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub instance_hash: String,
    pub master_seed: u64,
    pub config: EpisodeConfig,
    /// Mean discounted reward of the uniform baseline, the
    /// normalization denominator.
    pub random_mean_reward: f64,
    /// True when the guard tripped and `normalized_reward` columns hold
    /// raw discounted rewards.
    pub normalized_absolute: bool,
}

/// Full outcome of one experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<PolicySummary>,
    pub metadata: ReportMetadata,
}

impl ExperimentReport {
    pub fn summary_for(&self, kind: PolicyKind) -> Option<&PolicySummary> {
        self.summaries.iter().find(|s| s.policy == kind)
    }
}

/// Initial joint states for every (seed, trial) cell, drawn once and
/// shared across policies so comparisons are paired.
pub fn draw_initial_states(
    inst: &RmabgInstance,
    cfg: &EpisodeConfig,
    master_seed: u64,
) -> Vec<Vec<StateVector>> {
    (0..cfg.seeds)
        .map(|seed| {
            (0..cfg.trials_per_seed)
                .map(|trial| match &cfg.initial_state {
                    InitialStateRule::Fixed(s0) => s0.clone(),
                    InitialStateRule::Sampled => {
                        let mut rng = derive_stream(
                            master_seed,
                            &[label_hash("init"), seed as u64, trial as u64],
                        );
                        StateVector(
                            (0..inst.n_arms)
                                .map(|_| rng.random_range(0..inst.state_count))
                                .collect(),
                        )
                    }
                })
                .collect()
        })
        .collect()
}

/// [`run_experiment_with`] with one shared parameter set.
pub fn run_experiment(
    inst: &RmabgInstance,
    kinds: &[PolicyKind],
    params: &PolicyParams,
    cfg: &EpisodeConfig,
    master_seed: u64,
) -> Result<ExperimentReport> {
    let roster: Vec<(PolicyKind, PolicyParams)> =
        kinds.iter().map(|&k| (k, *params)).collect();
    run_experiment_with(inst, &roster, cfg, master_seed)
}

/// Runs every policy over the full seed/trial grid and aggregates. The
/// uniform baseline is always included (appended when absent) because
/// it defines the normalization denominator. Episodes run in parallel;
/// every stream is derived from `(master_seed, policy name, seed,
/// trial)`, so the report is independent of scheduling.
pub fn run_experiment_with(
    inst: &RmabgInstance,
    policies_in: &[(PolicyKind, PolicyParams)],
    cfg: &EpisodeConfig,
    master_seed: u64,
) -> Result<ExperimentReport> {
    cfg.validate(inst)?;
    let mut roster: Vec<(PolicyKind, PolicyParams)> = Vec::new();
    for entry in policies_in {
        if !roster.iter().any(|(k, _)| *k == entry.0) {
            roster.push(*entry);
        }
    }
    if !roster.iter().any(|(k, _)| *k == PolicyKind::Random) {
        roster.push((PolicyKind::Random, PolicyParams::default()));
    }

    let policies: Vec<PreparedPolicy> = roster
        .iter()
        .map(|&(kind, params)| {
            let prep_seed = derive_seed(
                master_seed,
                &[label_hash("prepare"), label_hash(kind.as_str())],
            );
            PreparedPolicy::prepare(inst, kind, params, prep_seed)
        })
        .collect::<Result<Vec<_>>>()?;

    let starts = draw_initial_states(inst, cfg, master_seed);

    let cells: Vec<(usize, usize, usize)> = (0..roster.len())
        .flat_map(|p| {
            (0..cfg.seeds)
                .flat_map(move |seed| (0..cfg.trials_per_seed).map(move |t| (p, seed, t)))
        })
        .collect();
    let rewards: Vec<f64> = cells
        .par_iter()
        .map(|&(p, seed, trial)| {
            let mut rng = derive_stream(
                master_seed,
                &[label_hash(roster[p].0.as_str()), seed as u64, trial as u64],
            );
            let policy = &policies[p];
            run_episode_discounted(
                inst,
                |s, rng| policy.choose(s, rng),
                &starts[seed][trial],
                cfg.horizon,
                cfg.gamma,
                &mut rng,
            )
            .map(|(total, _)| total)
        })
        .collect::<Result<Vec<_>>>()?;

    let runs_per_policy = cfg.seeds * cfg.trials_per_seed;
    let random_pos = roster
        .iter()
        .position(|&(k, _)| k == PolicyKind::Random)
        .expect("baseline was appended above");
    let random_slice = &rewards[random_pos * runs_per_policy..][..runs_per_policy];
    let random_mean = random_slice.iter().sum::<f64>() / runs_per_policy as f64;
    let normalized_absolute = random_mean.abs() < NORMALIZATION_GUARD;
    let denom = if normalized_absolute { 1.0 } else { random_mean };

    let mut runs = Vec::with_capacity(cells.len());
    for (idx, &(p, seed, trial)) in cells.iter().enumerate() {
        runs.push(RunRecord {
            policy: roster[p].0,
            seed: seed as u64,
            trial: trial as u64,
            discounted_reward: rewards[idx],
            normalized_reward: rewards[idx] / denom,
        });
    }

    let summaries = roster
        .iter()
        .enumerate()
        .map(|(p, &(kind, _))| {
            let xs: Vec<f64> = runs[p * runs_per_policy..][..runs_per_policy]
                .iter()
                .map(|r| r.normalized_reward)
                .collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let stderr = if xs.len() > 1 {
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                    / (xs.len() - 1) as f64;
                (var / xs.len() as f64).sqrt()
            } else {
                0.0
            };
            PolicySummary {
                policy: kind,
                mean_normalized: mean,
                stderr,
                n_runs: xs.len(),
            }
        })
        .collect();

    Ok(ExperimentReport {
        runs,
        summaries,
        metadata: ReportMetadata {
            instance_hash: instance_content_hash(inst),
            master_seed,
            config: cfg.clone(),
            random_mean_reward: random_mean,
            normalized_absolute,
        },
    })
}

/// One row per grid cell, header
/// `policy,seed,trial,discounted_reward,normalized_reward`.
pub fn write_results_csv<W: Write>(report: &ExperimentReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for run in &report.runs {
        w.serialize(run)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per policy, header `policy,mean_normalized,stderr,n_runs`.
pub fn write_summary_csv<W: Write>(report: &ExperimentReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in &report.summaries {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

/// Human-readable digest of a report.
pub fn summary_markdown(report: &ExperimentReport) -> String {
    let m = &report.metadata;
    let mut out = String::new();
    out.push_str("# Experiment summary\n\n");
    out.push_str(&format!("- instance: `{}`\n", m.instance_hash));
    out.push_str(&format!("- master seed: {}\n", m.master_seed));
    out.push_str(&format!(
        "- grid: {} seeds x {} trials, horizon {}, gamma {}\n",
        m.config.seeds, m.config.trials_per_seed, m.config.horizon, m.config.gamma
    ));
    if m.normalized_absolute {
        out.push_str(
            "- baseline mean below the normalization guard; reporting raw rewards\n",
        );
    } else {
        out.push_str(&format!("- baseline mean reward: {:.6}\n", m.random_mean_reward));
    }
    out.push_str("\n| policy | mean | stderr | runs |\n|---|---|---|---|\n");
    for s in &report.summaries {
        out.push_str(&format!(
            "| {} | {:.4} | {:.4} | {} |\n",
            s.policy, s.mean_normalized, s.stderr, s.n_runs
        ));
    }
    out
}
