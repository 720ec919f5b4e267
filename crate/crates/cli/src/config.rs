//! TOML experiment configuration: an instance recipe, the grid shape,
//! and the policy roster with per-policy tunables.
//!
//! ```toml
//! [instance]
//! generator = "synthetic"
//! n_arms = 4
//! budget = 2
//! reward = "probability"
//! seed = 7
//!
//! [experiment]
//! horizon = 50
//! seeds = 15
//! trials_per_seed = 5
//!
//! [policies.linear_whittle]
//! [policies.mcts_shapley]
//! mcts_iterations = 800
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use rmabg_core::generate::{
    adversarial_instance, coverage_example_instance, gen_instance, gen_theta_instance,
    AdversarialVariant, SyntheticConfig, SyntheticRewardKind,
};
use rmabg_core::model::{RmabgInstance, StateVector};
use rmabg_core::policy::{PolicyKind, PolicyParams};
use rmabg_core::simulate::{EpisodeConfig, InitialStateRule};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub instance: InstanceSection,
    pub experiment: ExperimentSection,
    /// Keyed by policy name; unknown names are rejected when the roster
    /// is built so `gen` configs may omit the section entirely.
    pub policies: BTreeMap<String, PolicyParams>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceSection {
    /// One of `synthetic`, `theta_subsets`, `coverage_example`,
    /// `trap_all_arms`, `trap_two_arms`.
    pub generator: String,
    pub n_arms: usize,
    pub budget: usize,
    pub gamma: f64,
    pub alpha: f64,
    /// Engagement floor for the sampled transition kernels.
    pub q: f64,
    /// Reward family for the `synthetic` generator: `linear`,
    /// `probability`, `max`, or `subset`.
    pub reward: String,
    /// Tile width for the `theta_subsets` generator.
    pub block_size: usize,
    /// Shared-prefix width for the `theta_subsets` generator.
    pub twin_size: usize,
    pub seed: u64,
}

impl Default for InstanceSection {
    fn default() -> Self {
        InstanceSection {
            generator: "synthetic".into(),
            n_arms: 4,
            budget: 2,
            gamma: 0.9,
            alpha: 0.5,
            q: 0.5,
            reward: "probability".into(),
            block_size: 2,
            twin_size: 3,
            seed: 0,
        }
    }
}

impl InstanceSection {
    pub fn build(&self, seed: u64) -> Result<RmabgInstance> {
        let inst = match self.generator.as_str() {
            "synthetic" => {
                let kind = SyntheticRewardKind::from_str(&self.reward)?;
                gen_instance(
                    &SyntheticConfig {
                        n_arms: self.n_arms,
                        budget: self.budget,
                        gamma: self.gamma,
                        alpha: self.alpha,
                        q: self.q,
                        kind,
                    },
                    seed,
                )?
            }
            "theta_subsets" => gen_theta_instance(
                self.n_arms,
                self.budget,
                self.block_size,
                self.twin_size,
                self.q,
                self.gamma,
                self.alpha,
                seed,
            )?,
            "coverage_example" => coverage_example_instance(),
            "trap_all_arms" => adversarial_instance(
                self.n_arms,
                self.budget,
                self.gamma,
                AdversarialVariant::AllArms,
            )?,
            "trap_two_arms" => adversarial_instance(
                self.n_arms,
                self.budget,
                self.gamma,
                AdversarialVariant::TwoArms,
            )?,
            other => bail!(
                "unknown generator `{other}` (expected synthetic, theta_subsets, \
                 coverage_example, trap_all_arms, or trap_two_arms)"
            ),
        };
        Ok(inst)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub horizon: usize,
    /// Discount for reward accounting; defaults to the instance's gamma.
    pub gamma: Option<f64>,
    pub seeds: usize,
    pub trials_per_seed: usize,
    /// `sampled` or `fixed`; the latter requires `fixed_state`.
    pub initial_state: String,
    pub fixed_state: Vec<usize>,
    pub seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            horizon: 50,
            gamma: None,
            seeds: 15,
            trials_per_seed: 5,
            initial_state: "sampled".into(),
            fixed_state: Vec::new(),
            seed: 0,
        }
    }
}

impl ExperimentSection {
    pub fn episode_config(&self, inst: &RmabgInstance) -> Result<EpisodeConfig> {
        let initial_state = match self.initial_state.as_str() {
            "sampled" => InitialStateRule::Sampled,
            "fixed" => {
                if self.fixed_state.is_empty() {
                    bail!("initial_state = \"fixed\" requires a fixed_state array");
                }
                InitialStateRule::Fixed(StateVector(self.fixed_state.clone()))
            }
            other => bail!("unknown initial_state `{other}` (expected sampled or fixed)"),
        };
        Ok(EpisodeConfig {
            horizon: self.horizon,
            gamma: self.gamma.unwrap_or(inst.gamma),
            seeds: self.seeds,
            trials_per_seed: self.trials_per_seed,
            initial_state,
        })
    }
}

pub fn load(path: &Path) -> Result<ConfigFile> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Policy sections in name order, so the roster is independent of the
/// order they appear in the file.
pub fn policy_roster(cfg: &ConfigFile) -> Result<Vec<(PolicyKind, PolicyParams)>> {
    let mut roster = Vec::with_capacity(cfg.policies.len());
    for (name, params) in &cfg.policies {
        let kind = PolicyKind::from_str(name)
            .with_context(|| format!("config section [policies.{name}]"))?;
        roster.push((kind, *params));
    }
    Ok(roster)
}
