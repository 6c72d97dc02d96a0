//! Synthetic treatment environments with imbalanced behavior policies.

mod chronic;
mod critical;
mod random;

pub use chronic::{build_chronic_care, ChronicCareConfig, ChronicState};
pub use critical::{build_critical_care, CriticalCareConfig};
pub use random::{random_mdp, RandomMdpConfig};

use serde::Serialize;

use crate::constraints::FeasibleSets;
use crate::dataset::TransitionDataset;
use crate::error::{Error, Result};
use crate::mdp::{rollout_with, MdpSpec, Policy, RolloutOptions};
use crate::rng::derive_seed;

/// A hard rule: in states where it applies, `forbidden` actions may not be
/// recommended.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintRule {
    pub name: String,
    /// `applies[s]`
    pub applies: Vec<bool>,
    pub forbidden: Vec<usize>,
}

impl ConstraintRule {
    pub fn permits(&self, s: usize, a: usize) -> bool {
        !(self.applies[s] && self.forbidden.contains(&a))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintRuleSet {
    pub n_states: usize,
    pub n_actions: usize,
    pub rules: Vec<ConstraintRule>,
}

impl ConstraintRuleSet {
    /// Build a rule set, rejecting rules that would leave a state with no
    /// permitted action.
    pub fn new(n_states: usize, n_actions: usize, rules: Vec<ConstraintRule>) -> Result<Self> {
        for r in &rules {
            if r.applies.len() != n_states {
                return Err(Error::Config(format!(
                    "rule {}: applicability covers {} states",
                    r.name,
                    r.applies.len()
                )));
            }
            if let Some(&a) = r.forbidden.iter().find(|&&a| a >= n_actions) {
                return Err(Error::Config(format!(
                    "rule {}: action {a} out of range",
                    r.name
                )));
            }
        }
        let set = Self {
            n_states,
            n_actions,
            rules,
        };
        if let Some(s) = (0..n_states).find(|&s| set.feasible_set(s).is_empty()) {
            return Err(Error::Config(format!(
                "constraint rules leave state {s} with no permitted action"
            )));
        }
        Ok(set)
    }

    /// Intersection of the per-rule feasible sets.
    pub fn feasible_set(&self, s: usize) -> Vec<usize> {
        (0..self.n_actions)
            .filter(|&a| self.is_feasible(s, a))
            .collect()
    }

    pub fn mask(&self) -> Vec<Vec<bool>> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| self.is_feasible(s, a))
                    .collect()
            })
            .collect()
    }
}

impl FeasibleSets for ConstraintRuleSet {
    fn is_feasible(&self, s: usize, a: usize) -> bool {
        self.rules.iter().all(|r| r.permits(s, a))
    }
}

/// Per-episode categorical strata tags, in the spirit of demographic strata.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrataSpec {
    pub names: Vec<String>,
    pub levels: Vec<u32>,
    /// When set, tag `position` is forced to `value` for episodes whose
    /// initial state satisfies the mask (ties a tag to a state feature).
    pub linked: Option<(usize, u32, Vec<bool>)>,
}

impl StrataSpec {
    pub fn tags(&self, seed: u64, episode_id: u64, initial_state: usize) -> Vec<u32> {
        let mut tags: Vec<u32> = self
            .levels
            .iter()
            .enumerate()
            .map(|(i, &n)| (derive_seed(derive_seed(seed, episode_id), i as u64) % n as u64) as u32)
            .collect();
        if let Some((pos, value, mask)) = &self.linked {
            if mask[initial_state] {
                tags[*pos] = *value;
            }
        }
        tags
    }
}

/// Everything a generator produces: the ground-truth MDP, the logging
/// policy, the rule set, and the predicates the metrics need.
#[derive(Debug, Clone)]
pub struct Environment {
    pub name: String,
    pub mdp: MdpSpec,
    pub behavior: Policy,
    pub rules: ConstraintRuleSet,
    pub action_names: Vec<String>,
    /// States where treatment intensification is warranted.
    pub out_of_control: Vec<bool>,
    /// Actions that do not intensify treatment.
    pub non_intensifying: Vec<usize>,
    pub strata: StrataSpec,
    /// Grid shape for two-axis action spaces (rows, columns).
    pub action_grid: Option<(usize, usize)>,
}

impl Environment {
    /// Roll out the behavior policy with strata tags attached.
    pub fn behavior_dataset(
        &self,
        n_episodes: usize,
        seed: u64,
        first_episode_id: u64,
    ) -> Result<TransitionDataset> {
        let strata_seed = derive_seed(seed, 0x5747);
        let f = |ep: u64, s0: usize| self.strata.tags(strata_seed, ep, s0);
        let opts = RolloutOptions {
            strata: Some(&f),
            first_episode_id,
        };
        rollout_with(&self.mdp, &self.behavior, n_episodes, seed, &opts)
    }
}

/// Feasible set of state `s` under `rules`.
pub fn feasible_set(rules: &ConstraintRuleSet, s: usize) -> Vec<usize> {
    rules.feasible_set(s)
}
