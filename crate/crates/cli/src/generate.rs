//! Behavior-log generation and episode splits.

use offrl::dataset::TransitionDataset;
use offrl::rng::derive_seed;
use serde::{Deserialize, Serialize};

use crate::config::{EnvConfig, ExperimentConfig};
use crate::layout::{write_dataset, write_json, Layout, SPLITS};
use crate::{streams, CliError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: String,
    pub episodes: usize,
    pub records: usize,
    pub action_counts: Vec<usize>,
    pub action_shares: Vec<f64>,
    /// Largest over smallest nonzero action count.
    pub imbalance_ratio: f64,
}

impl SplitStats {
    fn of(split: &str, ds: &TransitionDataset) -> Self {
        let counts = ds.action_counts().to_vec();
        let max = counts.iter().copied().max().unwrap_or(0);
        let min = counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(0);
        Self {
            split: split.into(),
            episodes: ds.n_episodes(),
            records: ds.len(),
            action_shares: ds.action_shares(),
            action_counts: counts,
            imbalance_ratio: if min > 0 {
                max as f64 / min as f64
            } else {
                0.0
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub environment: String,
    pub seed: u64,
    pub rollout_seed: u64,
    pub n_states: usize,
    pub n_actions: usize,
    pub action_names: Vec<String>,
    pub env_config: EnvConfig,
    pub total: SplitStats,
    pub splits: Vec<SplitStats>,
}

/// Episode ids `0..n` in a seeded order, cut into train, validation and test
/// lists (each sorted).
pub fn split_episode_ids(n: usize, split: [f64; 3], seed: u64) -> [Vec<u64>; 3] {
    let mut ids: Vec<u64> = (0..n as u64).collect();
    ids.sort_by_key(|&id| (derive_seed(seed, id), id));
    let n_train = ((split[0] * n as f64).round() as usize).clamp(1, n - 2);
    let n_val = ((split[1] * n as f64).round() as usize).clamp(1, n - n_train - 1);
    let mut parts = [
        ids[..n_train].to_vec(),
        ids[n_train..n_train + n_val].to_vec(),
        ids[n_train + n_val..].to_vec(),
    ];
    parts.iter_mut().for_each(|p| p.sort_unstable());
    parts
}

/// Roll out the behavior policy for every seed and write split datasets with
/// a manifest.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<Manifest>, CliError> {
    cfg.validate()?;
    let env = cfg.env.build()?;
    let layout = Layout::new(&cfg.output_dir);
    let mut manifests = Vec::new();
    for &seed in &cfg.seeds {
        let rollout_seed = derive_seed(derive_seed(cfg.env.seed(), seed), streams::ROLLOUT);
        let all = env.behavior_dataset(cfg.data.n_episodes, rollout_seed, 0)?;
        let ids = split_episode_ids(
            cfg.data.n_episodes,
            cfg.data.split,
            derive_seed(seed, streams::SPLIT),
        );
        let mut splits = Vec::new();
        for (name, part) in SPLITS.iter().zip(&ids) {
            let ds = all.select_episodes(part)?;
            write_dataset(&layout.dataset(seed, name), &ds)?;
            splits.push(SplitStats::of(name, &ds));
        }
        let manifest = Manifest {
            experiment: cfg.name.clone(),
            environment: env.name.clone(),
            seed,
            rollout_seed,
            n_states: env.mdp.n_states(),
            n_actions: env.mdp.n_actions(),
            action_names: env.action_names.clone(),
            env_config: cfg.env.clone(),
            total: SplitStats::of("all", &all),
            splits,
        };
        write_json(&layout.manifest(seed), &manifest)?;
        manifests.push(manifest);
    }
    Ok(manifests)
}
