//! Random finite MDPs for property checks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{MdpParts, MdpSpec};
use crate::rng::seeded;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomMdpConfig {
    pub n_states: usize,
    pub n_actions: usize,
    /// Number of reachable next states per (state, action).
    pub branching: usize,
    pub horizon: usize,
    pub gamma: f64,
    /// Chance that an action is infeasible in a state (one action per state
    /// is always kept).
    pub infeasible_prob: f64,
    /// Chance that a state is terminal (state 0 never is).
    pub terminal_prob: f64,
    pub reward_bounds: (f64, f64),
}

impl Default for RandomMdpConfig {
    fn default() -> Self {
        Self {
            n_states: 10,
            n_actions: 3,
            branching: 3,
            horizon: 8,
            gamma: 0.9,
            infeasible_prob: 0.3,
            terminal_prob: 0.1,
            reward_bounds: (-1.0, 1.0),
        }
    }
}

/// Draw an MDP: sparse random transitions, uniform rewards within the bounds,
/// random feasible masks and a few terminal states.
pub fn random_mdp(cfg: &RandomMdpConfig, seed: u64) -> Result<MdpSpec> {
    let (ns, na) = (cfg.n_states, cfg.n_actions);
    if ns == 0 || na == 0 || cfg.branching == 0 {
        return Err(Error::Config(
            "random MDP needs states, actions and branching".into(),
        ));
    }
    let (lo, hi) = cfg.reward_bounds;
    if !(lo <= 0.0 && 0.0 <= hi && lo < hi) {
        return Err(Error::Config("reward bounds must contain 0".into()));
    }
    let mut rng = seeded(seed);
    let terminal: Vec<bool> = (0..ns)
        .map(|s| s > 0 && rng.gen::<f64>() < cfg.terminal_prob)
        .collect();
    let mut transition = vec![vec![vec![0.0; ns]; na]; ns];
    let mut reward = vec![vec![0.0; na]; ns];
    let mut feasible = vec![vec![true; na]; ns];
    for s in 0..ns {
        let keep = rng.gen_range(0..na);
        for a in 0..na {
            if terminal[s] {
                transition[s][a][s] = 1.0;
                continue;
            }
            let mut total = 0.0;
            for _ in 0..cfg.branching {
                let w: f64 = rng.gen::<f64>() + 1e-3;
                transition[s][a][rng.gen_range(0..ns)] += w;
                total += w;
            }
            transition[s][a].iter_mut().for_each(|p| *p /= total);
            reward[s][a] = rng.gen_range(lo..=hi);
            feasible[s][a] = a == keep || rng.gen::<f64>() >= cfg.infeasible_prob;
        }
    }
    let mut initial: Vec<f64> = (0..ns)
        .map(|s| if terminal[s] { 0.0 } else { rng.gen::<f64>() })
        .collect();
    let z: f64 = initial.iter().sum();
    initial.iter_mut().for_each(|p| *p /= z);
    MdpSpec::new(MdpParts {
        n_states: ns,
        n_actions: na,
        transition,
        reward,
        realized_reward: None,
        reward_bounds: cfg.reward_bounds,
        gamma: cfg.gamma,
        horizon: cfg.horizon,
        initial_dist: initial,
        terminal_mask: terminal,
        feasible_mask: feasible,
    })
}
