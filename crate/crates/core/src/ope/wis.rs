use crate::dataset::TransitionDataset;
use crate::error::{Error, Result};
use crate::mdp::Policy;
use crate::text::{format_sig, Table};

/// Smallest behavior probability used in a ratio denominator.
pub const BEHAVIOR_FLOOR: f64 = 1e-6;

pub const DEFAULT_EPSILON: f64 = 0.01;

/// Put `1 - epsilon` on the policy's action and split `epsilon` evenly over
/// the others. Stochastic inputs are reduced to their mode first.
pub fn soften(policy: &Policy, epsilon: f64) -> Result<Policy> {
    let na = policy.n_actions();
    if na < 2 {
        return Err(Error::InvalidPolicy(
            "softening needs at least two actions".into(),
        ));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Config(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    let other = epsilon / (na - 1) as f64;
    let probs = (0..policy.n_states())
        .map(|s| {
            let mut row = vec![other; na];
            row[policy.action(s)] = 1.0 - epsilon;
            row
        })
        .collect();
    Policy::stochastic(probs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTerm {
    pub episode_id: u64,
    /// Product of per-step ratios over the whole trajectory.
    pub ratio: f64,
    /// `ratio / w_T`
    pub weight: f64,
    pub discounted_return: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WisReport {
    pub episodes: Vec<EpisodeTerm>,
    pub estimate: f64,
    pub effective_sample_size: f64,
    /// Logged steps whose behavior probability was raised to the floor.
    pub clamped: usize,
}

impl WisReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new([
            "episode_id",
            "ratio",
            "weight",
            "discounted_return",
            "value",
        ]);
        for e in &self.episodes {
            t.push([
                e.episode_id.to_string(),
                format_sig(e.ratio, 9),
                format_sig(e.weight, 9),
                format_sig(e.discounted_return, 9),
                format_sig(e.value, 9),
            ]);
        }
        t
    }
}

/// Weighted importance sampling estimate of `pi_eval` from episodes logged
/// under `pi_behavior`.
pub fn wis(
    ds: &TransitionDataset,
    pi_eval: &Policy,
    pi_behavior: &Policy,
    gamma: f64,
) -> Result<WisReport> {
    if !ds.is_episodic() || ds.is_empty() {
        return Err(Error::InvalidDataset(
            "importance sampling needs a nonempty episodic dataset".into(),
        ));
    }
    for (name, p) in [("evaluation", pi_eval), ("behavior", pi_behavior)] {
        if p.n_states() != ds.n_states() || p.n_actions() != ds.n_actions() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} policy over {}x{}", name, ds.n_states(), ds.n_actions()),
                found: format!("{}x{}", p.n_states(), p.n_actions()),
            });
        }
    }
    let mut clamped = 0;
    let mut episodes = Vec::with_capacity(ds.n_episodes());
    for ep in ds.episodes() {
        let (mut ratio, mut ret, mut disc) = (1.0, 0.0, 1.0);
        for r in ep {
            let mut b = pi_behavior.prob(r.state, r.action);
            if b < BEHAVIOR_FLOOR {
                b = BEHAVIOR_FLOOR;
                clamped += 1;
            }
            ratio *= pi_eval.prob(r.state, r.action) / b;
            ret += disc * r.reward;
            disc *= gamma;
        }
        episodes.push(EpisodeTerm {
            episode_id: ep[0].episode_id,
            ratio,
            weight: 0.0,
            discounted_return: ret,
            value: 0.0,
        });
    }
    let n = episodes.len() as f64;
    let total: f64 = episodes.iter().map(|e| e.ratio).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Undefined(format!(
            "importance ratios sum to {total}"
        )));
    }
    let w = total / n;
    let mut estimate = 0.0;
    let mut sq = 0.0;
    for e in &mut episodes {
        e.weight = e.ratio / w;
        e.value = e.weight * e.discounted_return;
        estimate += e.value;
        sq += e.ratio * e.ratio;
    }
    Ok(WisReport {
        estimate: estimate / n,
        effective_sample_size: total * total / sq,
        episodes,
        clamped,
    })
}
