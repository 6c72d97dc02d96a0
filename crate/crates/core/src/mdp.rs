//! Finite-horizon MDPs, policies and behavior-data rollouts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{TransitionDataset, TransitionRecord};
use crate::error::{Error, Result};
use crate::rng::{sample_categorical, seeded};

const PROB_TOL: f64 = 1e-9;

/// Raw, unvalidated MDP components. Turn into an [`MdpSpec`] with
/// [`MdpSpec::new`].
#[derive(Debug, Clone)]
pub struct MdpParts {
    pub n_states: usize,
    pub n_actions: usize,
    /// `[state][action][next_state]`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// Expected immediate reward, `[state][action]`.
    pub reward: Vec<Vec<f64>>,
    /// Optional realized reward `[state][action][next_state]`; its expectation
    /// under `transition` must equal `reward`.
    pub realized_reward: Option<Vec<Vec<Vec<f64>>>>,
    pub reward_bounds: (f64, f64),
    pub gamma: f64,
    pub horizon: usize,
    pub initial_dist: Vec<f64>,
    pub terminal_mask: Vec<bool>,
    pub feasible_mask: Vec<Vec<bool>>,
}

/// A validated finite MDP with per-state feasible action sets.
///
/// Tensors are stored flat in row-major order. Terminal states are absorbing
/// and pay nothing: the oracles treat their value as zero and rollouts stop
/// on entering them.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpSpec {
    n_states: usize,
    n_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    realized_reward: Option<Vec<f64>>,
    reward_bounds: (f64, f64),
    gamma: f64,
    horizon: usize,
    initial_dist: Vec<f64>,
    terminal_mask: Vec<bool>,
    feasible_mask: Vec<bool>,
}

impl MdpSpec {
    pub fn new(parts: MdpParts) -> Result<Self> {
        let MdpParts {
            n_states: ns,
            n_actions: na,
            transition,
            reward,
            realized_reward,
            reward_bounds,
            gamma,
            horizon,
            initial_dist,
            terminal_mask,
            feasible_mask,
        } = parts;
        let bad = |m: String| Err(Error::InvalidMdp(m));

        if ns == 0 || na == 0 {
            return bad("n_states and n_actions must be positive".into());
        }
        if !(0.0..1.0).contains(&gamma) {
            return bad(format!("gamma must lie in [0, 1), got {gamma}"));
        }
        if horizon == 0 {
            return bad("horizon must be positive".into());
        }
        let (r_lo, r_hi) = reward_bounds;
        if !(r_lo.is_finite() && r_hi.is_finite() && r_lo <= r_hi) {
            return bad(format!("bad reward bounds [{r_lo}, {r_hi}]"));
        }
        if transition.len() != ns || reward.len() != ns {
            return bad("transition/reward outer dimension must equal n_states".into());
        }
        if initial_dist.len() != ns || terminal_mask.len() != ns || feasible_mask.len() != ns {
            return bad(
                "initial_dist/terminal_mask/feasible_mask must have n_states entries".into(),
            );
        }

        let mut flat_p = Vec::with_capacity(ns * na * ns);
        let mut flat_r = Vec::with_capacity(ns * na);
        let mut flat_f = Vec::with_capacity(ns * na);
        for s in 0..ns {
            if transition[s].len() != na || reward[s].len() != na || feasible_mask[s].len() != na {
                return bad(format!("state {s}: action dimension must equal n_actions"));
            }
            for a in 0..na {
                let row = &transition[s][a];
                if row.len() != ns {
                    return bad(format!(
                        "P[{s}][{a}] has {} entries, expected {ns}",
                        row.len()
                    ));
                }
                if row.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
                    return bad(format!("P[{s}][{a}] has a negative or non-finite entry"));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > PROB_TOL {
                    return bad(format!("P[{s}][{a}] sums to {total}"));
                }
                flat_p.extend_from_slice(row);
                let r = reward[s][a];
                if !r.is_finite() || r < r_lo - PROB_TOL || r > r_hi + PROB_TOL {
                    return bad(format!("reward[{s}][{a}] = {r} outside [{r_lo}, {r_hi}]"));
                }
                flat_r.push(r);
            }
            if !feasible_mask[s].iter().any(|&f| f) {
                return bad(format!("state {s} has an empty feasible set"));
            }
            flat_f.extend_from_slice(&feasible_mask[s]);
        }

        if initial_dist.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
            return bad("initial_dist has a negative or non-finite entry".into());
        }
        let init_total: f64 = initial_dist.iter().sum();
        if (init_total - 1.0).abs() > PROB_TOL {
            return bad(format!("initial_dist sums to {init_total}"));
        }
        if initial_dist
            .iter()
            .zip(&terminal_mask)
            .any(|(&p, &term)| term && p > 0.0)
        {
            return bad("initial_dist puts mass on a terminal state".into());
        }
        // Terminal states pay 0 forever, so 0 must be an attainable reward.
        if terminal_mask.iter().any(|&t| t) && !(r_lo <= 0.0 && 0.0 <= r_hi) {
            return bad("reward bounds must contain 0 when terminal states exist".into());
        }

        let flat_realized = match realized_reward {
            None => None,
            Some(rr) => {
                let mut flat = Vec::with_capacity(ns * na * ns);
                if rr.len() != ns {
                    return bad("realized_reward outer dimension must equal n_states".into());
                }
                for s in 0..ns {
                    if rr[s].len() != na {
                        return bad(format!("realized_reward[{s}] action dimension mismatch"));
                    }
                    for a in 0..na {
                        if rr[s][a].len() != ns {
                            return bad(format!("realized_reward[{s}][{a}] length mismatch"));
                        }
                        let mut expectation = 0.0;
                        for (sp, &x) in rr[s][a].iter().enumerate() {
                            let p = transition[s][a][sp];
                            if p > 0.0 && (x < r_lo - PROB_TOL || x > r_hi + PROB_TOL) {
                                return bad(format!(
                                    "realized_reward[{s}][{a}][{sp}] = {x} outside bounds"
                                ));
                            }
                            expectation += p * x;
                        }
                        if (expectation - reward[s][a]).abs() > 1e-9 {
                            return bad(format!(
                                "realized reward expectation at ({s},{a}) is {expectation}, \
                                 reward table says {}",
                                reward[s][a]
                            ));
                        }
                        flat.extend_from_slice(&rr[s][a]);
                    }
                }
                Some(flat)
            }
        };

        Ok(Self {
            n_states: ns,
            n_actions: na,
            transition: flat_p,
            reward: flat_r,
            realized_reward: flat_realized,
            reward_bounds,
            gamma,
            horizon,
            initial_dist,
            terminal_mask,
            feasible_mask: flat_f,
        })
    }

    pub fn to_parts(&self) -> MdpParts {
        let (ns, na) = (self.n_states, self.n_actions);
        let nested3 = |flat: &[f64]| -> Vec<Vec<Vec<f64>>> {
            (0..ns)
                .map(|s| {
                    (0..na)
                        .map(|a| flat[(s * na + a) * ns..(s * na + a + 1) * ns].to_vec())
                        .collect()
                })
                .collect()
        };
        MdpParts {
            n_states: ns,
            n_actions: na,
            transition: nested3(&self.transition),
            reward: self.reward.chunks(na).map(|c| c.to_vec()).collect(),
            realized_reward: self.realized_reward.as_deref().map(nested3),
            reward_bounds: self.reward_bounds,
            gamma: self.gamma,
            horizon: self.horizon,
            initial_dist: self.initial_dist.clone(),
            terminal_mask: self.terminal_mask.clone(),
            feasible_mask: self.feasible_mask.chunks(na).map(|c| c.to_vec()).collect(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn reward_bounds(&self) -> (f64, f64) {
        self.reward_bounds
    }

    /// Next-state distribution `P(· | s, a)`.
    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        let ns = self.n_states;
        let off = (s * self.n_actions + a) * ns;
        &self.transition[off..off + ns]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    /// Realized reward for the transition `s --a--> next`; the expected reward
    /// when no realized table is attached.
    pub fn realized_reward(&self, s: usize, a: usize, next: usize) -> f64 {
        match &self.realized_reward {
            Some(rr) => rr[(s * self.n_actions + a) * self.n_states + next],
            None => self.reward(s, a),
        }
    }

    pub fn has_realized_reward(&self) -> bool {
        self.realized_reward.is_some()
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal_mask[s]
    }

    pub fn terminal_mask(&self) -> &[bool] {
        &self.terminal_mask
    }

    pub fn is_feasible(&self, s: usize, a: usize) -> bool {
        self.feasible_mask[s * self.n_actions + a]
    }

    pub fn feasible_actions(&self, s: usize) -> Vec<usize> {
        (0..self.n_actions)
            .filter(|&a| self.is_feasible(s, a))
            .collect()
    }

    /// Copy of this MDP with a different feasible mask.
    pub fn with_feasible_mask(&self, mask: Vec<Vec<bool>>) -> Result<Self> {
        let mut parts = self.to_parts();
        parts.feasible_mask = mask;
        Self::new(parts)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&MdpDocument::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        doc.into_spec()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T> Tensor<T> {
    fn check(&self, name: &str, shape: &[usize]) -> Result<()> {
        let n: usize = shape.iter().product();
        if self.shape != shape || self.data.len() != n {
            return Err(Error::ShapeMismatch {
                expected: format!("{name} {shape:?}"),
                found: format!("{:?} with {} values", self.shape, self.data.len()),
            });
        }
        Ok(())
    }
}

/// On-disk MDP document: nested key/value with explicit tensor shapes.
#[derive(Debug, Serialize, Deserialize)]
struct MdpDocument {
    format: String,
    version: u32,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    horizon: usize,
    reward_bounds: [f64; 2],
    transition: Tensor<f64>,
    reward: Tensor<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    realized_reward: Option<Tensor<f64>>,
    initial_dist: Tensor<f64>,
    terminal_mask: Tensor<bool>,
    feasible_mask: Tensor<bool>,
}

const MDP_FORMAT: &str = "offrl-mdp";
const MDP_VERSION: u32 = 1;

impl From<&MdpSpec> for MdpDocument {
    fn from(m: &MdpSpec) -> Self {
        let (ns, na) = (m.n_states, m.n_actions);
        MdpDocument {
            format: MDP_FORMAT.into(),
            version: MDP_VERSION,
            n_states: ns,
            n_actions: na,
            gamma: m.gamma,
            horizon: m.horizon,
            reward_bounds: [m.reward_bounds.0, m.reward_bounds.1],
            transition: Tensor {
                shape: vec![ns, na, ns],
                data: m.transition.clone(),
            },
            reward: Tensor {
                shape: vec![ns, na],
                data: m.reward.clone(),
            },
            realized_reward: m.realized_reward.as_ref().map(|rr| Tensor {
                shape: vec![ns, na, ns],
                data: rr.clone(),
            }),
            initial_dist: Tensor {
                shape: vec![ns],
                data: m.initial_dist.clone(),
            },
            terminal_mask: Tensor {
                shape: vec![ns],
                data: m.terminal_mask.clone(),
            },
            feasible_mask: Tensor {
                shape: vec![ns, na],
                data: m.feasible_mask.clone(),
            },
        }
    }
}

impl MdpDocument {
    fn into_spec(self) -> Result<MdpSpec> {
        if self.format != MDP_FORMAT || self.version != MDP_VERSION {
            return Err(Error::InvalidMdp(format!(
                "unsupported document {} v{}",
                self.format, self.version
            )));
        }
        let (ns, na) = (self.n_states, self.n_actions);
        self.transition.check("transition", &[ns, na, ns])?;
        self.reward.check("reward", &[ns, na])?;
        self.initial_dist.check("initial_dist", &[ns])?;
        self.terminal_mask.check("terminal_mask", &[ns])?;
        self.feasible_mask.check("feasible_mask", &[ns, na])?;
        if let Some(rr) = &self.realized_reward {
            rr.check("realized_reward", &[ns, na, ns])?;
        }
        let nest3 = |d: &[f64]| -> Vec<Vec<Vec<f64>>> {
            d.chunks(na * ns)
                .map(|sa| sa.chunks(ns).map(|r| r.to_vec()).collect())
                .collect()
        };
        MdpSpec::new(MdpParts {
            n_states: ns,
            n_actions: na,
            transition: nest3(&self.transition.data),
            reward: self.reward.data.chunks(na).map(|c| c.to_vec()).collect(),
            realized_reward: self.realized_reward.as_ref().map(|t| nest3(&t.data)),
            reward_bounds: (self.reward_bounds[0], self.reward_bounds[1]),
            gamma: self.gamma,
            horizon: self.horizon,
            initial_dist: self.initial_dist.data,
            terminal_mask: self.terminal_mask.data,
            feasible_mask: self
                .feasible_mask
                .data
                .chunks(na)
                .map(|c| c.to_vec())
                .collect(),
        })
    }
}

/// A stationary policy over dense state ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    Deterministic {
        n_actions: usize,
        actions: Vec<usize>,
    },
    Stochastic {
        probs: Vec<Vec<f64>>,
    },
}

impl Policy {
    pub fn deterministic(actions: Vec<usize>, n_actions: usize) -> Result<Self> {
        if let Some((s, &a)) = actions.iter().enumerate().find(|(_, &a)| a >= n_actions) {
            return Err(Error::InvalidPolicy(format!(
                "state {s} maps to action {a}, only {n_actions} actions exist"
            )));
        }
        Ok(Policy::Deterministic { n_actions, actions })
    }

    pub fn stochastic(probs: Vec<Vec<f64>>) -> Result<Self> {
        let width = probs.first().map_or(0, |r| r.len());
        if width == 0 {
            return Err(Error::InvalidPolicy("empty probability table".into()));
        }
        for (s, row) in probs.iter().enumerate() {
            if row.len() != width {
                return Err(Error::InvalidPolicy(format!(
                    "row {s} has a different width"
                )));
            }
            if row.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
                return Err(Error::InvalidPolicy(format!(
                    "row {s} has a negative entry"
                )));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > PROB_TOL {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {total}")));
            }
        }
        Ok(Policy::Stochastic { probs })
    }

    /// Uniform random policy.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy::Stochastic {
            probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        match self {
            Policy::Deterministic { actions, .. } => actions.len(),
            Policy::Stochastic { probs } => probs.len(),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Policy::Deterministic { n_actions, .. } => *n_actions,
            Policy::Stochastic { probs } => probs[0].len(),
        }
    }

    pub fn is_deterministic(&self) -> bool {
        matches!(self, Policy::Deterministic { .. })
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        match self {
            Policy::Deterministic { actions, .. } => f64::from(u8::from(actions[s] == a)),
            Policy::Stochastic { probs } => probs[s].get(a).copied().unwrap_or(0.0),
        }
    }

    pub fn distribution(&self, s: usize) -> Vec<f64> {
        match self {
            Policy::Deterministic { n_actions, actions } => {
                let mut d = vec![0.0; *n_actions];
                d[actions[s]] = 1.0;
                d
            }
            Policy::Stochastic { probs } => probs[s].clone(),
        }
    }

    /// The recommended action: the action itself for deterministic policies,
    /// the lowest-id mode for stochastic ones.
    pub fn action(&self, s: usize) -> usize {
        match self {
            Policy::Deterministic { actions, .. } => actions[s],
            Policy::Stochastic { probs } => argmax(&probs[s]),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        match self {
            Policy::Deterministic { actions, .. } => actions[s],
            Policy::Stochastic { probs } => sample_categorical(&probs[s], rng),
        }
    }

    /// Deterministic policy taking the mode of every row.
    pub fn to_deterministic(&self) -> Policy {
        let n = self.n_states();
        Policy::Deterministic {
            n_actions: self.n_actions(),
            actions: (0..n).map(|s| self.action(s)).collect(),
        }
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Argmax restricted to `allowed`, lowest index on ties. `None` when nothing
/// is allowed.
pub fn masked_argmax(xs: &[f64], allowed: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in xs.iter().enumerate() {
        if allowed(i) && best.is_none_or(|b| x > xs[b]) {
            best = Some(i);
        }
    }
    best
}

/// Per-episode strata tags, computed from the episode id and initial state.
pub type StrataFn<'a> = dyn Fn(u64, usize) -> Vec<u32> + 'a;

#[derive(Default)]
pub struct RolloutOptions<'a> {
    pub strata: Option<&'a StrataFn<'a>>,
    /// First episode id to assign.
    pub first_episode_id: u64,
}

/// Roll out `n_episodes` episodes of `policy` in `mdp`.
pub fn rollout(
    mdp: &MdpSpec,
    policy: &Policy,
    n_episodes: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    rollout_with(mdp, policy, n_episodes, seed, &RolloutOptions::default())
}

pub fn rollout_with(
    mdp: &MdpSpec,
    policy: &Policy,
    n_episodes: usize,
    seed: u64,
    opts: &RolloutOptions<'_>,
) -> Result<TransitionDataset> {
    check_policy_for(mdp, policy)?;
    let mut rng = seeded(seed);
    let mut records = Vec::with_capacity(n_episodes * mdp.horizon());
    for ep in 0..n_episodes {
        let episode_id = opts.first_episode_id + ep as u64;
        let mut s = sample_categorical(mdp.initial_dist(), &mut rng);
        let strata = opts.strata.map(|f| f(episode_id, s)).unwrap_or_default();
        for t in 0..mdp.horizon() {
            let a = policy.sample(s, &mut rng);
            let next = sample_categorical(mdp.transition(s, a), &mut rng);
            let done = t + 1 == mdp.horizon() || mdp.is_terminal(next);
            records.push(TransitionRecord {
                episode_id,
                t: t as u32,
                state: s,
                action: a,
                reward: mdp.realized_reward(s, a, next),
                next_state: next,
                done,
                strata: strata.clone(),
            });
            if done {
                break;
            }
            s = next;
        }
    }
    TransitionDataset::from_episodes(mdp.n_states(), mdp.n_actions(), records)
}

/// Policy must cover every state and put no mass outside `[0, n_actions)`.
pub fn check_policy_for(mdp: &MdpSpec, policy: &Policy) -> Result<()> {
    if policy.n_states() != mdp.n_states() {
        return Err(Error::InvalidPolicy(format!(
            "policy covers {} states, MDP has {}",
            policy.n_states(),
            mdp.n_states()
        )));
    }
    let na = mdp.n_actions();
    match policy {
        Policy::Deterministic { actions, .. } => {
            if let Some((s, &a)) = actions.iter().enumerate().find(|(_, &a)| a >= na) {
                return Err(Error::InvalidPolicy(format!(
                    "state {s}: action {a} outside [0, {na})"
                )));
            }
        }
        Policy::Stochastic { probs } => {
            for (s, row) in probs.iter().enumerate() {
                if row.iter().skip(na).any(|&p| p > 0.0) {
                    return Err(Error::InvalidPolicy(format!(
                        "state {s}: positive probability on an action outside [0, {na})"
                    )));
                }
            }
        }
    }
    Ok(())
}
