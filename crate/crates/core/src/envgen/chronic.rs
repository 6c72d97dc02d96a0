//! Chronic-care treatment environment.
//!
//! A patient's state is a control level (0 = at target, higher = worse), a
//! set of static risk flags and the adverse event observed on the last
//! visit. Actions are "no change", "increase dose", "decrease dose" and a
//! list of add-on drugs that differ in efficacy and hypoglycemia risk.
//! Taking a drug that one of the patient's flags rules out raises the
//! complication risk.

use serde::{Deserialize, Serialize};

use super::{ConstraintRule, ConstraintRuleSet, Environment, StrataSpec};
use crate::error::{Error, Result};
use crate::mdp::{MdpParts, MdpSpec, Policy};

pub const NO_CHANGE: usize = 0;
pub const INCREASE: usize = 1;
pub const DECREASE: usize = 2;
const FIRST_DRUG: usize = 3;

const EVENTS: usize = 3;
const EVENT_NONE: usize = 0;
const EVENT_HYPO: usize = 1;
const EVENT_COMPL: usize = 2;

struct Drug {
    name: &'static str,
    /// Probability of improving one control level per visit.
    efficacy: f64,
    /// Additive hypoglycemia log-odds.
    hypo: f64,
    /// Relative weight in the behavior policy's add-on mass.
    usage: f64,
}

const DRUGS: [Drug; 10] = [
    Drug {
        name: "acarbose",
        efficacy: 0.25,
        hypo: 0.0,
        usage: 3.0,
    },
    Drug {
        name: "dpp4",
        efficacy: 0.30,
        hypo: 0.0,
        usage: 4.0,
    },
    Drug {
        name: "biguanide",
        efficacy: 0.40,
        hypo: 0.0,
        usage: 5.0,
    },
    Drug {
        name: "sglt2",
        efficacy: 0.40,
        hypo: 0.2,
        usage: 3.0,
    },
    Drug {
        name: "sulfonylurea",
        efficacy: 0.45,
        hypo: 1.5,
        usage: 4.0,
    },
    Drug {
        name: "tzd",
        efficacy: 0.35,
        hypo: 0.2,
        usage: 2.0,
    },
    Drug {
        name: "glp1",
        efficacy: 0.55,
        hypo: 0.0,
        usage: 0.5,
    },
    Drug {
        name: "insulin_long",
        efficacy: 0.60,
        hypo: 2.0,
        usage: 1.0,
    },
    Drug {
        name: "insulin_premixed",
        efficacy: 0.60,
        hypo: 2.3,
        usage: 0.7,
    },
    Drug {
        name: "insulin_rapid",
        efficacy: 0.65,
        hypo: 2.5,
        usage: 0.3,
    },
];

/// Risk flags and the drug each one rules out.
const FLAGS: [(&str, usize); 4] = [
    ("renal_severe", FIRST_DRUG + 2),
    ("renal_moderate", FIRST_DRUG + 3),
    ("pancreatitis", FIRST_DRUG + 6),
    ("elderly", FIRST_DRUG + 4),
];

const FLAG_PREVALENCE: [f64; 4] = [0.10, 0.20, 0.08, 0.30];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChronicCareConfig {
    pub n_control_levels: usize,
    pub n_risk_flags: usize,
    pub n_actions: usize,
    /// Behavior probability of "no change", in every state.
    pub inertia_prob: f64,
    /// Weights of (at target, hypoglycemia, complication) in the reward.
    pub reward_weights: (f64, f64, f64),
    pub horizon: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for ChronicCareConfig {
    fn default() -> Self {
        Self {
            n_control_levels: 4,
            n_risk_flags: 4,
            n_actions: 13,
            inertia_prob: 0.64,
            reward_weights: (1.0, 2.0, 4.0),
            horizon: 10,
            gamma: 0.9,
            seed: 0,
        }
    }
}

impl ChronicCareConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_actions < 4 || self.n_actions > FIRST_DRUG + DRUGS.len() {
            return fail(format!(
                "n_actions must be in 4..={}, got {}",
                FIRST_DRUG + DRUGS.len(),
                self.n_actions
            ));
        }
        if self.n_control_levels < 2 {
            return fail("need at least 2 control levels".into());
        }
        if self.n_risk_flags > FLAGS.len() {
            return fail(format!("at most {} risk flags", FLAGS.len()));
        }
        if let Some((name, a)) = FLAGS[..self.n_risk_flags]
            .iter()
            .find(|(_, a)| *a >= self.n_actions)
        {
            return fail(format!(
                "flag {name} forbids action {a}, which needs n_actions > {a}"
            ));
        }
        if !(0.0..=1.0).contains(&self.inertia_prob) {
            return fail(format!(
                "inertia_prob must lie in [0, 1], got {}",
                self.inertia_prob
            ));
        }
        let (a, b, c) = self.reward_weights;
        if !(a > 0.0 && b > 0.0 && c > 0.0) {
            return fail("reward weights must be positive".into());
        }
        if self.horizon == 0 {
            return fail("horizon must be positive".into());
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_control_levels * (1 << self.n_risk_flags) * EVENTS
    }
}

/// Decoded chronic-care state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChronicState {
    pub level: usize,
    pub flags: u32,
    pub event: usize,
}

impl ChronicState {
    pub fn encode(&self, cfg: &ChronicCareConfig) -> usize {
        (self.level * (1 << cfg.n_risk_flags) + self.flags as usize) * EVENTS + self.event
    }

    pub fn decode(s: usize, cfg: &ChronicCareConfig) -> Self {
        let event = s % EVENTS;
        let rest = s / EVENTS;
        let combos = 1 << cfg.n_risk_flags;
        Self {
            level: rest / combos,
            flags: (rest % combos) as u32,
            event,
        }
    }

    pub fn has_flag(&self, i: usize) -> bool {
        self.flags >> i & 1 == 1
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct ActionEffect {
    down: f64,
    up: f64,
    hypo: f64,
}

fn action_effect(a: usize, in_control: bool) -> ActionEffect {
    match a {
        NO_CHANGE => ActionEffect {
            down: 0.10,
            up: 0.10,
            hypo: 0.0,
        },
        INCREASE => ActionEffect {
            down: 0.45,
            up: 0.04,
            hypo: 1.0,
        },
        DECREASE => ActionEffect {
            down: 0.03,
            up: 0.30,
            hypo: -1.0,
        },
        _ => {
            let d = &DRUGS[a - FIRST_DRUG];
            ActionEffect {
                down: d.efficacy,
                up: if in_control { 0.08 } else { 0.05 },
                hypo: d.hypo,
            }
        }
    }
}

fn forbidden_for(st: &ChronicState, a: usize, cfg: &ChronicCareConfig) -> bool {
    (0..cfg.n_risk_flags).any(|i| st.has_flag(i) && FLAGS[i].1 == a)
}

fn event_probs(st: &ChronicState, a: usize, cfg: &ChronicCareConfig) -> [f64; EVENTS] {
    let in_control = st.level == 0;
    let eff = action_effect(a, in_control);
    // Treating a patient already at target is the main hypoglycemia driver.
    let hypo = logistic(-4.0 + eff.hypo + if in_control { 2.5 } else { 0.0 });
    let mut compl_logit = -4.5 + 0.5 * st.level as f64;
    if forbidden_for(st, a, cfg) {
        compl_logit += 3.0;
    }
    let compl = logistic(compl_logit) * (1.0 - hypo);
    let mut p = [0.0; EVENTS];
    p[EVENT_NONE] = 1.0 - hypo - compl;
    p[EVENT_HYPO] = hypo;
    p[EVENT_COMPL] = compl;
    p
}

fn level_probs(st: &ChronicState, a: usize, cfg: &ChronicCareConfig) -> Vec<f64> {
    let top = cfg.n_control_levels - 1;
    let eff = action_effect(a, st.level == 0);
    let mut p = vec![0.0; cfg.n_control_levels];
    let down = if st.level == 0 { 0.0 } else { eff.down };
    let up = if st.level == top { 0.0 } else { eff.up };
    p[st.level] = 1.0 - down - up;
    if down > 0.0 {
        p[st.level - 1] += down;
    }
    if up > 0.0 {
        p[st.level + 1] += up;
    }
    p
}

fn behavior_row(st: &ChronicState, cfg: &ChronicCareConfig) -> Vec<f64> {
    let na = cfg.n_actions;
    let mut row = vec![0.0; na];
    let rest = 1.0 - cfg.inertia_prob;
    row[NO_CHANGE] = cfg.inertia_prob;
    let n_drugs = na - FIRST_DRUG;
    let (main, main_share, other, other_share, drug_share) = if st.level == 0 {
        (DECREASE, 0.70, INCREASE, 0.10, 0.20)
    } else {
        (INCREASE, 0.40, DECREASE, 0.10, 0.50)
    };
    row[main] = rest * main_share;
    row[other] = rest * other_share;
    let usage: f64 = DRUGS[..n_drugs].iter().map(|d| d.usage).sum();
    for (i, d) in DRUGS[..n_drugs].iter().enumerate() {
        row[FIRST_DRUG + i] = rest * drug_share * d.usage / usage;
    }
    // Clinicians mostly respect contraindications.
    for a in FIRST_DRUG..na {
        if forbidden_for(st, a, cfg) {
            let moved = row[a] * 0.98;
            row[a] -= moved;
            row[main] += moved;
        }
    }
    let total: f64 = row.iter().sum();
    row.iter_mut().for_each(|p| *p /= total);
    row
}

/// Build the chronic-care MDP, its behavior policy and its rule set.
pub fn build_chronic_care(cfg: &ChronicCareConfig) -> Result<Environment> {
    cfg.validate()?;
    let ns = cfg.n_states();
    let na = cfg.n_actions;
    let (w_target, w_hypo, w_compl) = cfg.reward_weights;
    let event_reward = [0.0, -w_hypo, -w_compl];

    let mut transition = vec![vec![vec![0.0; ns]; na]; ns];
    let mut realized = vec![vec![vec![0.0; ns]; na]; ns];
    let mut reward = vec![vec![0.0; na]; ns];
    for s in 0..ns {
        let st = ChronicState::decode(s, cfg);
        for a in 0..na {
            let levels = level_probs(&st, a, cfg);
            let events = event_probs(&st, a, cfg);
            let mut expected = 0.0;
            for (lv, &pl) in levels.iter().enumerate() {
                for (ev, &pe) in events.iter().enumerate() {
                    let next = ChronicState {
                        level: lv,
                        flags: st.flags,
                        event: ev,
                    }
                    .encode(cfg);
                    let r = if lv == 0 { w_target } else { 0.0 } + event_reward[ev];
                    transition[s][a][next] += pl * pe;
                    realized[s][a][next] = r;
                    expected += pl * pe * r;
                }
            }
            reward[s][a] = expected;
        }
    }

    let mut initial = vec![0.0; ns];
    let level_init: Vec<f64> = (0..cfg.n_control_levels)
        .map(|l| {
            if l == 0 {
                0.15
            } else {
                0.85 / (cfg.n_control_levels - 1) as f64
            }
        })
        .collect();
    for (s, p) in initial.iter_mut().enumerate() {
        let st = ChronicState::decode(s, cfg);
        if st.event != EVENT_NONE {
            continue;
        }
        let mut mass = level_init[st.level];
        for (i, prev) in FLAG_PREVALENCE[..cfg.n_risk_flags].iter().enumerate() {
            mass *= if st.has_flag(i) { *prev } else { 1.0 - prev };
        }
        *p = mass;
    }

    let rules: Vec<ConstraintRule> = FLAGS[..cfg.n_risk_flags]
        .iter()
        .enumerate()
        .map(|(i, (name, a))| ConstraintRule {
            name: (*name).to_string(),
            applies: (0..ns)
                .map(|s| ChronicState::decode(s, cfg).has_flag(i))
                .collect(),
            forbidden: vec![*a],
        })
        .collect();
    let rules = ConstraintRuleSet::new(ns, na, rules)?;

    let mdp = MdpSpec::new(MdpParts {
        n_states: ns,
        n_actions: na,
        transition,
        reward,
        realized_reward: Some(realized),
        reward_bounds: (-w_compl, w_target),
        gamma: cfg.gamma,
        horizon: cfg.horizon,
        initial_dist: initial,
        terminal_mask: vec![false; ns],
        feasible_mask: rules.mask(),
    })?;

    let behavior = Policy::stochastic(
        (0..ns)
            .map(|s| behavior_row(&ChronicState::decode(s, cfg), cfg))
            .collect(),
    )?;

    let mut action_names = vec![
        "no_change".to_string(),
        "increase".into(),
        "decrease".into(),
    ];
    action_names.extend(
        DRUGS[..na - FIRST_DRUG]
            .iter()
            .map(|d| format!("add_{}", d.name)),
    );

    let elderly_pos = FLAGS
        .iter()
        .position(|(n, _)| *n == "elderly")
        .filter(|&i| i < cfg.n_risk_flags);
    let strata = StrataSpec {
        names: vec!["sex".into(), "age_band".into(), "duration_band".into()],
        levels: vec![2, 3, 3],
        linked: elderly_pos.map(|i| {
            (
                1,
                2,
                (0..ns)
                    .map(|s| ChronicState::decode(s, cfg).has_flag(i))
                    .collect(),
            )
        }),
    };

    Ok(Environment {
        name: "chronic-care".into(),
        out_of_control: (0..ns)
            .map(|s| ChronicState::decode(s, cfg).level > 0)
            .collect(),
        non_intensifying: vec![NO_CHANGE, DECREASE],
        mdp,
        behavior,
        rules,
        action_names,
        strata,
        action_grid: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::FeasibleSets;

    #[test]
    fn state_encoding_round_trips() {
        let cfg = ChronicCareConfig::default();
        assert_eq!(cfg.n_states(), 192);
        for s in 0..cfg.n_states() {
            assert_eq!(ChronicState::decode(s, &cfg).encode(&cfg), s);
        }
    }

    #[test]
    fn feasible_sets_follow_flags() {
        let cfg = ChronicCareConfig::default();
        let env = build_chronic_care(&cfg).unwrap();
        let clean = ChronicState {
            level: 2,
            flags: 0,
            event: 0,
        }
        .encode(&cfg);
        assert_eq!(env.rules.feasible_set(clean).len(), 13);
        let renal = ChronicState {
            level: 2,
            flags: 0b0001,
            event: 0,
        }
        .encode(&cfg);
        let fs = env.rules.feasible_set(renal);
        assert_eq!(fs.len(), 12);
        assert!(!fs.contains(&(FIRST_DRUG + 2)));
        let all = ChronicState {
            level: 1,
            flags: 0b1111,
            event: 0,
        }
        .encode(&cfg);
        assert_eq!(env.rules.feasible_set(all).len(), 9);
    }

    #[test]
    fn behavior_rows_have_inertia_and_respect_rules() {
        let cfg = ChronicCareConfig::default();
        let env = build_chronic_care(&cfg).unwrap();
        for s in 0..cfg.n_states() {
            assert!((env.behavior.prob(s, NO_CHANGE) - 0.64).abs() < 1e-12);
            let forbidden: f64 = (0..13)
                .filter(|&a| !env.rules.is_feasible(s, a))
                .map(|a| env.behavior.prob(s, a))
                .sum();
            assert!(forbidden <= 0.02);
        }
    }

    #[test]
    fn realized_reward_extremes() {
        let cfg = ChronicCareConfig::default();
        let env = build_chronic_care(&cfg).unwrap();
        let s = ChronicState {
            level: 1,
            flags: 0,
            event: 0,
        }
        .encode(&cfg);
        let to_target = ChronicState {
            level: 0,
            flags: 0,
            event: EVENT_NONE,
        }
        .encode(&cfg);
        let to_compl = ChronicState {
            level: 1,
            flags: 0,
            event: EVENT_COMPL,
        }
        .encode(&cfg);
        let to_hypo_target = ChronicState {
            level: 0,
            flags: 0,
            event: EVENT_HYPO,
        }
        .encode(&cfg);
        assert_eq!(env.mdp.realized_reward(s, INCREASE, to_target), 1.0);
        assert_eq!(env.mdp.realized_reward(s, INCREASE, to_compl), -4.0);
        assert_eq!(env.mdp.realized_reward(s, INCREASE, to_hypo_target), -1.0);
    }

    #[test]
    fn small_configs_build() {
        let cfg = ChronicCareConfig {
            n_actions: 4,
            n_risk_flags: 0,
            n_control_levels: 3,
            ..Default::default()
        };
        let env = build_chronic_care(&cfg).unwrap();
        assert_eq!(env.mdp.n_states(), 9);
        let bad = ChronicCareConfig {
            n_actions: 5,
            ..Default::default()
        };
        assert!(build_chronic_care(&bad).is_err());
    }
}
