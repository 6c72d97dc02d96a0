//! Critical-care dosing environment.
//!
//! States are latent severity levels plus two absorbing outcomes. Each action
//! is a (fluid bin, vasopressor bin) pair; doses close to what the current
//! severity calls for improve the patient, doses far from it do harm.
//! Reaching the survival state pays +1, reaching death pays -1, every other
//! step pays 0.

use serde::{Deserialize, Serialize};

use super::{ConstraintRuleSet, Environment, StrataSpec};
use crate::error::{Error, Result};
use crate::mdp::{MdpParts, MdpSpec, Policy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticalCareConfig {
    pub n_fluid_bins: usize,
    pub n_vaso_bins: usize,
    pub n_severity_levels: usize,
    /// Behavior probability of the lowest-dose action (0, 0).
    pub mode_prob: f64,
    pub horizon: usize,
    pub gamma: f64,
    pub seed: u64,
}

impl Default for CriticalCareConfig {
    fn default() -> Self {
        Self {
            n_fluid_bins: 5,
            n_vaso_bins: 5,
            n_severity_levels: 6,
            mode_prob: 0.271,
            horizon: 10,
            gamma: 0.9,
            seed: 0,
        }
    }
}

impl CriticalCareConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_fluid_bins == 0 || self.n_vaso_bins == 0 || self.n_actions() < 2 {
            return fail("need at least two dose combinations".into());
        }
        if self.n_severity_levels < 2 {
            return fail("need at least 2 severity levels".into());
        }
        if !(0.0..1.0).contains(&self.mode_prob) {
            return fail(format!(
                "mode_prob must lie in [0, 1), got {}",
                self.mode_prob
            ));
        }
        if self.horizon == 0 {
            return fail("horizon must be positive".into());
        }
        Ok(())
    }

    pub fn n_actions(&self) -> usize {
        self.n_fluid_bins * self.n_vaso_bins
    }

    pub fn survival_state(&self) -> usize {
        self.n_severity_levels
    }

    pub fn death_state(&self) -> usize {
        self.n_severity_levels + 1
    }

    pub fn action(&self, fluid: usize, vaso: usize) -> usize {
        fluid * self.n_vaso_bins + vaso
    }
}

/// Dose bins the severity level calls for.
fn needed_dose(sev: usize, cfg: &CriticalCareConfig) -> (f64, f64) {
    let x = sev as f64 / (cfg.n_severity_levels - 1) as f64;
    let fluid = x * (cfg.n_fluid_bins - 1) as f64;
    let vaso = ((x - 0.4) / 0.6).max(0.0) * (cfg.n_vaso_bins - 1) as f64;
    (fluid, vaso)
}

fn dose_match(sev: usize, fluid: usize, vaso: usize, cfg: &CriticalCareConfig) -> f64 {
    let (nf, nv) = needed_dose(sev, cfg);
    let d2 = (fluid as f64 - nf).powi(2) + (vaso as f64 - nv).powi(2);
    (-d2 / 2.0).exp()
}

fn behavior_row(sev: usize, cfg: &CriticalCareConfig) -> Vec<f64> {
    let (nf, nv) = needed_dose(sev, cfg);
    let (cf, cv) = (nf.round() as i64, nv.round() as i64);
    let mut row = vec![0.0; cfg.n_actions()];
    let mut total = 0.0;
    for f in 0..cfg.n_fluid_bins {
        for v in 0..cfg.n_vaso_bins {
            let a = cfg.action(f, v);
            if a == 0 {
                continue;
            }
            let dist = (f as i64 - cf).abs() + (v as i64 - cv).abs();
            row[a] = 0.5f64.powi(dist as i32);
            total += row[a];
        }
    }
    for p in row.iter_mut() {
        *p *= (1.0 - cfg.mode_prob) / total;
    }
    row[0] = cfg.mode_prob;
    row
}

pub fn build_critical_care(cfg: &CriticalCareConfig) -> Result<Environment> {
    cfg.validate()?;
    let n_sev = cfg.n_severity_levels;
    let ns = n_sev + 2;
    let na = cfg.n_actions();
    let (alive, dead) = (cfg.survival_state(), cfg.death_state());

    let mut transition = vec![vec![vec![0.0; ns]; na]; ns];
    let mut realized = vec![vec![vec![0.0; ns]; na]; ns];
    let mut reward = vec![vec![0.0; na]; ns];
    for s in 0..ns {
        for f in 0..cfg.n_fluid_bins {
            for v in 0..cfg.n_vaso_bins {
                let a = cfg.action(f, v);
                if s >= n_sev {
                    transition[s][a][s] = 1.0;
                    continue;
                }
                let m = dose_match(s, f, v, cfg);
                let better = 0.10 + 0.45 * m;
                let worse = 0.05 + 0.30 * (1.0 - m);
                let up = if s == 0 { alive } else { s - 1 };
                let down = if s + 1 == n_sev { dead } else { s + 1 };
                transition[s][a][up] += better;
                transition[s][a][down] += worse;
                transition[s][a][s] += 1.0 - better - worse;
                realized[s][a][alive] = 1.0;
                realized[s][a][dead] = -1.0;
                reward[s][a] = transition[s][a][alive] - transition[s][a][dead];
            }
        }
    }

    let mut initial = vec![0.0; ns];
    for (sev, p) in initial.iter_mut().enumerate().take(n_sev).skip(1) {
        // Milder presentations are more common.
        *p = 1.0 / sev as f64;
    }
    let z: f64 = initial.iter().sum();
    initial.iter_mut().for_each(|p| *p /= z);

    let mut terminal = vec![false; ns];
    terminal[alive] = true;
    terminal[dead] = true;

    let rules = ConstraintRuleSet::new(ns, na, Vec::new())?;
    let mdp = MdpSpec::new(MdpParts {
        n_states: ns,
        n_actions: na,
        transition,
        reward,
        realized_reward: Some(realized),
        reward_bounds: (-1.0, 1.0),
        gamma: cfg.gamma,
        horizon: cfg.horizon,
        initial_dist: initial,
        terminal_mask: terminal,
        feasible_mask: rules.mask(),
    })?;

    let uniform = vec![1.0 / na as f64; na];
    let behavior = Policy::stochastic(
        (0..ns)
            .map(|s| {
                if s < n_sev {
                    behavior_row(s, cfg)
                } else {
                    uniform.clone()
                }
            })
            .collect(),
    )?;

    let action_names = (0..na)
        .map(|a| {
            format!(
                "fluid{}_vaso{}",
                a / cfg.n_vaso_bins + 1,
                a % cfg.n_vaso_bins + 1
            )
        })
        .collect();

    Ok(Environment {
        name: "critical-care".into(),
        mdp,
        behavior,
        rules,
        action_names,
        // Severe states call for escalation beyond the lowest dose.
        out_of_control: (0..ns).map(|s| s < n_sev && 2 * s >= n_sev).collect(),
        non_intensifying: vec![0],
        strata: StrataSpec {
            names: vec!["sex".into(), "age_band".into(), "readmission".into()],
            levels: vec![2, 3, 2],
            linked: None,
        },
        action_grid: Some((cfg.n_fluid_bins, cfg.n_vaso_bins)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_terminals() {
        let cfg = CriticalCareConfig::default();
        let env = build_critical_care(&cfg).unwrap();
        assert_eq!(env.mdp.n_actions(), 25);
        assert!(env.mdp.is_terminal(cfg.survival_state()));
        assert!(env.mdp.is_terminal(cfg.death_state()));
        assert_eq!(env.mdp.initial_dist()[cfg.survival_state()], 0.0);
    }

    #[test]
    fn mode_probability_everywhere() {
        let cfg = CriticalCareConfig::default();
        let env = build_critical_care(&cfg).unwrap();
        for s in 0..cfg.n_severity_levels {
            assert!((env.behavior.prob(s, 0) - 0.271).abs() < 1e-12);
        }
    }

    #[test]
    fn interior_steps_pay_nothing() {
        let cfg = CriticalCareConfig::default();
        let env = build_critical_care(&cfg).unwrap();
        assert_eq!(env.mdp.realized_reward(2, 3, 1), 0.0);
        assert_eq!(env.mdp.realized_reward(0, 3, cfg.survival_state()), 1.0);
        assert_eq!(env.mdp.realized_reward(5, 3, cfg.death_state()), -1.0);
    }
}
