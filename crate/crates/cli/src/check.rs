//! Property suite: constraint bound, loss gradients, resampling law, weight
//! accounting, WIS normalization and constrained satisfaction.

use std::str::FromStr;

use offrl::approx::{central_difference_check, Encoding, QFunction};
use offrl::constraints::{check_property1, constrain};
use offrl::dataset::{TransitionDataset, TransitionRecord};
use offrl::envgen::{
    build_chronic_care, random_mdp, ChronicCareConfig, Environment, RandomMdpConfig,
};
use offrl::learners::{greedy_policy, loss_gradient, loss_with_targets, targets_for, Algorithm};
use offrl::ope::{constraint_satisfaction_rate, soften, wis, DEFAULT_EPSILON};
use offrl::rng::{derive_seed, seeded};
use offrl::sampling::{
    expected_weights, resample, target_counts, verify_transition_preservation,
    PreservationTolerance, SamplingMode, SamplingPlan,
};
use offrl::text::{format_sig, Table};
use rand::Rng;

use crate::config::CheckConfig;
use crate::CliError;

/// Deliberate corruption of one property's inputs, to show the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Scale analytic gradients by 1.01.
    Gradient,
    /// Drop the commonest next state of the busiest pair from resampled data.
    Preservation,
    /// Demand a zero right-hand side in the constraint bound.
    Bound,
    /// Score the unconstrained argmax instead of the constrained one.
    Csr,
    /// Scale normalized WIS weights by 1.5.
    Wis,
}

impl FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gradient" => Ok(Fault::Gradient),
            "preservation" => Ok(Fault::Preservation),
            "bound" => Ok(Fault::Bound),
            "csr" => Ok(Fault::Csr),
            "wis" => Ok(Fault::Wis),
            _ => Err(format!(
                "unknown fault {s:?}; expected gradient, preservation, bound, csr or wis"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: String,
    pub instances: usize,
    pub failures: usize,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    pub detail: String,
}

impl PropertyResult {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub results: Vec<PropertyResult>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(PropertyResult::passed)
    }

    pub fn failed(&self) -> Vec<String> {
        self.results
            .iter()
            .filter(|r| !r.passed())
            .map(|r| r.name.clone())
            .collect()
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new([
            "property",
            "instances",
            "failures",
            "worst",
            "status",
            "detail",
        ]);
        for r in &self.results {
            t.push([
                r.name.clone(),
                r.instances.to_string(),
                r.failures.to_string(),
                format_sig(r.worst, 6),
                if r.passed() { "pass" } else { "FAIL" }.to_string(),
                r.detail.clone(),
            ]);
        }
        t
    }
}

/// Names of every registered property, in run order.
pub const PROPERTIES: [&str; 11] = [
    "constraint_bound",
    "gradient_qlearning",
    "gradient_ddqn",
    "gradient_cql",
    "preservation_under",
    "preservation_over",
    "preservation_underover",
    "weight_accounting",
    "underover_widest_span",
    "wis_self_normalization",
    "constrained_satisfaction",
];

pub const BOUND_TOL: f64 = 1e-9;
pub const GRADIENT_TOL: f64 = 1e-4;
pub const WIS_TOL: f64 = 1e-9;

fn random_table(ns: usize, na: usize, seed: u64) -> QFunction {
    let mut rng = seeded(seed);
    QFunction::Tabular {
        n_states: ns,
        n_actions: na,
        table: (0..ns * na).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    }
}

fn bound_check(cfg: &CheckConfig, fault: Option<Fault>) -> Result<PropertyResult, CliError> {
    let mut failures = 0;
    let mut worst = f64::INFINITY;
    for i in 0..cfg.bound_instances {
        let seed = derive_seed(cfg.seed, 1000 + i as u64);
        let mut rng = seeded(seed);
        let mdp_cfg = RandomMdpConfig {
            n_states: rng.gen_range(3..=8),
            n_actions: rng.gen_range(2..=4),
            horizon: rng.gen_range(1..=6),
            gamma: rng.gen_range(0.5..0.99),
            infeasible_prob: rng.gen_range(0.0..0.6),
            ..RandomMdpConfig::default()
        };
        let mdp = random_mdp(&mdp_cfg, derive_seed(seed, 1))?;
        let q = random_table(mdp.n_states(), mdp.n_actions(), derive_seed(seed, 2));
        let r = check_property1(&mdp, &q);
        let slack = if fault == Some(Fault::Bound) {
            -r.lhs
        } else {
            r.slack
        };
        worst = worst.min(slack);
        if slack < -BOUND_TOL {
            failures += 1;
        }
    }
    Ok(PropertyResult {
        name: "constraint_bound".into(),
        instances: cfg.bound_instances,
        failures,
        worst,
        detail: format!("min slack over random MDPs, tolerance {BOUND_TOL:e}"),
    })
}

fn gradient_check(
    cfg: &CheckConfig,
    alg: Algorithm,
    alpha: f64,
    fault: Option<Fault>,
) -> Result<PropertyResult, CliError> {
    let (ns, na) = (7, 4);
    let seed = derive_seed(cfg.seed, 2000 + alg as u64);
    let net = |s| {
        QFunction::network(
            Encoding::OneHot { n_states: ns },
            &[16, 16],
            na,
            &mut seeded(s),
        )
    };
    let q = net(derive_seed(seed, 1));
    let q_target = net(derive_seed(seed, 2));
    let mut rng = seeded(derive_seed(seed, 3));
    let recs: Vec<TransitionRecord> = (0..32)
        .map(|_| TransitionRecord {
            episode_id: 0,
            t: 0,
            state: rng.gen_range(0..ns),
            action: rng.gen_range(0..na),
            reward: rng.gen_range(-1.0..1.0),
            next_state: rng.gen_range(0..ns),
            done: rng.gen_bool(0.2),
            strata: vec![],
        })
        .collect();
    let batch: Vec<&TransitionRecord> = recs.iter().collect();
    let y = targets_for(alg, &q, &q_target, &batch, 0.9);
    let (_, mut grad) = loss_gradient(&q, &batch, &y, alpha)?;
    if fault == Some(Fault::Gradient) {
        grad.iter_mut().for_each(|g| *g *= 1.01);
    }
    let f = |p: &[f64]| {
        let mut probe = q.clone();
        probe.params_mut().copy_from_slice(p);
        loss_with_targets(&probe, &batch, &y, alpha).total
    };
    let rep = central_difference_check(
        f,
        q.params(),
        &grad,
        cfg.gradient_probes,
        1e-5,
        &mut seeded(derive_seed(seed, 4)),
    );
    Ok(PropertyResult {
        name: format!("gradient_{}", alg.name()),
        instances: rep.probes,
        failures: usize::from(!rep.passes(GRADIENT_TOL)),
        worst: rep.max_rel_error,
        detail: format!("max relative error vs central differences, tolerance {GRADIENT_TOL:e}"),
    })
}

fn drop_commonest_next_state(ds: &TransitionDataset) -> Result<TransitionDataset, CliError> {
    let counts = ds.state_action_counts();
    let (s, a) = (0..ds.n_states())
        .flat_map(|s| (0..ds.n_actions()).map(move |a| (s, a)))
        .max_by_key(|&(s, a)| (counts[s][a], std::cmp::Reverse((s, a))))
        .expect("nonempty");
    let mut next = vec![0usize; ds.n_states()];
    for r in ds
        .records()
        .iter()
        .filter(|r| r.state == s && r.action == a)
    {
        next[r.next_state] += 1;
    }
    let drop = offrl::mdp::argmax(&next.iter().map(|&c| c as f64).collect::<Vec<_>>());
    let kept: Vec<TransitionRecord> = ds
        .records()
        .iter()
        .filter(|r| !(r.state == s && r.action == a && r.next_state == drop))
        .cloned()
        .collect();
    Ok(TransitionDataset::from_transitions(
        ds.n_states(),
        ds.n_actions(),
        kept,
    )?)
}

const MODES: [(SamplingMode, f64); 3] = [
    (SamplingMode::Under, 0.8),
    (SamplingMode::Over, 0.8),
    (SamplingMode::UnderOver, 1.0),
];

fn sampling_checks(
    cfg: &CheckConfig,
    env: &Environment,
    fault: Option<Fault>,
) -> Result<Vec<PropertyResult>, CliError> {
    let ds = env.behavior_dataset(cfg.preservation_episodes, derive_seed(cfg.seed, 3000), 0)?;
    let counts = ds.action_counts();
    let min_count = counts.iter().copied().filter(|&c| c > 0).min().unwrap_or(1);
    let mut out = Vec::new();
    let mut weight_failures = 0;
    let mut weight_worst: f64 = 0.0;
    let mut spans = Vec::new();
    for (mode, k) in MODES {
        let plan = SamplingPlan::new(mode, k, derive_seed(cfg.seed, 3001));
        let (resampled, report) = resample(&ds, &plan)?;
        let resampled = if fault == Some(Fault::Preservation) {
            drop_commonest_next_state(&resampled)?
        } else {
            resampled
        };
        let pres = verify_transition_preservation(
            &ds,
            &resampled,
            PreservationTolerance::Binomial { multiplier: 3.0 },
            50,
        );
        out.push(PropertyResult {
            name: format!("preservation_{}", mode.name()),
            instances: pres.checked.len(),
            failures: pres.violations.len(),
            worst: pres.worst_ratio(),
            detail: "next-state TV over 3x binomial standard error, pairs with >= 50 records"
                .into(),
        });
        let expected = expected_weights(counts, &target_counts(counts, mode, k));
        for (got, want) in report.weights().iter().zip(&expected) {
            if let (Some(g), Some(w)) = (got, want) {
                let dev = (g - w).abs();
                weight_worst = weight_worst.max(dev * min_count as f64);
                if dev >= 2.0 / min_count as f64 {
                    weight_failures += 1;
                }
            }
        }
        spans.push((mode, report.span()));
    }
    out.push(PropertyResult {
        name: "weight_accounting".into(),
        instances: MODES.len() * counts.len(),
        failures: weight_failures,
        worst: weight_worst,
        detail: "|realized w - closed form| times min count, must stay below 2".into(),
    });
    let uo = spans
        .iter()
        .find(|(m, _)| *m == SamplingMode::UnderOver)
        .map(|s| s.1)
        .unwrap_or(0.0);
    let others = spans
        .iter()
        .filter(|(m, _)| *m != SamplingMode::UnderOver)
        .map(|s| s.1)
        .fold(0.0, f64::max);
    out.push(PropertyResult {
        name: "underover_widest_span".into(),
        instances: 1,
        failures: usize::from(uo <= others),
        worst: uo / others,
        detail: "max/min weight span of underover relative to the widest other mode".into(),
    });
    Ok(out)
}

fn wis_check(
    cfg: &CheckConfig,
    env: &Environment,
    fault: Option<Fault>,
) -> Result<PropertyResult, CliError> {
    let ds = env.behavior_dataset(500, derive_seed(cfg.seed, 4000), 0)?;
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    let instances = 5;
    for i in 0..instances {
        let q = random_table(
            env.mdp.n_states(),
            env.mdp.n_actions(),
            derive_seed(cfg.seed, 4001 + i),
        );
        let pi = soften(&greedy_policy(&q), DEFAULT_EPSILON)?;
        let rep = wis(&ds, &pi, &env.behavior, env.mdp.gamma())?;
        let scale = if fault == Some(Fault::Wis) { 1.5 } else { 1.0 };
        let n = rep.episodes.len() as f64;
        let weight_sum: f64 = rep.episodes.iter().map(|e| scale * e.weight).sum();
        let mean_value: f64 = rep
            .episodes
            .iter()
            .map(|e| scale * e.weight * e.discounted_return)
            .sum::<f64>()
            / n;
        let dev = ((weight_sum - n) / n)
            .abs()
            .max((mean_value - rep.estimate).abs());
        worst = worst.max(dev);
        if dev > WIS_TOL {
            failures += 1;
        }
    }
    Ok(PropertyResult {
        name: "wis_self_normalization".into(),
        instances: instances as usize,
        failures,
        worst,
        detail: format!(
            "normalized weights average 1 and reproduce the estimate, tolerance {WIS_TOL:e}"
        ),
    })
}

fn csr_check(
    cfg: &CheckConfig,
    env: &Environment,
    fault: Option<Fault>,
) -> Result<PropertyResult, CliError> {
    let ds = env.behavior_dataset(500, derive_seed(cfg.seed, 5000), 0)?;
    let mut failures = 0;
    let mut worst: f64 = 1.0;
    let instances = 5;
    for i in 0..instances {
        let q = random_table(
            env.mdp.n_states(),
            env.mdp.n_actions(),
            derive_seed(cfg.seed, 5001 + i),
        );
        let view = constrain(&q, &env.rules);
        let policy = if fault == Some(Fault::Csr) {
            greedy_policy(&q)
        } else {
            view.to_policy()
        };
        for rule in &env.rules.rules {
            let csr = constraint_satisfaction_rate(&ds, &policy, rule)?.value;
            worst = worst.min(csr);
            if csr != 1.0 {
                failures += 1;
            }
        }
        // Wherever the unconstrained argmax is feasible the two must agree.
        for s in 0..env.mdp.n_states() {
            let (u, c) = view.actions(s);
            let feasible = env.rules.feasible_set(s).contains(&u);
            if feasible != (c == u) {
                failures += 1;
            }
        }
    }
    Ok(PropertyResult {
        name: "constrained_satisfaction".into(),
        instances: instances as usize * env.rules.rules.len(),
        failures,
        worst,
        detail: "per-rule satisfaction of the constrained view, and agreement where the argmax is feasible".into(),
    })
}

/// Run every registered property; with `fault` set, one property's inputs
/// are corrupted.
pub fn cmd_check(cfg: &CheckConfig, fault: Option<Fault>) -> Result<CheckReport, CliError> {
    let env = build_chronic_care(&ChronicCareConfig::default())?;
    let mut results = vec![bound_check(cfg, fault)?];
    for (alg, alpha) in [
        (Algorithm::QLearning, 0.0),
        (Algorithm::Ddqn, 0.0),
        (Algorithm::Cql, 1.0),
    ] {
        results.push(gradient_check(cfg, alg, alpha, fault)?);
    }
    results.extend(sampling_checks(cfg, &env, fault)?);
    results.push(wis_check(cfg, &env, fault)?);
    results.push(csr_check(cfg, &env, fault)?);
    debug_assert_eq!(
        results.iter().map(|r| r.name.as_str()).collect::<Vec<_>>(),
        PROPERTIES
    );
    Ok(CheckReport { results })
}
