//! Execution-time constraint enforcement and the optimality-gap bound it
//! satisfies.

use crate::approx::QFunction;
use crate::mdp::{argmax, masked_argmax, MdpSpec, Policy};
use crate::oracle::{constrained_value_iteration, policy_value, value_iteration};
use crate::text::{format_sig, Table};

/// Source of per-state permitted actions.
pub trait FeasibleSets {
    fn is_feasible(&self, s: usize, a: usize) -> bool;
}

impl FeasibleSets for MdpSpec {
    fn is_feasible(&self, s: usize, a: usize) -> bool {
        MdpSpec::is_feasible(self, s, a)
    }
}

/// `mask[s][a]`
impl FeasibleSets for [Vec<bool>] {
    fn is_feasible(&self, s: usize, a: usize) -> bool {
        self[s][a]
    }
}

impl FeasibleSets for Vec<Vec<bool>> {
    fn is_feasible(&self, s: usize, a: usize) -> bool {
        self[s][a]
    }
}

/// Greedy policy of a Q-function restricted to the feasible set.
pub struct ConstrainedPolicyView<'a> {
    q: &'a QFunction,
    feasible: &'a dyn FeasibleSets,
}

pub fn constrain<'a>(
    q: &'a QFunction,
    feasible: &'a dyn FeasibleSets,
) -> ConstrainedPolicyView<'a> {
    ConstrainedPolicyView { q, feasible }
}

impl ConstrainedPolicyView<'_> {
    pub fn action(&self, s: usize) -> usize {
        constrained_argmax(&self.q.forward(s), |a| self.feasible.is_feasible(s, a))
    }

    pub fn unconstrained_action(&self, s: usize) -> usize {
        argmax(&self.q.forward(s))
    }

    /// Both actions from a single forward pass.
    pub fn actions(&self, s: usize) -> (usize, usize) {
        let row = self.q.forward(s);
        (
            argmax(&row),
            constrained_argmax(&row, |a| self.feasible.is_feasible(s, a)),
        )
    }

    pub fn to_policy(&self) -> Policy {
        Policy::Deterministic {
            n_actions: self.q.n_actions(),
            actions: (0..self.q.n_states()).map(|s| self.action(s)).collect(),
        }
    }
}

/// Highest-valued permitted action, lowest id on ties.
///
/// Panics if nothing is permitted; feasible sets are nonempty by contract.
pub fn constrained_argmax(row: &[f64], allowed: impl Fn(usize) -> bool) -> usize {
    masked_argmax(row, allowed).expect("feasible set must be nonempty")
}

/// Restrict a deterministic or stochastic policy's choice to the feasible
/// set by re-ranking a value row. Used when only a policy (not a Q-function)
/// is available: the row is the policy's own action probabilities.
pub fn constrain_policy(policy: &Policy, feasible: &dyn FeasibleSets) -> Policy {
    let actions = (0..policy.n_states())
        .map(|s| constrained_argmax(&policy.distribution(s), |a| feasible.is_feasible(s, a)))
        .collect();
    Policy::Deterministic {
        n_actions: policy.n_actions(),
        actions,
    }
}

/// Probability that `policy`, run from the initial distribution, takes an
/// infeasible action at some non-terminal step before the horizon.
pub fn violation_probability(mdp: &MdpSpec, policy: &Policy) -> f64 {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut dist = mdp.initial_dist().to_vec();
    let mut violated = 0.0;
    for _ in 0..mdp.horizon() {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            let mass = dist[s];
            if mass == 0.0 || mdp.is_terminal(s) {
                continue;
            }
            for a in 0..na {
                let p = policy.prob(s, a);
                if p == 0.0 {
                    continue;
                }
                if !mdp.is_feasible(s, a) {
                    violated += mass * p;
                    continue;
                }
                for (n, &pt) in next.iter_mut().zip(mdp.transition(s, a)) {
                    *n += mass * p * pt;
                }
            }
        }
        dist = next;
    }
    violated
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    /// Constrained optimum minus the constrained agent's value.
    pub lhs: f64,
    pub violation_prob: f64,
    /// Unconstrained optimum minus the unconstrained agent's value.
    pub unconstrained_gap: f64,
    pub rhs: f64,
    pub slack: f64,
}

impl BoundReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.slack >= -tol
    }

    pub fn table(reports: &[BoundReport]) -> Table {
        let mut t = Table::new([
            "instance",
            "lhs",
            "violation_prob",
            "unconstrained_gap",
            "rhs",
            "slack",
        ]);
        for (i, r) in reports.iter().enumerate() {
            t.push([
                i.to_string(),
                format_sig(r.lhs, 9),
                format_sig(r.violation_prob, 9),
                format_sig(r.unconstrained_gap, 9),
                format_sig(r.rhs, 9),
                format_sig(r.slack, 9),
            ]);
        }
        t
    }
}

/// Evaluate the bound
/// `V*_c - V(constrained agent) <= (r_hi - r_lo) / (1 - gamma) * (T + 1) * P(violation) + V* - V(agent)`
/// with every term computed by exact dynamic programming.
pub fn check_property1(mdp: &MdpSpec, q: &QFunction) -> BoundReport {
    let view = constrain(q, mdp);
    let unconstrained = Policy::Deterministic {
        n_actions: q.n_actions(),
        actions: (0..q.n_states())
            .map(|s| view.unconstrained_action(s))
            .collect(),
    };
    let constrained = view.to_policy();
    bound_for_policies(mdp, &unconstrained, &constrained)
}

pub fn bound_for_policies(
    mdp: &MdpSpec,
    unconstrained: &Policy,
    constrained: &Policy,
) -> BoundReport {
    let v_opt = value_iteration(mdp).expected_initial_value(mdp);
    let v_opt_c = constrained_value_iteration(mdp).expected_initial_value(mdp);
    let v_agent = policy_value(mdp, unconstrained);
    let v_agent_c = policy_value(mdp, constrained);
    let violation_prob = violation_probability(mdp, unconstrained);
    let (lo, hi) = mdp.reward_bounds();
    let unconstrained_gap = v_opt - v_agent;
    let lhs = v_opt_c - v_agent_c;
    let steps = (mdp.horizon() + 1) as f64;
    let rhs = (hi - lo) / (1.0 - mdp.gamma()) * steps * violation_prob + unconstrained_gap;
    BoundReport {
        lhs,
        violation_prob,
        unconstrained_gap,
        rhs,
        slack: rhs - lhs,
    }
}
