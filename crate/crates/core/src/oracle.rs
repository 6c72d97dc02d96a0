//! Exact dynamic-programming ground truth.
//!
//! Finite-horizon tables are indexed by step `t = 0..=T`, with the slice at
//! `T` identically zero. Infinite-horizon tables hold a single stationary
//! slice. Terminal states are worth zero in every slice.

use std::io::Write;

use crate::error::Result;
use crate::mdp::{argmax, masked_argmax, MdpSpec, Policy};
use crate::text::format_sig;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    Finite(usize),
    Infinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    horizon: Horizon,
    n_states: usize,
    n_actions: usize,
    /// `v[t][s]`
    v: Vec<Vec<f64>>,
    /// `q[t][s * n_actions + a]`
    q: Vec<Vec<f64>>,
    /// Maximizing action per slice, present for the optimizing sweeps.
    greedy: Option<Vec<Vec<usize>>>,
}

impl ValueTable {
    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    fn slice(&self, t: usize) -> usize {
        match self.horizon {
            Horizon::Finite(_) => t,
            Horizon::Infinite => 0,
        }
    }

    pub fn v(&self, t: usize, s: usize) -> f64 {
        self.v[self.slice(t)][s]
    }

    pub fn q(&self, t: usize, s: usize, a: usize) -> f64 {
        self.q[self.slice(t)][s * self.n_actions + a]
    }

    pub fn q_row(&self, t: usize, s: usize) -> &[f64] {
        let i = self.slice(t);
        &self.q[i][s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// State values at the first step.
    pub fn v0(&self) -> &[f64] {
        &self.v[0]
    }

    /// `sum_s initial_dist(s) V(s, t=0)`
    pub fn expected_initial_value(&self, mdp: &MdpSpec) -> f64 {
        mdp.initial_dist()
            .iter()
            .zip(&self.v[0])
            .map(|(p, v)| p * v)
            .sum()
    }

    /// Stationary policy taking the first-step maximizer. For tables produced
    /// by policy evaluation this is the unconstrained argmax of `q`.
    pub fn greedy_policy(&self) -> Policy {
        let actions = match &self.greedy {
            Some(g) => g[0].clone(),
            None => (0..self.n_states)
                .map(|s| argmax(self.q_row(0, s)))
                .collect(),
        };
        Policy::Deterministic {
            n_actions: self.n_actions,
            actions,
        }
    }

    /// Maximizer at step `t` (time-dependent optimal policy).
    pub fn greedy_action(&self, t: usize, s: usize) -> usize {
        match &self.greedy {
            Some(g) => g[self.slice(t)][s],
            None => argmax(self.q_row(t, s)),
        }
    }

    /// Export as `state,action,t,q` rows.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "state,action,t,q")?;
        for (t, slice) in self.q.iter().enumerate() {
            for s in 0..self.n_states {
                for a in 0..self.n_actions {
                    writeln!(
                        w,
                        "{s},{a},{t},{}",
                        format_sig(slice[s * self.n_actions + a], 9)
                    )?;
                }
            }
        }
        Ok(())
    }
}

fn backup(mdp: &MdpSpec, s: usize, a: usize, v_next: &[f64]) -> f64 {
    let p = mdp.transition(s, a);
    let future: f64 = p.iter().zip(v_next).map(|(p, v)| p * v).sum();
    mdp.reward(s, a) + mdp.gamma() * future
}

fn optimal_sweep(
    mdp: &MdpSpec,
    v_next: &[f64],
    constrained: bool,
    q_out: &mut [f64],
    v_out: &mut [f64],
    g_out: &mut [usize],
) {
    let na = mdp.n_actions();
    for s in 0..mdp.n_states() {
        let row = &mut q_out[s * na..(s + 1) * na];
        if mdp.is_terminal(s) {
            row.fill(0.0);
            v_out[s] = 0.0;
            g_out[s] = masked_argmax(row, |a| !constrained || mdp.is_feasible(s, a)).unwrap_or(0);
            continue;
        }
        for (a, q) in row.iter_mut().enumerate() {
            *q = backup(mdp, s, a, v_next);
        }
        let best = masked_argmax(row, |a| !constrained || mdp.is_feasible(s, a))
            .expect("feasible sets are nonempty");
        g_out[s] = best;
        v_out[s] = row[best];
    }
}

fn finite_optimal(mdp: &MdpSpec, constrained: bool) -> ValueTable {
    let (ns, na, horizon) = (mdp.n_states(), mdp.n_actions(), mdp.horizon());
    let mut v = vec![vec![0.0; ns]; horizon + 1];
    let mut q = vec![vec![0.0; ns * na]; horizon + 1];
    let mut greedy = vec![vec![0usize; ns]; horizon + 1];
    for t in (0..horizon).rev() {
        let (head, tail) = v.split_at_mut(t + 1);
        optimal_sweep(
            mdp,
            &tail[0],
            constrained,
            &mut q[t],
            &mut head[t],
            &mut greedy[t],
        );
    }
    ValueTable {
        horizon: Horizon::Finite(horizon),
        n_states: ns,
        n_actions: na,
        v,
        q,
        greedy: Some(greedy),
    }
}

fn infinite_optimal(mdp: &MdpSpec, constrained: bool, tol: f64) -> ValueTable {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut v = vec![0.0; ns];
    let mut next_v = vec![0.0; ns];
    let mut q = vec![0.0; ns * na];
    let mut greedy = vec![0usize; ns];
    // gamma < 1 guarantees contraction; the cap only guards pathological tol.
    for _ in 0..1_000_000 {
        optimal_sweep(mdp, &v, constrained, &mut q, &mut next_v, &mut greedy);
        let delta = v
            .iter()
            .zip(&next_v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut v, &mut next_v);
        if delta < tol {
            break;
        }
    }
    optimal_sweep(mdp, &v.clone(), constrained, &mut q, &mut v, &mut greedy);
    ValueTable {
        horizon: Horizon::Infinite,
        n_states: ns,
        n_actions: na,
        v: vec![v],
        q: vec![q],
        greedy: Some(vec![greedy]),
    }
}

/// Optimal finite-horizon values by backward induction.
pub fn value_iteration(mdp: &MdpSpec) -> ValueTable {
    finite_optimal(mdp, false)
}

/// Optimal values with the maximization restricted to each state's feasible set.
pub fn constrained_value_iteration(mdp: &MdpSpec) -> ValueTable {
    finite_optimal(mdp, true)
}

/// Discounted infinite-horizon optimum, iterated to `tol` in sup-norm.
pub fn value_iteration_infinite(mdp: &MdpSpec, tol: f64) -> ValueTable {
    infinite_optimal(mdp, false, tol)
}

pub fn constrained_value_iteration_infinite(mdp: &MdpSpec, tol: f64) -> ValueTable {
    infinite_optimal(mdp, true, tol)
}

/// Exact finite-horizon evaluation of a stationary policy.
pub fn policy_evaluation(mdp: &MdpSpec, policy: &Policy) -> ValueTable {
    let (ns, na, horizon) = (mdp.n_states(), mdp.n_actions(), mdp.horizon());
    let mut v = vec![vec![0.0; ns]; horizon + 1];
    let mut q = vec![vec![0.0; ns * na]; horizon + 1];
    for t in (0..horizon).rev() {
        for s in 0..ns {
            if mdp.is_terminal(s) {
                continue;
            }
            let mut value = 0.0;
            for a in 0..na {
                let qa = backup(mdp, s, a, &v[t + 1]);
                q[t][s * na + a] = qa;
                let p = policy.prob(s, a);
                if p > 0.0 {
                    value += p * qa;
                }
            }
            v[t][s] = value;
        }
    }
    ValueTable {
        horizon: Horizon::Finite(horizon),
        n_states: ns,
        n_actions: na,
        v,
        q,
        greedy: None,
    }
}

/// Expected discounted return of `policy` from the initial distribution.
pub fn policy_value(mdp: &MdpSpec, policy: &Policy) -> f64 {
    policy_evaluation(mdp, policy).expected_initial_value(mdp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::MdpParts;

    fn one_state(horizon: usize) -> MdpSpec {
        MdpSpec::new(MdpParts {
            n_states: 1,
            n_actions: 1,
            transition: vec![vec![vec![1.0]]],
            reward: vec![vec![1.0]],
            realized_reward: None,
            reward_bounds: (0.0, 1.0),
            gamma: 0.5,
            horizon,
            initial_dist: vec![1.0],
            terminal_mask: vec![false],
            feasible_mask: vec![vec![true]],
        })
        .unwrap()
    }

    #[test]
    fn geometric_series() {
        let vt = value_iteration(&one_state(30));
        assert!((vt.q(0, 0, 0) - 2.0).abs() < 1e-8);
        assert_eq!(vt.q(30, 0, 0), 0.0);
        let inf = value_iteration_infinite(&one_state(30), 1e-12);
        assert!((inf.v(0, 0) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn only_policy_has_optimal_value() {
        let mdp = one_state(12);
        let opt = value_iteration(&mdp);
        let ev = policy_evaluation(&mdp, &Policy::uniform(1, 1));
        assert!((opt.v(0, 0) - ev.v(0, 0)).abs() < 1e-12);
    }

    #[test]
    fn zero_reward_zero_value() {
        let mut parts = one_state(5).to_parts();
        parts.reward = vec![vec![0.0]];
        let vt = value_iteration(&MdpSpec::new(parts).unwrap());
        assert_eq!(vt.v(0, 0), 0.0);
    }

    #[test]
    fn constrained_with_all_feasible_is_unconstrained() {
        let mdp = one_state(4);
        assert_eq!(value_iteration(&mdp), constrained_value_iteration(&mdp));
    }

    #[test]
    fn terminal_states_are_worth_zero() {
        let mdp = MdpSpec::new(MdpParts {
            n_states: 2,
            n_actions: 1,
            transition: vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]],
            reward: vec![vec![1.0], vec![1.0]],
            realized_reward: None,
            reward_bounds: (0.0, 1.0),
            gamma: 0.9,
            horizon: 5,
            initial_dist: vec![1.0, 0.0],
            terminal_mask: vec![false, true],
            feasible_mask: vec![vec![true]; 2],
        })
        .unwrap();
        let vt = value_iteration(&mdp);
        assert_eq!(vt.v(0, 1), 0.0);
        assert!((vt.v(0, 0) - 1.0).abs() < 1e-15);
    }
}
