mod common;

use common::{brute_force_optimum, two_state};
use offrl::envgen::{random_mdp, RandomMdpConfig};
use offrl::mdp::{rollout, MdpParts, MdpSpec, Policy};
use offrl::oracle::{
    constrained_value_iteration, policy_evaluation, policy_value, value_iteration,
    value_iteration_infinite,
};
use proptest::prelude::*;

fn single(reward: f64, gamma: f64, horizon: usize) -> MdpSpec {
    MdpSpec::new(MdpParts {
        n_states: 1,
        n_actions: 1,
        transition: vec![vec![vec![1.0]]],
        reward: vec![vec![reward]],
        realized_reward: None,
        reward_bounds: (0.0, reward.max(0.0)),
        gamma,
        horizon,
        initial_dist: vec![1.0],
        terminal_mask: vec![false],
        feasible_mask: vec![vec![true]],
    })
    .unwrap()
}

#[test]
fn geometric_series() {
    let mdp = single(1.0, 0.5, 30);
    let vt = value_iteration(&mdp);
    assert!((vt.q(0, 0, 0) - 2.0).abs() < 1e-8);
    let inf = value_iteration_infinite(&mdp, 1e-12);
    assert!((inf.q(0, 0, 0) - 2.0).abs() < 1e-10);
    assert!(
        (policy_value(&mdp, &Policy::uniform(1, 1)) - vt.expected_initial_value(&mdp)).abs()
            < 1e-15
    );
}

#[test]
fn zero_reward_zero_value() {
    let mdp = single(0.0, 0.9, 5);
    let vt = value_iteration(&mdp);
    for t in 0..5 {
        assert_eq!(vt.q(t, 0, 0), 0.0);
    }
}

#[test]
fn two_state_matches_enumeration() {
    let mdp = two_state(4, 0.9);
    let v = value_iteration(&mdp).expected_initial_value(&mdp);
    let brute = brute_force_optimum(&mdp, false);
    assert!((v - brute).abs() < 1e-12, "{v} vs {brute}");
}

#[test]
fn stochastic_policy_matches_monte_carlo() {
    let mdp = two_state(6, 0.9);
    let pi = Policy::stochastic(vec![vec![0.3, 0.7], vec![0.6, 0.4]]).unwrap();
    let exact = policy_value(&mdp, &pi);
    let ds = rollout(&mdp, &pi, 200_000, 17).unwrap();
    let returns: Vec<f64> = ds
        .episodes()
        .map(|ep| {
            ep.iter()
                .map(|r| mdp.gamma().powi(r.t as i32) * r.reward)
                .sum()
        })
        .collect();
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    assert!(
        (mean - exact).abs() < 3.0 * se,
        "mc {mean} exact {exact} se {se}"
    );
}

#[test]
fn greedy_policy_attains_optimum() {
    let mdp = random_mdp(&RandomMdpConfig::default(), 5).unwrap();
    let vt = value_iteration(&mdp);
    // the finite-horizon optimum is time-indexed; check each step's greedy row
    let pe = offrl::oracle::policy_evaluation(&mdp, &vt.greedy_policy());
    assert!(pe.expected_initial_value(&mdp) <= vt.expected_initial_value(&mdp) + 1e-12);
    let all = mdp
        .with_feasible_mask(vec![vec![true; mdp.n_actions()]; mdp.n_states()])
        .unwrap();
    let a = value_iteration(&all);
    let b = constrained_value_iteration(&all);
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn constrained_matches_enumeration(seed in 0u64..10_000) {
        let cfg = RandomMdpConfig { n_states: 5, n_actions: 3, horizon: 2, infeasible_prob: 0.4, ..RandomMdpConfig::default() };
        let mdp = random_mdp(&cfg, seed).unwrap();
        let vc = constrained_value_iteration(&mdp).expected_initial_value(&mdp);
        prop_assert!((vc - brute_force_optimum(&mdp, true)).abs() < 1e-12);
        let v = value_iteration(&mdp).expected_initial_value(&mdp);
        prop_assert!((v - brute_force_optimum(&mdp, false)).abs() < 1e-12);
    }

    #[test]
    fn constrained_never_exceeds_unconstrained(seed in 0u64..10_000) {
        let cfg = RandomMdpConfig { n_states: 20, n_actions: 4, ..RandomMdpConfig::default() };
        let mdp = random_mdp(&cfg, seed).unwrap();
        let (u, c) = (value_iteration(&mdp), constrained_value_iteration(&mdp));
        for s in 0..mdp.n_states() {
            prop_assert!(c.v(0, s) <= u.v(0, s) + 1e-12);
        }
    }

    #[test]
    fn reward_shift_moves_values_by_geometric_sum(seed in 0u64..10_000, c in -2.0f64..2.0) {
        let cfg = RandomMdpConfig { terminal_prob: 0.0, ..RandomMdpConfig::default() };
        let mdp = random_mdp(&cfg, seed).unwrap();
        let mut parts = mdp.to_parts();
        parts.reward.iter_mut().flatten().for_each(|r| *r += c);
        parts.reward_bounds = (parts.reward_bounds.0.min(parts.reward_bounds.0 + c), parts.reward_bounds.1.max(parts.reward_bounds.1 + c));
        let shifted = MdpSpec::new(parts).unwrap();
        let pi = Policy::uniform(mdp.n_states(), mdp.n_actions());
        let g = mdp.gamma();
        let expect = c * (1.0 - g.powi(mdp.horizon() as i32)) / (1.0 - g);
        let (a, b) = (policy_evaluation(&mdp, &pi), policy_evaluation(&shifted, &pi));
        for s in 0..mdp.n_states() {
            prop_assert!((b.v(0, s) - a.v(0, s) - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn greedy_is_invariant_to_affine_rewards(seed in 0u64..10_000, scale in 0.1f64..5.0, shift in -1.0f64..1.0) {
        let cfg = RandomMdpConfig { terminal_prob: 0.0, ..RandomMdpConfig::default() };
        let mdp = random_mdp(&cfg, seed).unwrap();
        let mut parts = mdp.to_parts();
        parts.reward.iter_mut().flatten().for_each(|r| *r = scale * *r + shift);
        let (lo, hi) = parts.reward_bounds;
        parts.reward_bounds = ((scale * lo + shift).min(0.0), (scale * hi + shift).max(0.0));
        let moved = MdpSpec::new(parts).unwrap();
        let (a, b) = (value_iteration(&mdp), value_iteration(&moved));
        for t in 0..mdp.horizon() {
            for s in 0..mdp.n_states() {
                let (ra, rb) = (a.q_row(t, s), b.q_row(t, s));
                // compare only where the optimum is not (near-)tied
                let best = a.greedy_action(t, s);
                let runner = ra.iter().enumerate().filter(|(i, _)| *i != best).map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
                if ra[best] - runner > 1e-9 {
                    prop_assert_eq!(offrl::mdp::argmax(rb), best);
                }
            }
        }
    }
}
