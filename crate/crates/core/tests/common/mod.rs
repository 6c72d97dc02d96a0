#![allow(dead_code)]

use offrl::mdp::{MdpParts, MdpSpec};

/// Two states, two actions, no terminals.
pub fn two_state(horizon: usize, gamma: f64) -> MdpSpec {
    MdpSpec::new(MdpParts {
        n_states: 2,
        n_actions: 2,
        transition: vec![
            vec![vec![0.7, 0.3], vec![0.2, 0.8]],
            vec![vec![0.5, 0.5], vec![0.9, 0.1]],
        ],
        reward: vec![vec![0.0, 0.4], vec![1.0, -0.5]],
        realized_reward: None,
        reward_bounds: (-0.5, 1.0),
        gamma,
        horizon,
        initial_dist: vec![0.6, 0.4],
        terminal_mask: vec![false, false],
        feasible_mask: vec![vec![true; 2]; 2],
    })
    .unwrap()
}

/// Expected discounted return of a time-indexed deterministic policy
/// `plan[t][s]`, by forward propagation of the state distribution.
pub fn forward_value(mdp: &MdpSpec, plan: &[Vec<usize>]) -> f64 {
    let ns = mdp.n_states();
    let mut dist = mdp.initial_dist().to_vec();
    let mut total = 0.0;
    let mut disc = 1.0;
    for step in plan {
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            if dist[s] == 0.0 || mdp.is_terminal(s) {
                continue;
            }
            let a = step[s];
            total += disc * dist[s] * mdp.reward(s, a);
            for (n, p) in next.iter_mut().zip(mdp.transition(s, a)) {
                *n += dist[s] * p;
            }
        }
        dist = next;
        disc *= mdp.gamma();
    }
    total
}

/// Best expected return over every time-indexed deterministic policy,
/// optionally restricted to feasible actions.
pub fn brute_force_optimum(mdp: &MdpSpec, feasible_only: bool) -> f64 {
    let ns = mdp.n_states();
    let per_state: Vec<Vec<usize>> = (0..ns)
        .map(|s| {
            (0..mdp.n_actions())
                .filter(|&a| !feasible_only || mdp.is_feasible(s, a))
                .collect()
        })
        .collect();
    let stationary = all_assignments(&per_state);
    let mut best = f64::NEG_INFINITY;
    let mut idx = vec![0usize; mdp.horizon()];
    loop {
        let plan: Vec<Vec<usize>> = idx.iter().map(|&i| stationary[i].clone()).collect();
        best = best.max(forward_value(mdp, &plan));
        let mut k = 0;
        while k < idx.len() {
            idx[k] += 1;
            if idx[k] < stationary.len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
        if k == idx.len() {
            return best;
        }
    }
}

fn all_assignments(choices: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for c in choices {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                c.iter().map(move |&a| {
                    let mut p = prefix.clone();
                    p.push(a);
                    p
                })
            })
            .collect();
    }
    out
}
