mod common;

use offrl::dataset::{
    empirical_behavior_policy, empirical_transition_freq, TransitionDataset, TransitionRecord,
};
use offrl::envgen::{random_mdp, RandomMdpConfig};
use offrl::mdp::{rollout, MdpParts, MdpSpec, Policy};
use proptest::prelude::*;

fn record(ep: u64, t: u32, s: usize, a: usize, next: usize, done: bool) -> TransitionRecord {
    TransitionRecord {
        episode_id: ep,
        t,
        state: s,
        action: a,
        reward: 0.0,
        next_state: next,
        done,
        strata: vec![],
    }
}

#[test]
fn behavior_policy_examples() {
    let mut recs: Vec<_> = (0..3).map(|i| record(i, 0, 0, 0, 0, true)).collect();
    recs.push(record(3, 0, 0, 1, 0, true));
    let ds = TransitionDataset::from_episodes(2, 2, recs).unwrap();
    let p = empirical_behavior_policy(&ds, 0.0).unwrap();
    assert_eq!(p.distribution(0), vec![0.75, 0.25]);
    assert_eq!(p.distribution(1), vec![0.5, 0.5]);
    let smoothed = empirical_behavior_policy(&ds, 1.0).unwrap();
    assert!((smoothed.prob(0, 0) - 4.0 / 6.0).abs() < 1e-15);

    let single = TransitionDataset::from_episodes(1, 2, vec![record(0, 0, 0, 1, 0, true)]).unwrap();
    assert_eq!(
        empirical_behavior_policy(&single, 0.0).unwrap().prob(0, 1),
        1.0
    );
}

#[test]
fn transition_frequency_examples() {
    let recs = vec![
        record(0, 0, 0, 0, 1, true),
        record(1, 0, 0, 0, 1, true),
        record(2, 0, 0, 0, 0, true),
        record(3, 0, 0, 0, 0, true),
    ];
    let ds = TransitionDataset::from_episodes(2, 2, recs).unwrap();
    let f = empirical_transition_freq(&ds).unwrap();
    assert_eq!(f.get(0, 0).unwrap(), &[0.5, 0.5]);
    assert!(f.get(0, 1).is_none());
    assert!(f.get(1, 0).is_none());
}

#[test]
fn transition_frequencies_converge() {
    let cfg = RandomMdpConfig {
        terminal_prob: 0.0,
        ..RandomMdpConfig::default()
    };
    let mdp = random_mdp(&cfg, 3).unwrap();
    let ds = rollout(
        &mdp,
        &Policy::uniform(mdp.n_states(), mdp.n_actions()),
        2000,
        9,
    )
    .unwrap();
    assert!(ds.len() >= 10_000);
    let f = empirical_transition_freq(&ds).unwrap();
    let mut worst: f64 = 0.0;
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            if f.count(s, a) >= 400 {
                let p = f.get(s, a).unwrap();
                for (x, y) in p.iter().zip(mdp.transition(s, a)) {
                    worst = worst.max((x - y).abs());
                }
            }
        }
    }
    assert!(worst < 0.05, "max deviation {worst}");
}

fn chain(terminal_at_1: bool) -> MdpSpec {
    MdpSpec::new(MdpParts {
        n_states: 2,
        n_actions: 1,
        transition: vec![vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]],
        reward: vec![vec![1.0], vec![0.0]],
        realized_reward: None,
        reward_bounds: (0.0, 1.0),
        gamma: 0.9,
        horizon: 3,
        initial_dist: vec![1.0, 0.0],
        terminal_mask: vec![false, terminal_at_1],
        feasible_mask: vec![vec![true]; 2],
    })
    .unwrap()
}

#[test]
fn rollout_lengths() {
    let one = MdpSpec::new(MdpParts {
        n_states: 1,
        n_actions: 1,
        transition: vec![vec![vec![1.0]]],
        reward: vec![vec![1.0]],
        realized_reward: None,
        reward_bounds: (0.0, 1.0),
        gamma: 0.5,
        horizon: 3,
        initial_dist: vec![1.0],
        terminal_mask: vec![false],
        feasible_mask: vec![vec![true]],
    })
    .unwrap();
    let ds = rollout(&one, &Policy::uniform(1, 1), 1, 0).unwrap();
    assert_eq!(ds.len(), 3);
    assert!(ds.records().iter().all(|r| r.state == 0));

    let ds = rollout(&chain(true), &Policy::uniform(2, 1), 1, 0).unwrap();
    assert_eq!(ds.len(), 1);
    assert!(ds.records()[0].done);
    let ds = rollout(&chain(false), &Policy::uniform(2, 1), 1, 0).unwrap();
    assert_eq!(ds.len(), 3);
}

#[test]
fn rollout_rejects_out_of_range_actions() {
    let mdp = chain(false);
    let bad = Policy::Deterministic {
        n_actions: 2,
        actions: vec![1, 0],
    };
    assert!(rollout(&mdp, &bad, 1, 0).is_err());
}

#[test]
fn episode_structure_is_validated() {
    let gap = vec![record(0, 0, 0, 0, 0, false), record(0, 2, 0, 0, 0, true)];
    assert!(TransitionDataset::from_episodes(1, 1, gap).is_err());
    let early = vec![record(0, 0, 0, 0, 0, true), record(0, 1, 0, 0, 0, true)];
    assert!(TransitionDataset::from_episodes(1, 1, early).is_err());
}

#[test]
fn mdp_json_round_trip() {
    let mdp = random_mdp(&RandomMdpConfig::default(), 11).unwrap();
    let back = MdpSpec::from_json(&mdp.to_json().unwrap()).unwrap();
    assert_eq!(mdp, back);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rollouts_are_reproducible_and_well_formed(mdp_seed in 0u64..1000, seed in 0u64..1000, n in 1usize..40) {
        let cfg = RandomMdpConfig { n_states: 6, n_actions: 3, ..RandomMdpConfig::default() };
        let mdp = random_mdp(&cfg, mdp_seed).unwrap();
        let pi = Policy::uniform(6, 3);
        let a = rollout(&mdp, &pi, n, seed).unwrap();
        let b = rollout(&mdp, &pi, n, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.n_episodes(), n);
        let mut counts = [0; 3];
        for ep in a.episodes() {
            for (i, r) in ep.iter().enumerate() {
                prop_assert_eq!(r.t as usize, i);
                prop_assert_eq!(r.done, i + 1 == ep.len());
                counts[r.action] += 1;
            }
            prop_assert!(ep.len() <= mdp.horizon());
        }
        prop_assert_eq!(a.action_counts(), &counts[..]);
    }

    #[test]
    fn dataset_text_round_trip(mdp_seed in 0u64..1000, seed in 0u64..1000) {
        let cfg = RandomMdpConfig { n_states: 5, n_actions: 2, ..RandomMdpConfig::default() };
        let mdp = random_mdp(&cfg, mdp_seed).unwrap();
        let ds = rollout(&mdp, &Policy::uniform(5, 2), 5, seed).unwrap();
        let mut buf = Vec::new();
        ds.write_text(&mut buf).unwrap();
        let back = TransitionDataset::read_text(&buf[..], 5, 2, true).unwrap();
        prop_assert_eq!(back.len(), ds.len());
        for (x, y) in ds.records().iter().zip(back.records()) {
            prop_assert!((x.reward - y.reward).abs() <= 5e-9 * x.reward.abs().max(1e-300));
            prop_assert_eq!(TransitionRecord { reward: y.reward, ..x.clone() }, y.clone());
        }
        // rewards are stored at 9 significant digits, so the text is a fixed point
        let mut again = Vec::new();
        back.write_text(&mut again).unwrap();
        prop_assert_eq!(&buf, &again);
        let third = TransitionDataset::read_text(&again[..], 5, 2, true).unwrap();
        prop_assert_eq!(back, third);
    }

    #[test]
    fn random_mdps_are_valid(seed in 0u64..5000) {
        let mdp = random_mdp(&RandomMdpConfig::default(), seed).unwrap();
        for s in 0..mdp.n_states() {
            prop_assert!(!mdp.feasible_actions(s).is_empty());
            for a in 0..mdp.n_actions() {
                let total: f64 = mdp.transition(s, a).iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }
}
