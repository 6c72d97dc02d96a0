mod common;

use offrl::approx::{central_difference_check, Architecture, Encoding, QFunction};
use offrl::dataset::{empirical_behavior_policy, TransitionDataset, TransitionRecord};
use offrl::envgen::{build_chronic_care, ChronicCareConfig};
use offrl::error::Error;
use offrl::learners::{
    bellman_target, cql_loss, ddqn_target, loss_gradient, loss_with_targets, targets_for, train,
    train_from, Algorithm, OptimizerKind, TrainConfig,
};
use offrl::mdp::argmax;
use offrl::oracle::{value_iteration, value_iteration_infinite};
use offrl::rng::seeded;
use proptest::prelude::*;
use rand::Rng;

fn rec(state: usize, action: usize, reward: f64, next: usize, done: bool) -> TransitionRecord {
    TransitionRecord {
        episode_id: 0,
        t: 0,
        state,
        action,
        reward,
        next_state: next,
        done,
        strata: vec![],
    }
}

fn random_batch(n: usize, ns: usize, na: usize, seed: u64) -> Vec<TransitionRecord> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            rec(
                rng.gen_range(0..ns),
                rng.gen_range(0..na),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0..ns),
                rng.gen_bool(0.2),
            )
        })
        .collect()
}

fn network(ns: usize, na: usize, seed: u64) -> QFunction {
    QFunction::network(
        Encoding::OneHot { n_states: ns },
        &[16, 16],
        na,
        &mut seeded(seed),
    )
}

/// Gradient of the loss against targets computed once and then frozen.
fn check_algorithm(alg: Algorithm, alpha: f64, seed: u64) {
    let (ns, na) = (7, 4);
    let q = network(ns, na, seed);
    let q_target = network(ns, na, seed + 1);
    let recs = random_batch(32, ns, na, seed + 2);
    let batch: Vec<&TransitionRecord> = recs.iter().collect();
    let y = targets_for(alg, &q, &q_target, &batch, 0.9);
    let (_, grad) = loss_gradient(&q, &batch, &y, alpha).unwrap();
    let f = |p: &[f64]| {
        let mut probe = q.clone();
        probe.params_mut().copy_from_slice(p);
        loss_with_targets(&probe, &batch, &y, alpha).total
    };
    let rep = central_difference_check(f, q.params(), &grad, 64, 1e-5, &mut seeded(seed + 3));
    assert!(rep.passes(1e-4), "{alg:?}: {rep:?}");
}

#[test]
fn gradients_match_finite_differences() {
    for seed in [1, 2, 3] {
        check_algorithm(Algorithm::QLearning, 0.0, seed);
        check_algorithm(Algorithm::Ddqn, 0.0, seed);
        check_algorithm(Algorithm::Cql, 1.0, seed);
        check_algorithm(Algorithm::Cql, 5.0, seed);
    }
}

#[test]
fn target_examples() {
    let q = QFunction::Tabular {
        n_states: 2,
        n_actions: 2,
        table: vec![0.0, 0.0, 2.0, 4.0],
    };
    let done = rec(0, 0, 1.0, 1, true);
    let live = rec(0, 0, 0.0, 1, false);
    assert_eq!(bellman_target(&q, &[&done], 0.5), vec![1.0]);
    assert_eq!(bellman_target(&q, &[&live], 0.5), vec![2.0]);
    assert_eq!(bellman_target(&q, &[&live], 0.0), vec![0.0]);

    let master = QFunction::Tabular {
        n_states: 2,
        n_actions: 2,
        table: vec![0.0, 0.0, 1.0, 3.0],
    };
    let target = QFunction::Tabular {
        n_states: 2,
        n_actions: 2,
        table: vec![0.0, 0.0, 5.0, 2.0],
    };
    assert_eq!(ddqn_target(&master, &target, &[&live], 1.0), vec![2.0]);
    assert_eq!(ddqn_target(&master, &target, &[&done], 0.9), vec![1.0]);
}

#[test]
fn gap_of_flat_row_is_ln2() {
    let q = QFunction::Tabular {
        n_states: 1,
        n_actions: 2,
        table: vec![0.0, 0.0],
    };
    let r = rec(0, 0, 0.0, 0, true);
    let loss = cql_loss(&q, &q, &[&r], 1.0, 0.9);
    assert!((loss.gap - std::f64::consts::LN_2).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loss_identities(seed in 0u64..10_000, alpha in 0.0f64..10.0, extra in 0.0f64..5.0) {
        let (ns, na) = (5, 3);
        let q = network(ns, na, seed);
        let qt = network(ns, na, seed + 7);
        let recs = random_batch(16, ns, na, seed + 9);
        let batch: Vec<&TransitionRecord> = recs.iter().collect();
        // alpha = 0 is the plain squared Bellman error
        let y = bellman_target(&qt, &batch, 0.9);
        let zero = cql_loss(&q, &qt, &batch, 0.0, 0.9);
        prop_assert_eq!(zero.total, loss_with_targets(&q, &batch, &y, 0.0).total);
        prop_assert_eq!(zero.total, zero.bellman);
        // nondecreasing in alpha
        let a = cql_loss(&q, &qt, &batch, alpha, 0.9);
        let b = cql_loss(&q, &qt, &batch, alpha + extra, 0.9);
        prop_assert!(a.gap > 0.0);
        prop_assert!(b.total >= a.total);
        // identical master and target give the plain target
        prop_assert_eq!(ddqn_target(&q, &q, &batch, 0.9), bellman_target(&q, &batch, 0.9));
    }
}

/// Every (state, action) pair with next states in exact proportion to the
/// transition probabilities.
fn exhaustive_dataset(mdp: &offrl::mdp::MdpSpec, per_pair: usize) -> TransitionDataset {
    let mut recs = Vec::new();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            for (next, &p) in mdp.transition(s, a).iter().enumerate() {
                let n = (p * per_pair as f64).round() as usize;
                recs.extend((0..n).map(|_| rec(s, a, mdp.reward(s, a), next, false)));
            }
        }
    }
    TransitionDataset::from_transitions(mdp.n_states(), mdp.n_actions(), recs).unwrap()
}

#[test]
fn tabular_qlearning_recovers_optimal_policy() {
    let mdp = common::two_state(60, 0.9);
    let ds = exhaustive_dataset(&mdp, 10);
    let mut cfg = TrainConfig::new(Algorithm::QLearning, mdp.gamma());
    cfg.architecture = Architecture::Tabular;
    cfg.learning_rate = 0.05;
    cfg.n_gradient_steps = 20_000;
    cfg.batch_size = 16;
    let agent = train(&ds, &cfg).unwrap();
    let finite = value_iteration(&mdp);
    let inf = value_iteration_infinite(&mdp, 1e-12);
    for s in 0..2 {
        assert_eq!(agent.policy.action(s), finite.greedy_action(0, s));
        assert_eq!(agent.policy.action(s), argmax(inf.q_row(0, s)));
    }
}

#[test]
fn large_alpha_clones_behavior() {
    let env = build_chronic_care(&ChronicCareConfig::default()).unwrap();
    let ds = env.behavior_dataset(1000, 4, 0).unwrap();
    let mut cfg = TrainConfig::new(Algorithm::Cql, env.mdp.gamma());
    cfg.alpha = 100.0;
    cfg.architecture = Architecture::Tabular;
    cfg.learning_rate = 0.01;
    cfg.n_gradient_steps = 20_000;
    let agent = train(&ds, &cfg).unwrap();
    let mode = empirical_behavior_policy(&ds, 0.0).unwrap();
    let counts = ds.state_action_counts();
    let frequent: Vec<usize> = (0..ds.n_states())
        .filter(|&s| counts[s].iter().sum::<usize>() >= 50)
        .collect();
    let agree = frequent
        .iter()
        .filter(|&&s| agent.policy.action(s) == mode.action(s))
        .count();
    assert!(!frequent.is_empty());
    assert!(
        agree as f64 >= 0.9 * frequent.len() as f64,
        "{agree}/{}",
        frequent.len()
    );
}

#[test]
fn unseen_action_is_ranked_below_observed() {
    // Action 2 at state 0 never appears in the data but starts with a
    // fabricated high value.
    let mut recs = Vec::new();
    for i in 0..200 {
        recs.push(rec(0, i % 2, if i % 2 == 0 { 1.0 } else { 0.5 }, 1, false));
        recs.push(rec(1, 0, 0.0, 1, true));
    }
    let ds = TransitionDataset::from_transitions(2, 3, recs).unwrap();
    let init = QFunction::Tabular {
        n_states: 2,
        n_actions: 3,
        table: vec![0.0, 0.0, 10.0, 0.0, 0.0, 0.0],
    };
    let mut cfg = TrainConfig::new(Algorithm::Cql, 0.9);
    cfg.architecture = Architecture::Tabular;
    cfg.learning_rate = 0.05;
    cfg.n_gradient_steps = 5000;
    let cql = train_from(init.clone(), &ds, &cfg).unwrap();
    let row = cql.q.forward(0);
    assert!(row[2] < row[0], "{row:?}");
    assert_eq!(cql.policy.action(0), 0);

    cfg.algorithm = Algorithm::QLearning;
    let plain = train_from(init, &ds, &cfg).unwrap();
    // plain Q-learning never touches the unseen entry
    assert_eq!(plain.q.forward(0)[2], 10.0);
}

#[test]
fn training_is_deterministic() {
    let env = build_chronic_care(&ChronicCareConfig::default()).unwrap();
    let ds = env.behavior_dataset(50, 1, 0).unwrap();
    for alg in [Algorithm::QLearning, Algorithm::Ddqn, Algorithm::Cql] {
        let mut cfg = TrainConfig::new(alg, 0.9);
        cfg.architecture = Architecture::Mlp { hidden: vec![8, 8] };
        cfg.n_gradient_steps = 200;
        cfg.seed = 5;
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a.q, b.q);
        assert_eq!(a.log, b.log);
        cfg.seed = 6;
        assert_ne!(train(&ds, &cfg).unwrap().q, a.q);
    }
}

#[test]
fn target_syncs_follow_interval() {
    let ds = TransitionDataset::from_transitions(1, 2, vec![rec(0, 0, 1.0, 0, false)]).unwrap();
    let mut cfg = TrainConfig::new(Algorithm::Ddqn, 0.5);
    cfg.architecture = Architecture::Tabular;
    cfg.batch_size = 1;
    cfg.n_gradient_steps = 250;
    cfg.target_sync_interval = 100;
    let agent = train(&ds, &cfg).unwrap();
    assert_eq!(agent.log.last().unwrap().target_syncs, 2);
    cfg.algorithm = Algorithm::QLearning;
    assert_eq!(
        train(&ds, &cfg).unwrap().log.last().unwrap().target_syncs,
        0
    );
}

#[test]
fn divergence_is_reported_with_step() {
    let ds = TransitionDataset::from_transitions(1, 2, vec![rec(0, 0, 1e150, 0, false)]).unwrap();
    let mut cfg = TrainConfig::new(Algorithm::QLearning, 0.99);
    cfg.architecture = Architecture::Tabular;
    cfg.optimizer = OptimizerKind::Sgd;
    cfg.clip_norm = None;
    cfg.learning_rate = 1e10;
    cfg.batch_size = 1;
    match train(&ds, &cfg) {
        Err(Error::Diverged { step, .. }) => assert!(step < cfg.n_gradient_steps),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let ds = TransitionDataset::from_transitions(1, 2, vec![rec(0, 0, 1.0, 0, false)]).unwrap();
    let mut cfg = TrainConfig::new(Algorithm::Cql, 0.9);
    cfg.architecture = Architecture::Tabular;
    assert!(
        matches!(train(&ds, &cfg), Err(Error::Config(_))),
        "batch larger than data"
    );
    cfg.batch_size = 1;
    cfg.alpha = -1.0;
    assert!(matches!(train(&ds, &cfg), Err(Error::Config(_))));
}
