use offrl::dataset::{TransitionDataset, TransitionRecord};
use offrl::envgen::{build_chronic_care, ChronicCareConfig};
use offrl::sampling::{
    action_conditional_shift, expected_weights, resample, target_counts,
    verify_transition_preservation, PreservationTolerance, SamplingMode, SamplingPlan,
};
use proptest::prelude::*;

fn bag(counts: &[usize]) -> TransitionDataset {
    let mut recs = Vec::new();
    for (a, &c) in counts.iter().enumerate() {
        for i in 0..c {
            recs.push(TransitionRecord {
                episode_id: (a * 10_000 + i) as u64,
                t: 0,
                state: i % 3,
                action: a,
                reward: 0.0,
                next_state: (i / 3) % 3,
                done: true,
                strata: vec![(i % 2) as u32],
            });
        }
    }
    TransitionDataset::from_transitions(3, counts.len(), recs).unwrap()
}

#[test]
fn underover_example() {
    let ds = bag(&[60, 30, 10]);
    let (dst, rep) = resample(&ds, &SamplingPlan::new(SamplingMode::UnderOver, 1.0, 0)).unwrap();
    assert_eq!(dst.action_counts(), &[33, 33, 33]);
    let w = rep.weights();
    let expect = [33.0 / 60.0, 33.0 / 30.0, 33.0 / 10.0].map(|x| x * 100.0 / 99.0);
    for (got, want) in w.iter().zip(expect) {
        assert!((got.unwrap() - want).abs() < 1e-12);
    }
    assert!((w[0].unwrap() - 0.5556).abs() < 1e-3);
    assert!((w[2].unwrap() - 3.3333).abs() < 1e-3);
}

#[test]
fn balanced_underover_is_identity_weights() {
    let ds = bag(&[20, 20, 20]);
    let (_, rep) = resample(&ds, &SamplingPlan::new(SamplingMode::UnderOver, 1.0, 0)).unwrap();
    assert!(rep
        .weights()
        .iter()
        .all(|w| (w.unwrap() - 1.0).abs() < 1e-15));
}

#[test]
fn under_example() {
    let ds = bag(&[60, 30, 10]);
    assert_eq!(
        target_counts(ds.action_counts(), SamplingMode::Under, 0.8),
        vec![26, 26, 10]
    );
    let (dst, rep) = resample(&ds, &SamplingPlan::new(SamplingMode::Under, 0.8, 3)).unwrap();
    assert_eq!(dst.action_counts(), &[26, 26, 10]);
    assert!(rep.weights()[2].unwrap() > 1.0);
}

#[test]
fn shift_example() {
    let src = bag(&[3, 1]);
    let dst = bag(&[1, 1]);
    let w = action_conditional_shift(&src, &dst);
    assert!((w[0].unwrap() - 2.0 / 3.0).abs() < 1e-15);
    assert!((w[1].unwrap() - 2.0).abs() < 1e-15);
    assert_eq!(
        action_conditional_shift(&src, &src),
        vec![Some(1.0), Some(1.0)]
    );
}

#[test]
fn absent_actions_are_skipped() {
    let ds = bag(&[10, 0, 4]);
    let (dst, rep) = resample(&ds, &SamplingPlan::new(SamplingMode::UnderOver, 1.0, 1)).unwrap();
    assert_eq!(dst.action_counts(), &[7, 0, 7]);
    assert_eq!(rep.weights()[1], None);
}

#[test]
fn missing_strata_is_a_config_error() {
    let ds = bag(&[5, 5]);
    let plan = SamplingPlan::new(SamplingMode::Under, 0.5, 0).with_strata(vec![3]);
    assert!(matches!(resample(&ds, &plan), Err(offrl::Error::Config(_))));
}

#[test]
fn without_replacement_cannot_oversample() {
    let ds = bag(&[10, 2]);
    let mut plan = SamplingPlan::new(SamplingMode::Over, 1.0, 0);
    plan.replacement = false;
    assert!(resample(&ds, &plan).is_err());
    let mut under = SamplingPlan::new(SamplingMode::Under, 0.5, 0);
    under.replacement = false;
    let (dst, _) = resample(&ds, &under).unwrap();
    assert_eq!(dst.action_counts(), &[3, 2]);
}

#[test]
fn preservation_identity_and_adversarial() {
    let env = build_chronic_care(&ChronicCareConfig::default()).unwrap();
    let src = env.behavior_dataset(2000, 7, 0).unwrap();
    let tol = PreservationTolerance::Binomial { multiplier: 3.0 };
    let same = verify_transition_preservation(&src, &src, tol, 50);
    assert!(same.passed() && same.max_tv() == 0.0 && !same.checked.is_empty());

    // drop every record of the busiest pair's most common next state
    let pair = same.checked.iter().max_by_key(|c| c.n_src).unwrap();
    let (s, a) = (pair.state, pair.action);
    let mut next_counts = std::collections::BTreeMap::new();
    for r in src
        .records()
        .iter()
        .filter(|r| r.state == s && r.action == a)
    {
        *next_counts.entry(r.next_state).or_insert(0) += 1;
    }
    let (&drop, _) = next_counts.iter().max_by_key(|(_, &c)| c).unwrap();
    let kept: Vec<_> = src
        .records()
        .iter()
        .filter(|r| !(r.state == s && r.action == a && r.next_state == drop))
        .cloned()
        .collect();
    let dst = TransitionDataset::from_transitions(src.n_states(), src.n_actions(), kept).unwrap();
    let rep = verify_transition_preservation(&src, &dst, tol, 50);
    assert!(rep.violations.iter().any(|v| v.state == s && v.action == a));
}

#[test]
fn all_modes_preserve_next_state_law() {
    let env = build_chronic_care(&ChronicCareConfig::default()).unwrap();
    let src = env.behavior_dataset(3000, 8, 0).unwrap();
    let tol = PreservationTolerance::Binomial { multiplier: 3.0 };
    for (mode, k) in [
        (SamplingMode::Under, 0.8),
        (SamplingMode::Over, 0.8),
        (SamplingMode::UnderOver, 1.0),
    ] {
        let plan = SamplingPlan::new(mode, k, 21).with_strata(vec![0, 1]);
        let (dst, _) = resample(&src, &plan).unwrap();
        let rep = verify_transition_preservation(&src, &dst, tol, 50);
        assert!(rep.passed(), "{mode:?}: {:?}", rep.violations);
    }
}

#[test]
fn strata_shares_follow_source_within_action() {
    let env = build_chronic_care(&ChronicCareConfig::default()).unwrap();
    let src = env.behavior_dataset(1000, 2, 0).unwrap();
    let plan = SamplingPlan::new(SamplingMode::UnderOver, 1.0, 4).with_strata(vec![0]);
    let (dst, rep) = resample(&src, &plan).unwrap();
    for aw in &rep.actions {
        if aw.source_count == 0 || aw.target_count == aw.source_count {
            continue;
        }
        let share = |ds: &TransitionDataset| {
            let recs: Vec<_> = ds
                .records()
                .iter()
                .filter(|r| r.action == aw.action)
                .collect();
            recs.iter().filter(|r| r.strata[0] == 0).count() as f64 / recs.len() as f64
        };
        // largest-remainder allocation is off by at most one draw
        assert!((share(&src) - share(&dst)).abs() <= 1.0 / aw.target_count as f64 + 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn counts_move_in_the_stated_direction(
        counts in prop::collection::vec(1usize..80, 2..6),
        k in 0.2f64..1.6,
        seed in 0u64..1000,
    ) {
        let ds = bag(&counts);
        for mode in [SamplingMode::Under, SamplingMode::Over, SamplingMode::UnderOver] {
            let (dst, rep) = resample(&ds, &SamplingPlan::new(mode, k, seed).with_strata(vec![0])).unwrap();
            let threshold = (k * rep.sigma).floor() as usize;
            for (a, (&c, &d)) in counts.iter().zip(dst.action_counts()).enumerate() {
                prop_assert_eq!(d, rep.actions[a].target_count);
                match mode {
                    SamplingMode::Under => prop_assert!(d <= c && (c <= threshold || d == threshold)),
                    SamplingMode::Over => prop_assert!(d >= c && (c >= threshold || d == threshold)),
                    SamplingMode::UnderOver => prop_assert_eq!(d, rep.sigma.floor() as usize),
                }
            }
            prop_assert_eq!(rep.realized_total(), dst.len());
            // realized weights reproduce the closed form
            let min_count = *counts.iter().min().unwrap() as f64;
            let closed = expected_weights(&counts, &target_counts(&counts, mode, k));
            for (got, want) in rep.weights().iter().zip(closed) {
                prop_assert!((got.unwrap() - want.unwrap()).abs() < 1.0 / min_count);
                prop_assert!(got.unwrap() > 0.0);
            }
            let (again, _) = resample(&ds, &SamplingPlan::new(mode, k, seed).with_strata(vec![0])).unwrap();
            prop_assert_eq!(dst, again);
        }
    }
}
