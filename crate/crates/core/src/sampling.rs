//! Action rebalancing by resampling transitions.
//!
//! Each mode computes a target count per action from the source mean count
//! `sigma`, then redraws that action's records by stratified random sampling.
//! Records are copied, never synthesized, so the next-state law of every
//! observed (state, action) pair is preserved in expectation.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{TransitionDataset, TransitionRecord};
use crate::error::{Error, Result};
use crate::rng::seeded;
use crate::text::{format_sig, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Cut actions above `K sigma` down to `K sigma`.
    Under,
    /// Raise actions below `K sigma` up to `K sigma`.
    Over,
    /// Set every action to `sigma`.
    UnderOver,
}

impl SamplingMode {
    pub fn name(self) -> &'static str {
        match self {
            SamplingMode::Under => "under",
            SamplingMode::Over => "over",
            SamplingMode::UnderOver => "underover",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub mode: SamplingMode,
    pub k: f64,
    /// Positions in each record's strata tags that define the strata.
    pub strata_keys: Vec<usize>,
    pub seed: u64,
    pub replacement: bool,
}

impl SamplingPlan {
    pub fn new(mode: SamplingMode, k: f64, seed: u64) -> Self {
        Self {
            mode,
            k,
            strata_keys: Vec::new(),
            seed,
            replacement: true,
        }
    }

    pub fn with_strata(mut self, keys: Vec<usize>) -> Self {
        self.strata_keys = keys;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionWeight {
    pub action: usize,
    pub source_count: usize,
    pub target_count: usize,
    pub realized_count: usize,
    /// Realized share over source share; `None` for actions absent from the
    /// source.
    pub w: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingReport {
    pub mode: SamplingMode,
    pub k: f64,
    pub sigma: f64,
    pub actions: Vec<ActionWeight>,
    pub min_w: f64,
    pub max_w: f64,
}

impl SamplingReport {
    pub fn weights(&self) -> Vec<Option<f64>> {
        self.actions.iter().map(|a| a.w).collect()
    }

    pub fn realized_total(&self) -> usize {
        self.actions.iter().map(|a| a.realized_count).sum()
    }

    pub fn span(&self) -> f64 {
        self.max_w / self.min_w
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new([
            "action",
            "source_count",
            "target_count",
            "realized_count",
            "w",
        ]);
        for a in &self.actions {
            t.push([
                a.action.to_string(),
                a.source_count.to_string(),
                a.target_count.to_string(),
                a.realized_count.to_string(),
                a.w.map_or_else(|| "NA".into(), |w| format_sig(w, 9)),
            ]);
        }
        t
    }

    /// One-line min/max summary.
    pub fn summary(&self) -> String {
        format!(
            "mode={} k={} sigma={} min_w={} max_w={}",
            self.mode.name(),
            format_sig(self.k, 6),
            format_sig(self.sigma, 9),
            format_sig(self.min_w, 6),
            format_sig(self.max_w, 6)
        )
    }
}

/// Mean records per action, over actions present in the source.
pub fn sigma(counts: &[usize]) -> f64 {
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present == 0 {
        return 0.0;
    }
    counts.iter().sum::<usize>() as f64 / present as f64
}

/// Target count per action; zero-count actions stay at zero.
pub fn target_counts(counts: &[usize], mode: SamplingMode, k: f64) -> Vec<usize> {
    let sigma = sigma(counts);
    let threshold = (k * sigma).floor() as usize;
    counts
        .iter()
        .map(|&c| match mode {
            _ if c == 0 => 0,
            SamplingMode::Under if c > threshold => threshold,
            SamplingMode::Over if c < threshold => threshold,
            SamplingMode::UnderOver => sigma.floor() as usize,
            _ => c,
        })
        .collect()
}

/// Split `total` draws across strata of the given sizes in proportion,
/// rounding by largest remainder (ties to the earlier stratum).
pub fn proportional_allocation(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let mut alloc: Vec<usize> = sizes.iter().map(|&s| s * total / n).collect();
    let mut rest: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| ((s * total) % n, i))
        .collect();
    rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = total - alloc.iter().sum::<usize>();
    for &(_, i) in rest.iter().take(short) {
        alloc[i] += 1;
    }
    alloc
}

pub fn validate_plan(ds: &TransitionDataset, plan: &SamplingPlan) -> Result<()> {
    if !(plan.k > 0.0 && plan.k.is_finite()) {
        return Err(Error::Config(format!("K must be > 0, got {}", plan.k)));
    }
    if let Some(&bad) = plan
        .strata_keys
        .iter()
        .find(|&&k| ds.records().iter().any(|r| k >= r.strata.len()))
    {
        return Err(Error::Config(format!(
            "strata position {bad} is absent from some records"
        )));
    }
    Ok(())
}

pub fn resample(
    ds: &TransitionDataset,
    plan: &SamplingPlan,
) -> Result<(TransitionDataset, SamplingReport)> {
    if ds.is_empty() {
        return Err(Error::InvalidDataset(
            "cannot resample an empty dataset".into(),
        ));
    }
    validate_plan(ds, plan)?;
    let counts = ds.action_counts().to_vec();
    let targets = target_counts(&counts, plan.mode, plan.k);
    if !plan.replacement {
        if let Some(a) = (0..counts.len()).find(|&a| targets[a] > counts[a]) {
            return Err(Error::Config(format!(
                "action {a} needs {} draws from {} records; sampling without replacement cannot oversample",
                targets[a], counts[a]
            )));
        }
    }

    let mut by_action: Vec<BTreeMap<Vec<u32>, Vec<&TransitionRecord>>> =
        vec![BTreeMap::new(); ds.n_actions()];
    for r in ds.records() {
        let key: Vec<u32> = plan.strata_keys.iter().map(|&k| r.strata[k]).collect();
        by_action[r.action].entry(key).or_default().push(r);
    }

    let mut rng = seeded(plan.seed);
    let mut out = Vec::with_capacity(targets.iter().sum());
    for (a, strata) in by_action.iter().enumerate() {
        if targets[a] == counts[a] {
            // Untouched actions keep their records as they are.
            for recs in strata.values() {
                out.extend(recs.iter().map(|r| (*r).clone()));
            }
            continue;
        }
        let sizes: Vec<usize> = strata.values().map(Vec::len).collect();
        let alloc = proportional_allocation(&sizes, targets[a]);
        for (recs, &n) in strata.values().zip(&alloc) {
            if plan.replacement {
                for _ in 0..n {
                    out.push(recs[rng.gen_range(0..recs.len())].clone());
                }
            } else {
                for i in index::sample(&mut rng, recs.len(), n) {
                    out.push(recs[i].clone());
                }
            }
        }
    }
    let dst = TransitionDataset::from_transitions(ds.n_states(), ds.n_actions(), out)?;
    let report = build_report(ds, &dst, plan, &targets);
    Ok((dst, report))
}

fn build_report(
    src: &TransitionDataset,
    dst: &TransitionDataset,
    plan: &SamplingPlan,
    targets: &[usize],
) -> SamplingReport {
    let w = action_conditional_shift(src, dst);
    let actions: Vec<ActionWeight> = (0..src.n_actions())
        .map(|a| ActionWeight {
            action: a,
            source_count: src.action_counts()[a],
            target_count: targets[a],
            realized_count: dst.action_counts()[a],
            w: w[a],
        })
        .collect();
    let present = || w.iter().flatten().copied();
    SamplingReport {
        mode: plan.mode,
        k: plan.k,
        sigma: sigma(src.action_counts()),
        min_w: present().fold(f64::INFINITY, f64::min),
        max_w: present().fold(f64::NEG_INFINITY, f64::max),
        actions,
    }
}

/// Per-action ratio of the action's share in `dst` to its share in `src`.
/// Actions absent from `src` give `None`.
pub fn action_conditional_shift(
    src: &TransitionDataset,
    dst: &TransitionDataset,
) -> Vec<Option<f64>> {
    let (ns, nd) = (src.len() as f64, dst.len() as f64);
    src.action_counts()
        .iter()
        .zip(dst.action_counts())
        .map(|(&cs, &cd)| (cs > 0).then(|| (cd as f64 / nd) / (cs as f64 / ns)))
        .collect()
}

/// Closed-form `w_a` implied by target counts.
pub fn expected_weights(counts: &[usize], targets: &[usize]) -> Vec<Option<f64>> {
    let ns: usize = counts.iter().sum();
    let nt: usize = targets.iter().sum();
    counts
        .iter()
        .zip(targets)
        .map(|(&c, &t)| (c > 0).then(|| (t as f64 / nt as f64) / (c as f64 / ns as f64)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PreservationTolerance {
    /// Same allowance for every pair.
    Fixed(f64),
    /// `multiplier` times the binomial standard error of the total-variation
    /// distance: `0.5 * sum_k sqrt(p_k (1 - p_k) (1/n_src + 1/n_dst))` with
    /// `p_k` the pooled next-state frequencies.
    Binomial { multiplier: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairCheck {
    pub state: usize,
    pub action: usize,
    pub n_src: usize,
    pub n_dst: usize,
    pub tv: f64,
    pub allowed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreservationReport {
    pub min_count: usize,
    pub checked: Vec<PairCheck>,
    pub violations: Vec<PairCheck>,
}

impl PreservationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn max_tv(&self) -> f64 {
        self.checked.iter().map(|c| c.tv).fold(0.0, f64::max)
    }

    /// Largest observed distance as a fraction of its allowance.
    pub fn worst_ratio(&self) -> f64 {
        self.checked
            .iter()
            .map(|c| {
                if c.allowed > 0.0 {
                    c.tv / c.allowed
                } else if c.tv > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }
}

fn next_state_counts(ds: &TransitionDataset) -> BTreeMap<(usize, usize), BTreeMap<usize, usize>> {
    let mut m: BTreeMap<(usize, usize), BTreeMap<usize, usize>> = BTreeMap::new();
    for r in ds.records() {
        *m.entry((r.state, r.action))
            .or_default()
            .entry(r.next_state)
            .or_default() += 1;
    }
    m
}

/// Compare next-state frequencies of every (state, action) pair observed at
/// least `min_count` times in both datasets.
pub fn verify_transition_preservation(
    src: &TransitionDataset,
    dst: &TransitionDataset,
    tol: PreservationTolerance,
    min_count: usize,
) -> PreservationReport {
    let a = next_state_counts(src);
    let b = next_state_counts(dst);
    let mut checked = Vec::new();
    for (&(s, act), ca) in &a {
        let Some(cb) = b.get(&(s, act)) else { continue };
        let na: usize = ca.values().sum();
        let nb: usize = cb.values().sum();
        if na < min_count || nb < min_count {
            continue;
        }
        let mut support: Vec<usize> = ca.keys().chain(cb.keys()).copied().collect();
        support.sort_unstable();
        support.dedup();
        let (mut tv, mut se) = (0.0, 0.0);
        for k in support {
            let xa = *ca.get(&k).unwrap_or(&0) as f64;
            let xb = *cb.get(&k).unwrap_or(&0) as f64;
            tv += (xa / na as f64 - xb / nb as f64).abs();
            let p = (xa + xb) / (na + nb) as f64;
            se += (p * (1.0 - p) * (1.0 / na as f64 + 1.0 / nb as f64)).sqrt();
        }
        let tv = 0.5 * tv;
        let allowed = match tol {
            PreservationTolerance::Fixed(t) => t,
            PreservationTolerance::Binomial { multiplier } => multiplier * 0.5 * se,
        };
        checked.push(PairCheck {
            state: s,
            action: act,
            n_src: na,
            n_dst: nb,
            tv,
            allowed,
        });
    }
    let violations = checked
        .iter()
        .filter(|c| c.tv > c.allowed + 1e-12)
        .cloned()
        .collect();
    PreservationReport {
        min_count,
        checked,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bag(actions: &[(usize, usize)]) -> TransitionDataset {
        // (action, count) pairs, single state, next state alternating.
        let mut recs = Vec::new();
        let mut id = 0;
        for &(a, n) in actions {
            for i in 0..n {
                recs.push(TransitionRecord {
                    episode_id: id,
                    t: 0,
                    state: 0,
                    action: a,
                    reward: 0.0,
                    next_state: i % 2,
                    done: true,
                    strata: vec![(i % 3) as u32],
                });
                id += 1;
            }
        }
        TransitionDataset::from_transitions(2, 3, recs).unwrap()
    }

    #[test]
    fn underover_weights() {
        let ds = bag(&[(0, 60), (1, 30), (2, 10)]);
        let (dst, rep) =
            resample(&ds, &SamplingPlan::new(SamplingMode::UnderOver, 1.0, 3)).unwrap();
        assert_eq!(dst.action_counts(), &[33, 33, 33]);
        let expect = [33.0 / 60.0, 33.0 / 30.0, 33.0 / 10.0].map(|x| x * 100.0 / 99.0);
        for (w, e) in rep.weights().iter().zip(expect) {
            assert!((w.unwrap() - e).abs() < 1e-12);
        }
        assert_eq!(rep.realized_total(), dst.len());
    }

    #[test]
    fn balanced_underover_is_identity_in_weight() {
        let ds = bag(&[(0, 20), (1, 20), (2, 20)]);
        let (_, rep) = resample(&ds, &SamplingPlan::new(SamplingMode::UnderOver, 1.0, 0)).unwrap();
        assert!(rep
            .weights()
            .iter()
            .all(|w| (w.unwrap() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn undersampling_threshold() {
        assert_eq!(
            target_counts(&[60, 30, 10], SamplingMode::Under, 0.8),
            vec![26, 26, 10]
        );
        let ds = bag(&[(0, 60), (1, 30), (2, 10)]);
        let (_, rep) = resample(&ds, &SamplingPlan::new(SamplingMode::Under, 0.8, 0)).unwrap();
        assert!(rep.actions[2].w.unwrap() > 1.0);
    }

    #[test]
    fn oversampling_threshold_and_missing_actions() {
        assert_eq!(
            target_counts(&[60, 30, 10], SamplingMode::Over, 1.0),
            vec![60, 33, 33]
        );
        // sigma over present actions only
        assert_eq!(
            target_counts(&[60, 0, 20], SamplingMode::UnderOver, 1.0),
            vec![40, 0, 40]
        );
    }

    #[test]
    fn shift_example() {
        let src = bag(&[(0, 3), (1, 1)]);
        let dst = bag(&[(0, 1), (1, 1)]);
        let w = action_conditional_shift(&src, &dst);
        assert!((w[0].unwrap() - 0.5 / 0.75).abs() < 1e-12);
        assert!((w[1].unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(w[2], None);
        assert!(action_conditional_shift(&src, &src)
            .iter()
            .flatten()
            .all(|&w| w == 1.0));
    }

    #[test]
    fn allocation_sums_and_is_proportional() {
        assert_eq!(proportional_allocation(&[5, 3, 2], 10), vec![5, 3, 2]);
        assert_eq!(proportional_allocation(&[1, 1, 1], 2), vec![1, 1, 0]);
        assert_eq!(proportional_allocation(&[6, 3], 4), vec![3, 1]);
    }

    #[test]
    fn stratum_shares_are_kept() {
        let ds = bag(&[(0, 60), (1, 30), (2, 10)]);
        let plan = SamplingPlan::new(SamplingMode::UnderOver, 1.0, 1).with_strata(vec![0]);
        let (dst, _) = resample(&ds, &plan).unwrap();
        let expected = [[11, 11, 11], [11, 11, 11], [13, 10, 10]];
        for a in 0..3 {
            let mut per = [0usize; 3];
            for r in dst.records().iter().filter(|r| r.action == a) {
                per[r.strata[0] as usize] += 1;
            }
            assert_eq!(per, expected[a], "action {a}");
        }
    }

    #[test]
    fn rejects_missing_strata_and_bad_k() {
        let ds = bag(&[(0, 4)]);
        let plan = SamplingPlan::new(SamplingMode::Under, 1.0, 0).with_strata(vec![1]);
        assert!(matches!(resample(&ds, &plan), Err(Error::Config(_))));
        assert!(resample(&ds, &SamplingPlan::new(SamplingMode::Under, 0.0, 0)).is_err());
    }

    #[test]
    fn without_replacement_cannot_oversample() {
        let ds = bag(&[(0, 60), (1, 30), (2, 10)]);
        let mut plan = SamplingPlan::new(SamplingMode::Over, 1.0, 0);
        plan.replacement = false;
        assert!(resample(&ds, &plan).is_err());
        plan.mode = SamplingMode::Under;
        let (dst, _) = resample(&ds, &plan).unwrap();
        assert_eq!(dst.action_counts(), &[33, 30, 10]);
    }

    #[test]
    fn identical_datasets_have_zero_distance() {
        let ds = bag(&[(0, 60), (1, 30)]);
        let rep = verify_transition_preservation(&ds, &ds, PreservationTolerance::Fixed(0.0), 1);
        assert!(rep.passed());
        assert_eq!(rep.max_tv(), 0.0);
    }

    #[test]
    fn dropped_outcome_is_flagged() {
        let src = bag(&[(0, 60), (1, 30)]);
        let kept: Vec<TransitionRecord> = src
            .records()
            .iter()
            .filter(|r| !(r.action == 0 && r.next_state == 1))
            .cloned()
            .collect();
        let dst = TransitionDataset::from_transitions(2, 3, kept).unwrap();
        let rep = verify_transition_preservation(
            &src,
            &dst,
            PreservationTolerance::Binomial { multiplier: 3.0 },
            10,
        );
        assert_eq!(rep.violations.len(), 1);
        assert_eq!((rep.violations[0].state, rep.violations[0].action), (0, 0));
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = bag(&[(0, 60), (1, 30), (2, 10)]);
        let plan = SamplingPlan::new(SamplingMode::Over, 1.0, 42);
        assert_eq!(
            resample(&ds, &plan).unwrap().0,
            resample(&ds, &plan).unwrap().0
        );
    }
}
