//! Logged transitions and the empirical quantities derived from them.

use std::io::{BufRead, Write};
use std::ops::Range;

use crate::error::{Error, Result};
use crate::mdp::Policy;
use crate::text::format_sig;

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub episode_id: u64,
    pub t: u32,
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub done: bool,
    /// Categorical tags used for stratified resampling.
    pub strata: Vec<u32>,
}

/// An immutable transition log.
///
/// Episodic datasets (rollouts, splits) keep the episode structure: records of
/// an episode are contiguous, `t` counts up from 0 and only the last record
/// is `done`. Resampled datasets are plain transition bags where `episode_id`
/// is provenance only.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    n_states: usize,
    n_actions: usize,
    records: Vec<TransitionRecord>,
    episodes: Vec<(u64, Range<usize>)>,
    action_counts: Vec<usize>,
}

impl TransitionDataset {
    /// Build an episodic dataset, validating the episode structure.
    pub fn from_episodes(
        n_states: usize,
        n_actions: usize,
        records: Vec<TransitionRecord>,
    ) -> Result<Self> {
        let mut ds = Self::from_transitions(n_states, n_actions, records)?;
        let mut episodes = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut start = 0;
        while start < ds.records.len() {
            let id = ds.records[start].episode_id;
            let mut end = start;
            while end < ds.records.len() && ds.records[end].episode_id == id {
                let r = &ds.records[end];
                if r.t as usize != end - start {
                    return Err(Error::InvalidDataset(format!(
                        "episode {id}: expected t={}, found t={}",
                        end - start,
                        r.t
                    )));
                }
                end += 1;
            }
            for (i, r) in ds.records[start..end].iter().enumerate() {
                let is_last = start + i + 1 == end;
                if r.done != is_last {
                    return Err(Error::InvalidDataset(format!(
                        "episode {id}: done flag wrong at t={}",
                        r.t
                    )));
                }
            }
            if !seen.insert(id) {
                return Err(Error::InvalidDataset(format!(
                    "episode {id} is not contiguous"
                )));
            }
            episodes.push((id, start..end));
            start = end;
        }
        ds.episodes = episodes;
        Ok(ds)
    }

    /// Build a transition bag without episode structure.
    pub fn from_transitions(
        n_states: usize,
        n_actions: usize,
        records: Vec<TransitionRecord>,
    ) -> Result<Self> {
        let mut action_counts = vec![0; n_actions];
        for (i, r) in records.iter().enumerate() {
            if r.state >= n_states || r.next_state >= n_states {
                return Err(Error::InvalidDataset(format!(
                    "record {i}: state out of range (n_states={n_states})"
                )));
            }
            if r.action >= n_actions {
                return Err(Error::InvalidDataset(format!(
                    "record {i}: action {} out of range (n_actions={n_actions})",
                    r.action
                )));
            }
            if !r.reward.is_finite() {
                return Err(Error::InvalidDataset(format!(
                    "record {i}: non-finite reward"
                )));
            }
            action_counts[r.action] += 1;
        }
        Ok(Self {
            n_states,
            n_actions,
            records,
            episodes: Vec::new(),
            action_counts,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[TransitionRecord] {
        &self.records
    }

    pub fn is_episodic(&self) -> bool {
        !self.episodes.is_empty()
    }

    pub fn n_episodes(&self) -> usize {
        self.episodes.len()
    }

    pub fn episode_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.episodes.iter().map(|(id, _)| *id)
    }

    /// Records of each episode, in dataset order.
    pub fn episodes(&self) -> impl Iterator<Item = &[TransitionRecord]> + '_ {
        self.episodes.iter().map(|(_, r)| &self.records[r.clone()])
    }

    pub fn action_counts(&self) -> &[usize] {
        &self.action_counts
    }

    pub fn action_shares(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        self.action_counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// `counts[s][a]`
    pub fn state_action_counts(&self) -> Vec<Vec<usize>> {
        let mut c = vec![vec![0; self.n_actions]; self.n_states];
        for r in &self.records {
            c[r.state][r.action] += 1;
        }
        c
    }

    /// Episodic sub-dataset made of the listed episodes (in the given order).
    pub fn select_episodes(&self, ids: &[u64]) -> Result<Self> {
        let index: std::collections::HashMap<u64, &Range<usize>> =
            self.episodes.iter().map(|(e, r)| (*e, r)).collect();
        let mut records = Vec::new();
        for id in ids {
            let range = (*index
                .get(id)
                .ok_or_else(|| Error::InvalidDataset(format!("no episode {id}")))?)
            .clone();
            records.extend_from_slice(&self.records[range]);
        }
        Self::from_episodes(self.n_states, self.n_actions, records)
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", DATASET_HEADER)?;
        for r in &self.records {
            let strata: Vec<String> = r.strata.iter().map(|x| x.to_string()).collect();
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.episode_id,
                r.t,
                r.state,
                r.action,
                format_sig(r.reward, 9),
                r.next_state,
                u8::from(r.done),
                strata.join(";")
            )?;
        }
        Ok(())
    }

    /// Parse the text format. `episodic` selects which constructor validates
    /// the records.
    pub fn read_text<R: BufRead>(
        r: R,
        n_states: usize,
        n_actions: usize,
        episodic: bool,
    ) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing header"))??;
        if header.trim() != DATASET_HEADER {
            return Err(Error::parse(1, format!("unexpected header {header:?}")));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            records.push(parse_record(&line).map_err(|m| Error::parse(lineno, m))?);
        }
        if episodic {
            Self::from_episodes(n_states, n_actions, records)
        } else {
            Self::from_transitions(n_states, n_actions, records)
        }
    }
}

pub const DATASET_HEADER: &str = "episode_id,t,state,action,reward,next_state,done,strata";

fn parse_record(line: &str) -> std::result::Result<TransitionRecord, String> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != 8 {
        return Err(format!("expected 8 fields, found {}", fields.len()));
    }
    fn num<T: std::str::FromStr>(s: &str, name: &str) -> std::result::Result<T, String> {
        s.trim().parse().map_err(|_| format!("bad {name}: {s:?}"))
    }
    let done = match fields[6].trim() {
        "0" => false,
        "1" => true,
        other => return Err(format!("bad done flag {other:?}")),
    };
    let strata = if fields[7].trim().is_empty() {
        Vec::new()
    } else {
        fields[7]
            .split(';')
            .map(|x| num(x, "strata tag"))
            .collect::<std::result::Result<_, _>>()?
    };
    Ok(TransitionRecord {
        episode_id: num(fields[0], "episode_id")?,
        t: num(fields[1], "t")?,
        state: num(fields[2], "state")?,
        action: num(fields[3], "action")?,
        reward: num(fields[4], "reward")?,
        next_state: num(fields[5], "next_state")?,
        done,
        strata,
    })
}

/// Count-based estimate of the behavior policy with add-`smoothing`.
/// Unvisited states get the uniform distribution.
pub fn empirical_behavior_policy(ds: &TransitionDataset, smoothing: f64) -> Result<Policy> {
    if ds.is_empty() {
        return Err(Error::InvalidDataset("empty dataset".into()));
    }
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::Config(format!(
            "smoothing must be >= 0, got {smoothing}"
        )));
    }
    let na = ds.n_actions();
    let probs = ds
        .state_action_counts()
        .into_iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            if total == 0 {
                return vec![1.0 / na as f64; na];
            }
            let denom = total as f64 + smoothing * na as f64;
            row.iter()
                .map(|&c| (c as f64 + smoothing) / denom)
                .collect()
        })
        .collect();
    Policy::stochastic(probs)
}

/// Empirical next-state distributions; `None` marks unobserved pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalTransitions {
    pub counts: Vec<Vec<usize>>,
    pub probs: Vec<Vec<Option<Vec<f64>>>>,
}

impl EmpiricalTransitions {
    pub fn get(&self, s: usize, a: usize) -> Option<&[f64]> {
        self.probs[s][a].as_deref()
    }

    pub fn count(&self, s: usize, a: usize) -> usize {
        self.counts[s][a]
    }
}

pub fn empirical_transition_freq(ds: &TransitionDataset) -> Result<EmpiricalTransitions> {
    if ds.is_empty() {
        return Err(Error::InvalidDataset("empty dataset".into()));
    }
    let (ns, na) = (ds.n_states(), ds.n_actions());
    let mut next = vec![vec![vec![0usize; ns]; na]; ns];
    for r in ds.records() {
        next[r.state][r.action][r.next_state] += 1;
    }
    let mut counts = vec![vec![0; na]; ns];
    let probs = next
        .into_iter()
        .enumerate()
        .map(|(s, per_a)| {
            per_a
                .into_iter()
                .enumerate()
                .map(|(a, row)| {
                    let n: usize = row.iter().sum();
                    counts[s][a] = n;
                    (n > 0).then(|| row.iter().map(|&c| c as f64 / n as f64).collect())
                })
                .collect()
        })
        .collect();
    Ok(EmpiricalTransitions { counts, probs })
}
