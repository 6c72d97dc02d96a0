use crate::dataset::{TransitionDataset, TransitionRecord};
use crate::envgen::ConstraintRule;
use crate::error::{Error, Result};
use crate::mdp::Policy;
use crate::text::{format_sig, Table};

/// A proportion with its counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rate {
    pub value: f64,
    pub numerator: usize,
    pub denominator: usize,
}

impl Rate {
    fn from_counts(numerator: usize, denominator: usize, what: &str) -> Result<Self> {
        if denominator == 0 {
            return Err(Error::Undefined(format!("{what}: no qualifying records")));
        }
        Ok(Self {
            value: numerator as f64 / denominator as f64,
            numerator,
            denominator,
        })
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.value
    }
}

/// Share of records where two policies recommend the same action.
pub fn model_concordance(ds: &TransitionDataset, pi_a: &Policy, pi_b: &Policy) -> Result<Rate> {
    let agree = ds
        .records()
        .iter()
        .filter(|r| pi_a.action(r.state) == pi_b.action(r.state))
        .count();
    Rate::from_counts(agree, ds.len(), "model concordance")
}

/// Share of records where the recommendation equals the logged action.
pub fn logged_concordance<'a>(
    ds: &TransitionDataset,
    rec: impl Into<Recommender<'a>>,
) -> Result<Rate> {
    let rec = rec.into();
    let agree = ds
        .records()
        .iter()
        .filter(|r| rec.action(r) == r.action)
        .count();
    Rate::from_counts(agree, ds.len(), "model concordance")
}

/// Where a record's action comes from: a policy's recommendation for the
/// record's state, or the logged action itself.
#[derive(Clone, Copy)]
pub enum Recommender<'a> {
    Policy(&'a Policy),
    Logged,
}

impl Recommender<'_> {
    fn action(&self, r: &TransitionRecord) -> usize {
        match self {
            Recommender::Policy(p) => p.action(r.state),
            Recommender::Logged => r.action,
        }
    }
}

impl<'a> From<&'a Policy> for Recommender<'a> {
    fn from(p: &'a Policy) -> Self {
        Recommender::Policy(p)
    }
}

/// Among records in out-of-control states, share where the recommended
/// action intensifies treatment.
pub fn appropriate_intensification<'a>(
    ds: &TransitionDataset,
    rec: impl Into<Recommender<'a>>,
    out_of_control: &[bool],
    non_intensifying: &[usize],
) -> Result<Rate> {
    let rec = rec.into();
    let (mut hit, mut n) = (0, 0);
    for r in ds.records().iter().filter(|r| out_of_control[r.state]) {
        n += 1;
        if !non_intensifying.contains(&rec.action(r)) {
            hit += 1;
        }
    }
    Rate::from_counts(hit, n, "appropriate intensification")
}

/// Among records where `rule` applies, share where the recommended action is
/// permitted by it.
pub fn constraint_satisfaction_rate<'a>(
    ds: &TransitionDataset,
    rec: impl Into<Recommender<'a>>,
    rule: &ConstraintRule,
) -> Result<Rate> {
    let rec = rec.into();
    let (mut ok, mut n) = (0, 0);
    for r in ds.records().iter().filter(|r| rule.applies[r.state]) {
        n += 1;
        if rule.permits(r.state, rec.action(r)) {
            ok += 1;
        }
    }
    Rate::from_counts(ok, n, &format!("constraint satisfaction for {}", rule.name))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub agent: String,
    pub metric: String,
    pub value: Option<f64>,
    pub denominator: Option<usize>,
    pub notes: String,
}

/// Flat per-agent metric table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<MetricRow>,
}

impl EvaluationReport {
    pub fn push_value(&mut self, agent: &str, metric: &str, value: f64, notes: impl Into<String>) {
        self.rows.push(MetricRow {
            agent: agent.into(),
            metric: metric.into(),
            value: Some(value),
            denominator: None,
            notes: notes.into(),
        });
    }

    /// Record a rate, or an undefined marker when the rate has no denominator.
    pub fn push_rate(&mut self, agent: &str, metric: &str, rate: Result<Rate>) {
        let row = match rate {
            Ok(r) => MetricRow {
                agent: agent.into(),
                metric: metric.into(),
                value: Some(r.value),
                denominator: Some(r.denominator),
                notes: String::new(),
            },
            Err(e) => MetricRow {
                agent: agent.into(),
                metric: metric.into(),
                value: None,
                denominator: Some(0),
                notes: e.to_string(),
            },
        };
        self.rows.push(row);
    }

    pub fn get(&self, agent: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.agent == agent && r.metric == metric)
            .and_then(|r| r.value)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(["agent", "metric", "value", "denominator", "notes"]);
        for r in &self.rows {
            t.push([
                r.agent.clone(),
                r.metric.clone(),
                r.value.map_or_else(|| "NA".into(), |v| format_sig(v, 9)),
                r.denominator.map_or_else(|| "NA".into(), |d| d.to_string()),
                r.notes.clone(),
            ]);
        }
        t
    }
}
