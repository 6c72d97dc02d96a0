//! Offline training loops: Q-learning, double DQN and conservative
//! Q-learning, all driven by uniform minibatches drawn from a fixed dataset.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{Adam, Architecture, QFunction};
use crate::dataset::{TransitionDataset, TransitionRecord};
use crate::error::{Error, Result};
use crate::mdp::{argmax, Policy};
use crate::rng::{derive_seed, seeded};
use crate::text::{format_sig, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    QLearning,
    Ddqn,
    Cql,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::QLearning => "qlearning",
            Algorithm::Ddqn => "ddqn",
            Algorithm::Cql => "cql",
        }
    }

    fn uses_target_network(self) -> bool {
        !matches!(self, Algorithm::QLearning)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    /// Plain gradient descent.
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    /// Weight of the conservative gap term. Ignored unless `algorithm` is CQL.
    pub alpha: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub n_gradient_steps: usize,
    pub target_sync_interval: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub architecture: Architecture,
    pub optimizer: OptimizerKind,
    pub clip_norm: Option<f64>,
}

impl TrainConfig {
    pub fn new(algorithm: Algorithm, gamma: f64) -> Self {
        Self {
            algorithm,
            alpha: if algorithm == Algorithm::Cql {
                1.0
            } else {
                0.0
            },
            gamma,
            batch_size: 64,
            n_gradient_steps: 5000,
            target_sync_interval: 100,
            learning_rate: 1e-3,
            seed: 0,
            architecture: Architecture::default_network(),
            optimizer: OptimizerKind::Adam,
            clip_norm: Some(10.0),
        }
    }

    fn effective_alpha(&self) -> f64 {
        if self.algorithm == Algorithm::Cql {
            self.alpha
        } else {
            0.0
        }
    }

    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return fail(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if self.target_sync_interval == 0 {
            return fail("target sync interval must be >= 1".into());
        }
        if self.batch_size == 0 || self.batch_size > dataset_len {
            return fail(format!(
                "batch size {} must be in 1..={dataset_len}",
                self.batch_size
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    /// Mean `logsumexp_a Q(s, a) - Q(s, a_data)`, before weighting by alpha.
    pub gap: f64,
    /// Half the mean squared temporal-difference error.
    pub bellman: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub loss: LossBreakdown,
    pub target_syncs: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedAgent {
    pub q: QFunction,
    pub policy: Policy,
    pub log: Vec<LogEntry>,
}

impl TrainedAgent {
    pub fn log_table(&self) -> Table {
        let mut t = Table::new(["step", "total", "gap", "bellman", "target_syncs"]);
        for e in &self.log {
            t.push([
                e.step.to_string(),
                format_sig(e.loss.total, 9),
                format_sig(e.loss.gap, 9),
                format_sig(e.loss.bellman, 9),
                e.target_syncs.to_string(),
            ]);
        }
        t
    }
}

/// Greedy policy of `q` with ties broken toward the lowest action id.
pub fn greedy_policy(q: &QFunction) -> Policy {
    let actions = (0..q.n_states()).map(|s| argmax(&q.forward(s))).collect();
    Policy::Deterministic {
        n_actions: q.n_actions(),
        actions,
    }
}

/// `y = r + gamma (1 - done) max_a' Q_target(s', a')`
pub fn bellman_target(q_target: &QFunction, batch: &[&TransitionRecord], gamma: f64) -> Vec<f64> {
    batch
        .iter()
        .map(|rec| {
            if rec.done || gamma == 0.0 {
                rec.reward
            } else {
                let row = q_target.forward(rec.next_state);
                rec.reward + gamma * row[argmax(&row)]
            }
        })
        .collect()
}

/// `y = r + gamma (1 - done) Q_target(s', argmax_a' Q_master(s', a'))`
pub fn ddqn_target(
    q_master: &QFunction,
    q_target: &QFunction,
    batch: &[&TransitionRecord],
    gamma: f64,
) -> Vec<f64> {
    batch
        .iter()
        .map(|rec| {
            if rec.done || gamma == 0.0 {
                rec.reward
            } else {
                let pick = argmax(&q_master.forward(rec.next_state));
                rec.reward + gamma * q_target.forward(rec.next_state)[pick]
            }
        })
        .collect()
}

/// `logsumexp(row) - row[a]`, accurate when `row[a]` dominates.
fn gap_term(row: &[f64], a: usize) -> f64 {
    let top = argmax(row);
    let m = row[top];
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, x)| (x - m).exp())
        .sum();
    (m - row[a]) + rest.ln_1p()
}

/// Loss against fixed targets `y`, plus its gradient with respect to the
/// outputs `Q(s_b, ·)`.
fn loss_and_output_grad(
    q_out: &[f64],
    n_actions: usize,
    batch: &[&TransitionRecord],
    y: &[f64],
    alpha: f64,
) -> (LossBreakdown, Vec<f64>) {
    let b = batch.len() as f64;
    let mut grad = vec![0.0; q_out.len()];
    let (mut gap, mut bellman) = (0.0, 0.0);
    for (i, rec) in batch.iter().enumerate() {
        let row = &q_out[i * n_actions..(i + 1) * n_actions];
        let g = &mut grad[i * n_actions..(i + 1) * n_actions];
        let q_data = row[rec.action];
        let td = q_data - y[i];
        bellman += 0.5 * td * td;
        g[rec.action] += td / b;
        let gap_i = gap_term(row, rec.action);
        gap += gap_i;
        if alpha > 0.0 {
            // softmax_a = exp(Q_a - Q_data - gap)
            for (ga, &qa) in g.iter_mut().zip(row) {
                *ga += alpha * (qa - q_data - gap_i).exp() / b;
            }
            g[rec.action] -= alpha / b;
        }
    }
    let gap = gap / b;
    let bellman = bellman / b;
    let loss = LossBreakdown {
        total: alpha * gap + bellman,
        gap,
        bellman,
    };
    (loss, grad)
}

/// `alpha * mean[logsumexp Q(s,·) - Q(s,a)] + 0.5 * mean[(Q(s,a) - y)^2]`
/// with the targets held fixed.
pub fn loss_with_targets(
    q: &QFunction,
    batch: &[&TransitionRecord],
    y: &[f64],
    alpha: f64,
) -> LossBreakdown {
    let states: Vec<usize> = batch.iter().map(|r| r.state).collect();
    let (out, _) = q.forward_batch(&states);
    loss_and_output_grad(&out, q.n_actions(), batch, y, alpha).0
}

/// Loss and parameter gradient against fixed targets.
pub fn loss_gradient(
    q: &QFunction,
    batch: &[&TransitionRecord],
    y: &[f64],
    alpha: f64,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let states: Vec<usize> = batch.iter().map(|r| r.state).collect();
    let (out, cache) = q.forward_batch(&states);
    let (loss, g_out) = loss_and_output_grad(&out, q.n_actions(), batch, y, alpha);
    Ok((loss, q.backward(&cache, &g_out)?))
}

/// Conservative loss with targets from `q_target`.
pub fn cql_loss(
    q: &QFunction,
    q_target: &QFunction,
    batch: &[&TransitionRecord],
    alpha: f64,
    gamma: f64,
) -> LossBreakdown {
    let y = bellman_target(q_target, batch, gamma);
    loss_with_targets(q, batch, &y, alpha)
}

/// Mean gap term over every record of `ds`.
pub fn full_pass_gap(q: &QFunction, ds: &TransitionDataset) -> f64 {
    reweighted_gap(q, ds, &vec![Some(1.0); ds.n_actions()])
}

/// `sum_r w[a_r] * gap(r) / |ds|`: the gap a resampled dataset with
/// per-action weights `w` would see, evaluated on the source records.
/// Actions without a weight contribute nothing.
pub fn reweighted_gap(q: &QFunction, ds: &TransitionDataset, w: &[Option<f64>]) -> f64 {
    let rows: Vec<Vec<f64>> = (0..ds.n_states()).map(|s| q.forward(s)).collect();
    let total: f64 = ds
        .records()
        .iter()
        .filter_map(|r| w[r.action].map(|w| w * gap_term(&rows[r.state], r.action)))
        .sum();
    total / ds.len() as f64
}

/// Targets the given algorithm regresses onto.
pub fn targets_for(
    algorithm: Algorithm,
    q: &QFunction,
    q_target: &QFunction,
    batch: &[&TransitionRecord],
    gamma: f64,
) -> Vec<f64> {
    match algorithm {
        Algorithm::QLearning => bellman_target(q, batch, gamma),
        Algorithm::Ddqn => ddqn_target(q, q_target, batch, gamma),
        Algorithm::Cql => bellman_target(q_target, batch, gamma),
    }
}

/// Train a freshly initialized Q-function.
pub fn train(ds: &TransitionDataset, cfg: &TrainConfig) -> Result<TrainedAgent> {
    let q = QFunction::build(
        &cfg.architecture,
        ds.n_states(),
        ds.n_actions(),
        derive_seed(cfg.seed, 1),
    );
    train_from(q, ds, cfg)
}

/// Train starting from the given parameters.
pub fn train_from(
    mut q: QFunction,
    ds: &TransitionDataset,
    cfg: &TrainConfig,
) -> Result<TrainedAgent> {
    if ds.is_empty() {
        return Err(Error::InvalidDataset(
            "cannot train on an empty dataset".into(),
        ));
    }
    cfg.validate(ds.len())?;
    if q.n_states() != ds.n_states() || q.n_actions() != ds.n_actions() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} states x {} actions", ds.n_states(), ds.n_actions()),
            found: format!("{} states x {} actions", q.n_states(), q.n_actions()),
        });
    }
    let alpha = cfg.effective_alpha();
    let records = ds.records();
    let mut rng = seeded(derive_seed(cfg.seed, 2));
    let mut adam = match cfg.optimizer {
        OptimizerKind::Adam => {
            Some(Adam::new(q.n_params(), cfg.learning_rate)?.with_clip_norm(cfg.clip_norm))
        }
        OptimizerKind::Sgd => None,
    };
    let mut q_target = q.clone();
    let mut syncs = 0;
    let mut log = Vec::with_capacity(cfg.n_gradient_steps);
    let mut batch: Vec<&TransitionRecord> = Vec::with_capacity(cfg.batch_size);

    for step in 0..cfg.n_gradient_steps {
        batch.clear();
        batch.extend((0..cfg.batch_size).map(|_| &records[rng.gen_range(0..records.len())]));
        let y = targets_for(cfg.algorithm, &q, &q_target, &batch, cfg.gamma);
        let diverged = |loss: LossBreakdown| Error::Diverged {
            step,
            total: loss.total,
            gap: loss.gap,
            bellman: loss.bellman,
        };
        let (loss, grad) = match loss_gradient(&q, &batch, &y, alpha) {
            Ok(v) => v,
            Err(_) => return Err(diverged(loss_with_targets(&q, &batch, &y, alpha))),
        };
        if !loss.total.is_finite() {
            return Err(diverged(loss));
        }
        match adam.as_mut() {
            Some(opt) => opt.step(q.params_mut(), &grad)?,
            None => {
                let scale = match cfg.clip_norm {
                    Some(c) => {
                        let n = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                        if n > c {
                            c / n
                        } else {
                            1.0
                        }
                    }
                    None => 1.0,
                };
                for (p, g) in q.params_mut().iter_mut().zip(&grad) {
                    *p -= cfg.learning_rate * scale * g;
                }
            }
        }
        if !q.is_finite() {
            return Err(diverged(loss));
        }
        if cfg.algorithm.uses_target_network() && (step + 1) % cfg.target_sync_interval == 0 {
            q_target = q.clone();
            syncs += 1;
        }
        log.push(LogEntry {
            step,
            loss,
            target_syncs: syncs,
        });
    }
    let policy = greedy_policy(&q);
    Ok(TrainedAgent { q, policy, log })
}
