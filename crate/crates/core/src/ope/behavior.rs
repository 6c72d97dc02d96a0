//! Multinomial logistic regression for estimating the logging policy.

use crate::approx::Adam;
use crate::dataset::TransitionDataset;
use crate::error::{Error, Result};
use crate::mdp::Policy;
use crate::rng::derive_seed;
use crate::text::{format_sig, Table};

/// Regularization strengths tried by default (inverse penalty weights).
pub const DEFAULT_C_GRID: [f64; 5] = [0.1, 1.0, 10.0, 100.0, 1000.0];

#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorModel {
    n_actions: usize,
    dim: usize,
    /// `weights[a * dim + j]`
    weights: Vec<f64>,
    bias: Vec<f64>,
    pub c: f64,
    pub class_weighting: bool,
    /// Fitted on data with a single observed action.
    pub degenerate: bool,
}

impl BehaviorModel {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = (0..self.n_actions)
            .map(|a| {
                self.bias[a]
                    + self.weights[a * self.dim..(a + 1) * self.dim]
                        .iter()
                        .zip(x)
                        .map(|(w, x)| w * x)
                        .sum::<f64>()
            })
            .collect();
        softmax_in_place(&mut z);
        z
    }

    /// Tabulate predictions for every state.
    pub fn to_policy(&self, features: &[Vec<f64>]) -> Result<Policy> {
        Policy::stochastic(features.iter().map(|x| self.predict(x)).collect())
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateScore {
    pub c: f64,
    pub class_weighting: bool,
    pub brier: f64,
    /// Macro one-vs-rest AUC over classes with both labels present.
    pub auc: Option<f64>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub candidates: Vec<CandidateScore>,
    pub winner: usize,
    pub n_fit: usize,
    pub n_holdout: usize,
}

impl SelectionReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new([
            "c",
            "class_weighting",
            "brier",
            "auc",
            "accuracy",
            "selected",
        ]);
        for (i, c) in self.candidates.iter().enumerate() {
            t.push([
                format_sig(c.c, 6),
                c.class_weighting.to_string(),
                format_sig(c.brier, 9),
                c.auc.map_or_else(|| "NA".into(), |v| format_sig(v, 9)),
                format_sig(c.accuracy, 9),
                (i == self.winner).to_string(),
            ]);
        }
        t
    }
}

#[derive(Debug, Clone)]
pub struct BehaviorFitOptions {
    pub c_grid: Vec<f64>,
    pub class_weighting: Vec<bool>,
    /// Fraction of episodes (or records, for bags) held out for selection.
    pub holdout_fraction: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for BehaviorFitOptions {
    fn default() -> Self {
        Self {
            c_grid: DEFAULT_C_GRID.to_vec(),
            class_weighting: vec![false, true],
            holdout_fraction: 0.2,
            iterations: 400,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

/// Labelled examples aggregated by distinct state: `counts[g][a]`.
struct Grouped {
    states: Vec<usize>,
    counts: Vec<Vec<f64>>,
}

fn group(records: impl Iterator<Item = (usize, usize)>, n_actions: usize) -> Grouped {
    let mut index = std::collections::BTreeMap::new();
    let mut g = Grouped {
        states: Vec::new(),
        counts: Vec::new(),
    };
    for (s, a) in records {
        let i = *index.entry(s).or_insert_with(|| {
            g.states.push(s);
            g.counts.push(vec![0.0; n_actions]);
            g.states.len() - 1
        });
        g.counts[i][a] += 1.0;
    }
    g
}

fn fit_one(
    data: &Grouped,
    features: &[Vec<f64>],
    n_actions: usize,
    c: f64,
    class_weighting: bool,
    opts: &BehaviorFitOptions,
) -> Result<BehaviorModel> {
    let dim = features.first().map_or(0, Vec::len);
    let mut class_n = vec![0.0; n_actions];
    for row in &data.counts {
        for (a, &n) in row.iter().enumerate() {
            class_n[a] += n;
        }
    }
    let n: f64 = class_n.iter().sum();
    let present = class_n.iter().filter(|&&x| x > 0.0).count();
    let class_w: Vec<f64> = class_n
        .iter()
        .map(|&k| {
            if class_weighting && k > 0.0 {
                n / (present as f64 * k)
            } else {
                1.0
            }
        })
        .collect();

    // params: weights (A x dim) then bias (A)
    let mut params = vec![0.0; n_actions * dim + n_actions];
    let mut adam = Adam::new(params.len(), opts.learning_rate)?;
    let mut grad = vec![0.0; params.len()];
    let mut z = vec![0.0; n_actions];
    // one-hot and other sparse encodings: visit nonzero entries only
    let sparse: Vec<Vec<(usize, f64)>> = data
        .states
        .iter()
        .map(|&s| {
            features[s]
                .iter()
                .copied()
                .enumerate()
                .filter(|&(_, x)| x != 0.0)
                .collect()
        })
        .collect();
    for _ in 0..opts.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (g_i, x) in sparse.iter().enumerate() {
            for a in 0..n_actions {
                z[a] = params[n_actions * dim + a]
                    + x.iter().map(|&(j, v)| params[a * dim + j] * v).sum::<f64>();
            }
            softmax_in_place(&mut z);
            let counts = &data.counts[g_i];
            let total_w: f64 = counts.iter().zip(&class_w).map(|(c, w)| c * w).sum();
            for a in 0..n_actions {
                // d/dz_a of -sum_k w_k n_k log p_k
                let d = (total_w * z[a] - counts[a] * class_w[a]) / n;
                if d == 0.0 {
                    continue;
                }
                grad[n_actions * dim + a] += d;
                for &(j, v) in x {
                    grad[a * dim + j] += d * v;
                }
            }
        }
        // L2 penalty on weights: ||W||^2 / (2 C n)
        for (g, w) in grad[..n_actions * dim]
            .iter_mut()
            .zip(&params[..n_actions * dim])
        {
            *g += w / (c * n);
        }
        adam.step(&mut params, &grad)?;
    }
    let bias = params.split_off(n_actions * dim);
    Ok(BehaviorModel {
        n_actions,
        dim,
        weights: params,
        bias,
        c,
        class_weighting,
        degenerate: present <= 1,
    })
}

/// Multiclass Brier score: mean over examples of `sum_a (p_a - 1{a = y})^2`.
fn brier(model: &BehaviorModel, data: &Grouped, features: &[Vec<f64>]) -> (f64, f64) {
    let (mut total, mut n, mut correct) = (0.0, 0.0, 0.0);
    for (g, &s) in data.states.iter().enumerate() {
        let p = model.predict(&features[s]);
        let sq: f64 = p.iter().map(|x| x * x).sum();
        let pred = crate::mdp::argmax(&p);
        for (a, &k) in data.counts[g].iter().enumerate() {
            if k > 0.0 {
                total += k * (sq - 2.0 * p[a] + 1.0);
                n += k;
                if a == pred {
                    correct += k;
                }
            }
        }
    }
    (total / n, correct / n)
}

/// Mann-Whitney AUC over weighted `(score, positive weight, negative weight)`
/// rows, ties counted half. `None` when either class is absent.
pub fn auc(rows: &[(f64, f64, f64)]) -> Option<f64> {
    let pos_total: f64 = rows.iter().map(|r| r.1).sum();
    let neg_total: f64 = rows.iter().map(|r| r.2).sum();
    if pos_total == 0.0 || neg_total == 0.0 {
        return None;
    }
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (mut neg_below, mut acc) = (0.0, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        let (mut p_tie, mut n_tie) = (0.0, 0.0);
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            p_tie += sorted[j].1;
            n_tie += sorted[j].2;
            j += 1;
        }
        acc += p_tie * (neg_below + 0.5 * n_tie);
        neg_below += n_tie;
        i = j;
    }
    Some(acc / (pos_total * neg_total))
}

fn macro_auc(model: &BehaviorModel, data: &Grouped, features: &[Vec<f64>]) -> Option<f64> {
    let preds: Vec<Vec<f64>> = data
        .states
        .iter()
        .map(|&s| model.predict(&features[s]))
        .collect();
    let mut aucs = Vec::new();
    for a in 0..model.n_actions {
        let rows: Vec<(f64, f64, f64)> = preds
            .iter()
            .enumerate()
            .map(|(g, p)| {
                let k_pos = data.counts[g][a];
                (p[a], k_pos, data.counts[g].iter().sum::<f64>() - k_pos)
            })
            .collect();
        if let Some(v) = auc(&rows) {
            aucs.push(v);
        }
    }
    (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64)
}

/// Fit every (C, class weighting) candidate on a training split, pick the
/// lowest held-out Brier score, and refit the winner on all records.
pub fn fit_behavior_model(
    ds: &TransitionDataset,
    features: &[Vec<f64>],
    opts: &BehaviorFitOptions,
) -> Result<(BehaviorModel, SelectionReport)> {
    if ds.is_empty() {
        return Err(Error::InvalidDataset("empty dataset".into()));
    }
    if features.len() != ds.n_states() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} feature rows", ds.n_states()),
            found: features.len().to_string(),
        });
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::InvalidDataset(
            "feature vectors differ in length".into(),
        ));
    }
    if opts.c_grid.is_empty()
        || opts.class_weighting.is_empty()
        || opts.c_grid.iter().any(|&c| !(c > 0.0))
    {
        return Err(Error::Config(
            "behavior grid must be nonempty with C > 0".into(),
        ));
    }
    let cut = (opts.holdout_fraction * u64::MAX as f64) as u64;
    let held = |unit: u64| derive_seed(opts.seed, unit) < cut;
    let recs = ds.records();
    let unit = |i: usize| {
        if ds.is_episodic() {
            recs[i].episode_id
        } else {
            i as u64
        }
    };
    let mut train: Vec<usize> = (0..recs.len()).filter(|&i| !held(unit(i))).collect();
    let mut holdout: Vec<usize> = (0..recs.len()).filter(|&i| held(unit(i))).collect();
    if train.is_empty() || holdout.is_empty() {
        // Too little data to split; score in-sample.
        train = (0..recs.len()).collect();
        holdout = train.clone();
    }
    let na = ds.n_actions();
    let fit_data = group(train.iter().map(|&i| (recs[i].state, recs[i].action)), na);
    let hold_data = group(holdout.iter().map(|&i| (recs[i].state, recs[i].action)), na);

    let mut candidates = Vec::new();
    for &cw in &opts.class_weighting {
        for &c in &opts.c_grid {
            let m = fit_one(&fit_data, features, na, c, cw, opts)?;
            let (b, acc) = brier(&m, &hold_data, features);
            candidates.push(CandidateScore {
                c,
                class_weighting: cw,
                brier: b,
                auc: macro_auc(&m, &hold_data, features),
                accuracy: acc,
            });
        }
    }
    let winner = candidates
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.brier.total_cmp(&b.1.brier))
        .map(|(i, _)| i)
        .expect("nonempty grid");
    let all = group(recs.iter().map(|r| (r.state, r.action)), na);
    let best = &candidates[winner];
    let model = fit_one(&all, features, na, best.c, best.class_weighting, opts)?;
    let report = SelectionReport {
        candidates,
        winner,
        n_fit: train.len(),
        n_holdout: holdout.len(),
    };
    Ok((model, report))
}

/// One-hot state features.
pub fn one_hot_features(n_states: usize) -> Vec<Vec<f64>> {
    (0..n_states)
        .map(|s| {
            let mut v = vec![0.0; n_states];
            v[s] = 1.0;
            v
        })
        .collect()
}
