//! Grid training with per-agent selection by validation WIS.

use std::collections::BTreeMap;

use offrl::approx::Architecture;
use offrl::dataset::TransitionDataset;
use offrl::envgen::Environment;
use offrl::learners::{train, Algorithm, TrainConfig};
use offrl::mdp::Policy;
use offrl::ope::{fit_behavior_model, one_hot_features, soften, wis};
use offrl::rng::derive_seed;
use offrl::sampling::{resample, SamplingMode, SamplingPlan};
use offrl::text::{format_sig, Table};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BehaviorSource, ExperimentConfig};
use crate::layout::{read_dataset, read_json, write_file, write_json, write_table, Layout};
use crate::{streams, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Ddqn,
    Cql,
    Sampled(SamplingMode),
}

impl Family {
    pub fn name(self) -> String {
        match self {
            Family::Ddqn => "ddqn".into(),
            Family::Cql => "cql".into(),
            Family::Sampled(m) => format!("cql+{}", m.name()),
        }
    }
}

/// One grid cell: a learner, its hyperparameter and an architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub seed: u64,
    pub family: Family,
    pub architecture: Architecture,
    pub alpha: f64,
    /// Resampling plan for sampled families.
    pub k: Option<f64>,
    pub strata_keys: Vec<usize>,
}

impl CellSpec {
    /// Selection group: family and architecture.
    pub fn agent(&self) -> String {
        format!("{}/{}", self.family.name(), self.architecture.label())
    }

    /// The hyperparameter tuned within an agent.
    pub fn param(&self) -> String {
        match (self.family, self.k) {
            (Family::Ddqn, _) => "-".into(),
            (Family::Cql, _) => format!("alpha={}", format_sig(self.alpha, 6)),
            (Family::Sampled(_), Some(k)) => format!("k={}", format_sig(k, 6)),
            (Family::Sampled(_), None) => unreachable!("sampled cells carry k"),
        }
    }

    /// Directory-safe identifier, unique within a seed.
    pub fn id(&self) -> String {
        let fam = self.family.name().replace('+', "_");
        let param = self.param().replace('=', "");
        format!("{fam}__{}__{param}", self.architecture.label()).replace("__-", "")
    }

    pub fn train_config(&self, cfg: &ExperimentConfig, gamma: f64) -> TrainConfig {
        let t = &cfg.train;
        let algorithm = if self.family == Family::Ddqn {
            Algorithm::Ddqn
        } else {
            Algorithm::Cql
        };
        TrainConfig {
            algorithm,
            alpha: self.alpha,
            gamma,
            batch_size: t.batch_size,
            n_gradient_steps: t.steps,
            target_sync_interval: t.target_sync_interval,
            learning_rate: t.learning_rate,
            seed: derive_seed(self.seed, streams::TRAIN),
            architecture: self.architecture.clone(),
            optimizer: t.optimizer,
            clip_norm: (t.clip_norm > 0.0).then_some(t.clip_norm),
        }
    }

    pub fn sampling_plan(&self) -> Option<SamplingPlan> {
        match (self.family, self.k) {
            (Family::Sampled(mode), Some(k)) => Some(
                SamplingPlan::new(mode, k, derive_seed(self.seed, streams::SAMPLING))
                    .with_strata(self.strata_keys.clone()),
            ),
            _ => None,
        }
    }
}

/// Every cell of the grid for one seed, in report order.
pub fn grid_cells(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<CellSpec>, CliError> {
    let mut cells = Vec::new();
    for architecture in cfg.train.parsed_architectures()? {
        let cell = |family, alpha, k, strata_keys| CellSpec {
            seed,
            family,
            architecture: architecture.clone(),
            alpha,
            k,
            strata_keys,
        };
        if cfg.grid.ddqn {
            cells.push(cell(Family::Ddqn, 0.0, None, vec![]));
        }
        for &alpha in &cfg.grid.alphas {
            cells.push(cell(Family::Cql, alpha, None, vec![]));
        }
        for fam in &cfg.grid.sampling {
            for &k in &fam.ks {
                cells.push(cell(
                    Family::Sampled(fam.mode),
                    cfg.grid.sampling_alpha,
                    Some(k),
                    fam.strata_keys.clone(),
                ));
            }
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub id: String,
    pub agent: String,
    pub param: String,
    pub family: Family,
    pub architecture: String,
    pub alpha: f64,
    pub k: Option<f64>,
    pub validation_wis: Option<f64>,
    pub validation_ess: Option<f64>,
    pub min_w: Option<f64>,
    pub max_w: Option<f64>,
    /// Training or evaluation failure; failed cells are never selected.
    pub error: Option<String>,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSelection {
    pub seed: u64,
    pub behavior: BehaviorSource,
    pub cells: Vec<CellOutcome>,
}

impl SeedSelection {
    pub fn winners(&self) -> impl Iterator<Item = &CellOutcome> {
        self.cells.iter().filter(|c| c.selected)
    }

    /// Agents in grid order.
    pub fn agents(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for c in &self.cells {
            if !seen.contains(&c.agent) {
                seen.push(c.agent.clone());
            }
        }
        seen
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub seeds: Vec<SeedSelection>,
}

impl TrainSummary {
    pub fn table(&self) -> Table {
        selection_table(&self.seeds)
    }
}

pub fn selection_table(seeds: &[SeedSelection]) -> Table {
    let mut t = Table::new([
        "seed",
        "agent",
        "param",
        "validation_wis",
        "validation_ess",
        "min_w",
        "max_w",
        "selected",
        "error",
    ]);
    let num = |x: Option<f64>| x.map_or_else(|| "NA".into(), |v| format_sig(v, 9));
    for s in seeds {
        for c in &s.cells {
            t.push([
                s.seed.to_string(),
                c.agent.clone(),
                c.param.clone(),
                num(c.validation_wis),
                num(c.validation_ess),
                num(c.min_w),
                num(c.max_w),
                c.selected.to_string(),
                c.error.clone().unwrap_or_default(),
            ]);
        }
    }
    t
}

/// Behavior policy used for importance ratios: fitted on the training split,
/// or the generator's own.
pub fn behavior_policy(
    cfg: &ExperimentConfig,
    env: &Environment,
    train_ds: &TransitionDataset,
    seed: u64,
) -> Result<(Policy, Option<Table>), CliError> {
    match cfg.eval.behavior {
        BehaviorSource::True => Ok((env.behavior.clone(), None)),
        BehaviorSource::Fitted => {
            let features = one_hot_features(env.mdp.n_states());
            let opts = cfg
                .eval
                .fit_options(derive_seed(seed, streams::BEHAVIOR_FIT));
            let (model, report) = fit_behavior_model(train_ds, &features, &opts)?;
            Ok((model.to_policy(&features)?, Some(report.table())))
        }
    }
}

struct SeedInputs {
    seed: u64,
    train: TransitionDataset,
    validation: TransitionDataset,
    behavior: Policy,
}

fn run_cell(
    cfg: &ExperimentConfig,
    layout: &Layout,
    gamma: f64,
    inputs: &SeedInputs,
    cell: &CellSpec,
) -> CellOutcome {
    let mut out = CellOutcome {
        id: cell.id(),
        agent: cell.agent(),
        param: cell.param(),
        family: cell.family,
        architecture: cell.architecture.label(),
        alpha: cell.alpha,
        k: cell.k,
        validation_wis: None,
        validation_ess: None,
        min_w: None,
        max_w: None,
        error: None,
        selected: false,
    };
    if let Err(e) = train_cell(cfg, layout, gamma, inputs, cell, &mut out) {
        let msg = e.to_string();
        let _ = write_file(
            &layout.cell_dir(cell.seed, &out.id).join("error.txt"),
            format!("{msg}\n"),
        );
        out.error = Some(msg);
    }
    out
}

fn train_cell(
    cfg: &ExperimentConfig,
    layout: &Layout,
    gamma: f64,
    inputs: &SeedInputs,
    cell: &CellSpec,
    out: &mut CellOutcome,
) -> Result<(), CliError> {
    let dir = layout.cell_dir(cell.seed, &out.id);
    let resampled;
    let data = match cell.sampling_plan() {
        Some(plan) => {
            let (ds, report) = resample(&inputs.train, &plan)?;
            write_table(&dir.join("sampling.csv"), &report.table())?;
            out.min_w = Some(report.min_w);
            out.max_w = Some(report.max_w);
            resampled = ds;
            &resampled
        }
        None => &inputs.train,
    };
    let agent = train(data, &cell.train_config(cfg, gamma))?;
    write_file(
        &layout.checkpoint(cell.seed, &out.id),
        agent.q.to_checkpoint()?,
    )?;
    write_table(&dir.join("train_log.csv"), &agent.log_table())?;
    let softened = soften(&agent.policy, cfg.eval.epsilon)?;
    let report = wis(&inputs.validation, &softened, &inputs.behavior, gamma)?;
    out.validation_wis = Some(report.estimate);
    out.validation_ess = Some(report.effective_sample_size);
    Ok(())
}

/// Mark the highest validation WIS per agent; ties keep the earlier cell.
fn select(cells: &mut [CellOutcome]) {
    let mut best: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for (i, c) in cells.iter().enumerate() {
        let Some(v) = c.validation_wis.filter(|_| c.error.is_none()) else {
            continue;
        };
        match best.get(&c.agent) {
            Some(&(_, b)) if b >= v => {}
            _ => {
                best.insert(c.agent.clone(), (i, v));
            }
        }
    }
    for (i, _) in best.values() {
        cells[*i].selected = true;
    }
}

pub fn load_selection(layout: &Layout, seed: u64) -> Result<SeedSelection, CliError> {
    let path = layout.selection(seed);
    if !path.exists() {
        return Err(CliError::MissingArtifacts(vec![path.display().to_string()]));
    }
    read_json(&path)
}

/// Train every grid cell on `workers` threads, then select per agent.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainSummary, CliError> {
    cfg.validate()?;
    let env = cfg.env.build()?;
    let layout = Layout::new(&cfg.output_dir);
    let (ns, na) = (env.mdp.n_states(), env.mdp.n_actions());
    let gamma = env.mdp.gamma();

    let missing: Vec<String> = cfg
        .seeds
        .iter()
        .flat_map(|&s| [layout.dataset(s, "train"), layout.dataset(s, "validation")])
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::MissingArtifacts(missing));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;

    let mut inputs = Vec::new();
    for &seed in &cfg.seeds {
        let train_ds = read_dataset(&layout.dataset(seed, "train"), ns, na)?;
        let validation = read_dataset(&layout.dataset(seed, "validation"), ns, na)?;
        let (behavior, fit_table) = behavior_policy(cfg, &env, &train_ds, seed)?;
        write_json(&layout.behavior_policy(seed), &behavior)?;
        if let Some(t) = fit_table {
            write_table(&layout.behavior_selection(seed), &t)?;
        }
        inputs.push(SeedInputs {
            seed,
            train: train_ds,
            validation,
            behavior,
        });
    }

    let mut jobs = Vec::new();
    for (i, inp) in inputs.iter().enumerate() {
        jobs.extend(grid_cells(cfg, inp.seed)?.into_iter().map(|c| (i, c)));
    }
    let outcomes: Vec<(usize, CellOutcome)> = pool.install(|| {
        jobs.par_iter()
            .map(|(i, cell)| (*i, run_cell(cfg, &layout, gamma, &inputs[*i], cell)))
            .collect()
    });

    let mut seeds = Vec::new();
    for (i, inp) in inputs.iter().enumerate() {
        let mut cells: Vec<CellOutcome> = outcomes
            .iter()
            .filter(|(j, _)| *j == i)
            .map(|(_, c)| c.clone())
            .collect();
        select(&mut cells);
        let sel = SeedSelection {
            seed: inp.seed,
            behavior: cfg.eval.behavior,
            cells,
        };
        write_json(&layout.selection(inp.seed), &sel)?;
        seeds.push(sel);
    }
    let summary = TrainSummary { seeds };
    write_table(&layout.report_dir().join("selection.csv"), &summary.table())?;
    Ok(summary)
}
