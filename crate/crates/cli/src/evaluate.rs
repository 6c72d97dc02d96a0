//! Held-out evaluation of selected checkpoints and the cross-seed report.

use std::fs;

use offrl::approx::QFunction;
use offrl::constraints::constrain;
use offrl::dataset::TransitionDataset;
use offrl::envgen::Environment;
use offrl::learners::greedy_policy;
use offrl::mdp::Policy;
use offrl::ope::{
    appropriate_intensification, constraint_satisfaction_rate, logged_concordance, soften, wis,
    EvaluationReport, MetricRow, Recommender,
};
use offrl::oracle::{constrained_value_iteration, policy_value, value_iteration};
use offrl::text::{format_sig, Table};

use crate::charts;
use crate::config::ExperimentConfig;
use crate::layout::{read_dataset, read_json, write_file, write_table, Layout};
use crate::train::{load_selection, CellOutcome, SeedSelection};
use crate::CliError;

pub const SOC: &str = "soc";
pub const OPTIMAL: &str = "optimal";

pub fn constrained_label(agent: &str) -> String {
    format!("{agent} [constrained]")
}

/// Exact and held-out quantities for one trained cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellValue {
    pub outcome: CellOutcome,
    pub test_concordance: f64,
    pub oracle_value: f64,
    pub oracle_value_constrained: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedEvaluation {
    pub seed: u64,
    pub report: EvaluationReport,
    pub cells: Vec<CellValue>,
    pub selection: SeedSelection,
}

impl SeedEvaluation {
    pub fn cell(&self, agent: &str, param: &str) -> Option<&CellValue> {
        self.cells
            .iter()
            .find(|c| c.outcome.agent == agent && c.outcome.param == param)
    }

    pub fn winner(&self, agent: &str) -> Option<&CellValue> {
        self.cells
            .iter()
            .find(|c| c.outcome.agent == agent && c.outcome.selected)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationSummary {
    pub seeds: Vec<SeedEvaluation>,
    pub summary: Table,
}

struct Context<'a> {
    env: &'a Environment,
    test: &'a TransitionDataset,
    behavior: &'a Policy,
    epsilon: f64,
}

fn push_wis(rep: &mut EvaluationReport, label: &str, ctx: &Context, pi_eval: &Policy) {
    let gamma = ctx.env.mdp.gamma();
    match wis(ctx.test, pi_eval, ctx.behavior, gamma) {
        Ok(r) => {
            rep.push_value(label, "wis", r.estimate, "");
            rep.push_value(label, "wis_ess", r.effective_sample_size, "");
            rep.push_value(label, "wis_clamped_steps", r.clamped as f64, "");
        }
        Err(e) => rep.rows.push(MetricRow {
            agent: label.into(),
            metric: "wis".into(),
            value: None,
            denominator: None,
            notes: e.to_string(),
        }),
    }
}

fn push_record_rates(rep: &mut EvaluationReport, label: &str, ctx: &Context, rec: Recommender) {
    let env = ctx.env;
    rep.push_rate(
        label,
        "model_concordance",
        logged_concordance(ctx.test, rec),
    );
    rep.push_rate(
        label,
        "appropriate_intensification",
        appropriate_intensification(ctx.test, rec, &env.out_of_control, &env.non_intensifying),
    );
    for rule in &env.rules.rules {
        rep.push_rate(
            label,
            &format!("csr:{}", rule.name),
            constraint_satisfaction_rate(ctx.test, rec, rule),
        );
    }
}

fn push_policy_rows(
    rep: &mut EvaluationReport,
    label: &str,
    ctx: &Context,
    policy: &Policy,
) -> Result<(), CliError> {
    push_record_rates(rep, label, ctx, Recommender::Policy(policy));
    push_wis(rep, label, ctx, &soften(policy, ctx.epsilon)?);
    rep.push_value(
        label,
        "oracle_value",
        policy_value(&ctx.env.mdp, policy),
        "",
    );
    Ok(())
}

fn load_q(
    layout: &Layout,
    seed: u64,
    cell: &CellOutcome,
    missing: &mut Vec<String>,
) -> Option<QFunction> {
    let path = layout.checkpoint(seed, &cell.id);
    match fs::read_to_string(&path) {
        Ok(text) => match QFunction::from_checkpoint(&text) {
            Ok(q) => Some(q),
            Err(e) => {
                missing.push(format!("{} (unreadable: {e})", path.display()));
                None
            }
        },
        Err(_) => {
            missing.push(path.display().to_string());
            None
        }
    }
}

fn evaluate_seed(
    cfg: &ExperimentConfig,
    env: &Environment,
    layout: &Layout,
    seed: u64,
    optimum: (f64, f64),
) -> Result<SeedEvaluation, CliError> {
    let (ns, na) = (env.mdp.n_states(), env.mdp.n_actions());
    let selection = load_selection(layout, seed)?;
    let test_path = layout.dataset(seed, "test");
    if !test_path.exists() {
        return Err(CliError::MissingArtifacts(vec![test_path
            .display()
            .to_string()]));
    }
    let test = read_dataset(&test_path, ns, na)?;
    let behavior: Policy = read_json(&layout.behavior_policy(seed))?;
    let ctx = Context {
        env,
        test: &test,
        behavior: &behavior,
        epsilon: cfg.eval.epsilon,
    };

    let mut missing = Vec::new();
    let mut cells = Vec::new();
    let mut winners = Vec::new();
    for cell in selection.cells.iter().filter(|c| c.error.is_none()) {
        let Some(q) = load_q(layout, seed, cell, &mut missing) else {
            continue;
        };
        let policy = greedy_policy(&q);
        let constrained = constrain(&q, &env.rules).to_policy();
        cells.push(CellValue {
            outcome: cell.clone(),
            test_concordance: logged_concordance(&test, &policy)?.value,
            oracle_value: policy_value(&env.mdp, &policy),
            oracle_value_constrained: policy_value(&env.mdp, &constrained),
        });
        if cell.selected {
            winners.push((cell.agent.clone(), policy, constrained));
        }
    }
    if !missing.is_empty() {
        return Err(CliError::MissingArtifacts(missing));
    }

    let mut rep = EvaluationReport::default();
    push_record_rates(&mut rep, SOC, &ctx, Recommender::Logged);
    push_wis(&mut rep, SOC, &ctx, &behavior);
    rep.push_value(
        SOC,
        "oracle_value",
        policy_value(&env.mdp, &env.behavior),
        "generator behavior policy",
    );
    rep.push_value(OPTIMAL, "oracle_value", optimum.0, "");
    rep.push_value(&constrained_label(OPTIMAL), "oracle_value", optimum.1, "");
    for (agent, policy, constrained) in &winners {
        push_policy_rows(&mut rep, agent, &ctx, policy)?;
        push_policy_rows(&mut rep, &constrained_label(agent), &ctx, constrained)?;
    }

    let mut hist: Vec<(String, &Policy)> = Vec::new();
    for (agent, policy, _) in &winners {
        hist.push((agent.clone(), policy));
    }
    let chart_dir = layout.chart_dir();
    write_file(
        &chart_dir.join(format!("actions_seed{seed}.svg")),
        charts::action_histogram(
            &format!("Recommended actions on test records, seed {seed}"),
            env,
            &test,
            &hist,
        ),
    )?;
    if env.action_grid.is_some() {
        write_file(
            &chart_dir.join(format!("dose_grid_seed{seed}.svg")),
            charts::dose_heatmaps(
                &format!("Dose recommendations on test records, seed {seed}"),
                env,
                &test,
                &hist,
            ),
        )?;
    }

    Ok(SeedEvaluation {
        seed,
        report: rep,
        cells,
        selection,
    })
}

fn per_seed_table(seeds: &[SeedEvaluation]) -> Table {
    let mut t = Table::new(["seed", "agent", "metric", "value", "denominator", "notes"]);
    for s in seeds {
        for r in s.report.table().rows {
            t.push(std::iter::once(s.seed.to_string()).chain(r));
        }
    }
    t
}

/// Mean and sample standard deviation across seeds, per (agent, metric) in
/// first-seen order.
pub fn summary_table(seeds: &[SeedEvaluation]) -> Table {
    let mut keys: Vec<(String, String)> = Vec::new();
    for s in seeds {
        for r in &s.report.rows {
            let key = (r.agent.clone(), r.metric.clone());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
    }
    let mut t = Table::new(["agent", "metric", "mean", "std", "n_seeds"]);
    for (agent, metric) in keys {
        let xs: Vec<f64> = seeds
            .iter()
            .filter_map(|s| s.report.get(&agent, &metric))
            .collect();
        let n = xs.len();
        let (mean, std) = mean_std(&xs);
        let fmt = |x: Option<f64>| x.map_or_else(|| "NA".into(), |v| format_sig(v, 6));
        t.push([agent, metric, fmt(mean), fmt(std), n.to_string()]);
    }
    t
}

fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (None, None);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (Some(mean), None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

fn cells_table(seeds: &[SeedEvaluation]) -> Table {
    let mut t = Table::new([
        "seed",
        "agent",
        "param",
        "selected",
        "validation_wis",
        "test_concordance",
        "oracle_value",
        "oracle_value_constrained",
    ]);
    for s in seeds {
        for c in &s.cells {
            t.push([
                s.seed.to_string(),
                c.outcome.agent.clone(),
                c.outcome.param.clone(),
                c.outcome.selected.to_string(),
                c.outcome
                    .validation_wis
                    .map_or_else(|| "NA".into(), |v| format_sig(v, 9)),
                format_sig(c.test_concordance, 9),
                format_sig(c.oracle_value, 9),
                format_sig(c.oracle_value_constrained, 9),
            ]);
        }
    }
    t
}

fn behavior_fit_table(layout: &Layout, seeds: &[u64]) -> Result<Option<String>, CliError> {
    let mut out = String::new();
    for &seed in seeds {
        let path = layout.behavior_selection(seed);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if out.is_empty() {
            out.push_str(&format!("seed,{header}\n"));
        }
        for l in lines {
            out.push_str(&format!("{seed},{l}\n"));
        }
    }
    Ok(Some(out))
}

/// Evaluate every seed's selected agents on its test split and write the
/// report tables and charts.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<EvaluationSummary, CliError> {
    cfg.validate()?;
    let env = cfg.env.build()?;
    let layout = Layout::new(&cfg.output_dir);
    let optimum = (
        value_iteration(&env.mdp).expected_initial_value(&env.mdp),
        constrained_value_iteration(&env.mdp).expected_initial_value(&env.mdp),
    );
    let mut seeds = Vec::new();
    let mut missing = Vec::new();
    for &seed in &cfg.seeds {
        match evaluate_seed(cfg, &env, &layout, seed, optimum) {
            Ok(s) => seeds.push(s),
            Err(CliError::MissingArtifacts(m)) => missing.extend(m),
            Err(e) => return Err(e),
        }
    }
    if !missing.is_empty() {
        return Err(CliError::MissingArtifacts(missing));
    }

    let report = layout.report_dir();
    let summary = summary_table(&seeds);
    write_table(&report.join("metrics.csv"), &per_seed_table(&seeds))?;
    write_table(&report.join("summary.csv"), &summary)?;
    write_table(&report.join("cells.csv"), &cells_table(&seeds))?;
    let selections: Vec<SeedSelection> = seeds.iter().map(|s| s.selection.clone()).collect();
    write_table(
        &report.join("selection.csv"),
        &crate::train::selection_table(&selections),
    )?;
    if let Some(text) = behavior_fit_table(&layout, &cfg.seeds)? {
        write_file(&report.join("behavior_model.csv"), text)?;
    }
    Ok(EvaluationSummary { seeds, summary })
}
