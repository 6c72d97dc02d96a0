use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use offrl_cli::layout::{write_table, Layout};
use offrl_cli::{
    cmd_all, cmd_check, cmd_evaluate, cmd_generate, cmd_train, CliError, ExperimentConfig, Fault,
};

#[derive(Parser)]
#[command(
    name = "offrl",
    version,
    about = "Offline RL experiments on synthetic treatment logs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out behavior data and write per-seed splits with manifests.
    Generate(RunArgs),
    /// Train the agent grid and select checkpoints by validation WIS.
    Train(RunArgs),
    /// Evaluate selected checkpoints on the test splits; write report tables and charts.
    Evaluate(RunArgs),
    /// Run the property suite.
    Check {
        #[command(flatten)]
        run: RunArgs,
        /// Corrupt one property's inputs: gradient, preservation, bound, csr or wis.
        #[arg(long)]
        inject_fault: Option<Fault>,
    },
    /// generate, train and evaluate in sequence.
    All(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Concurrent training cells, overriding the config.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seeds) = &self.seeds {
            cfg.seeds = seeds.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = args.load()?;
            for m in cmd_generate(&cfg)? {
                println!(
                    "seed {}: {} episodes, {} records, imbalance {:.1}",
                    m.seed, m.total.episodes, m.total.records, m.total.imbalance_ratio
                );
            }
        }
        Command::Train(args) => {
            let cfg = args.load()?;
            let summary = cmd_train(&cfg)?;
            print!("{}", summary.table().to_text());
        }
        Command::Evaluate(args) => {
            let cfg = args.load()?;
            let eval = cmd_evaluate(&cfg)?;
            print!("{}", eval.summary.to_text());
            println!(
                "report written to {}",
                Layout::new(&cfg.output_dir).report_dir().display()
            );
        }
        Command::All(args) => {
            let cfg = args.load()?;
            let run = cmd_all(&cfg)?;
            print!("{}", run.evaluation.summary.to_text());
            println!(
                "report written to {}",
                Layout::new(&cfg.output_dir).report_dir().display()
            );
        }
        Command::Check { run, inject_fault } => {
            let cfg = run.load()?;
            let report = cmd_check(&cfg.check, inject_fault)?;
            let table = report.table();
            print!("{}", table.to_text());
            write_table(
                &Layout::new(&cfg.output_dir).report_dir().join("check.csv"),
                &table,
            )?;
            if !report.passed() {
                return Err(CliError::PropertyFailure(report.failed()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
