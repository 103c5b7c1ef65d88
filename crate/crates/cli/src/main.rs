use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use fairnmf_cli::config::{ExperimentConfig, Overrides};
use fairnmf_cli::run_experiment;

/// Fairness-aware NMF experiment harness.
///
/// Sweeps the requested methods over a rank range with repeated trials,
/// estimating per-group baselines once per rank, and writes `results.csv`
/// plus `summary.json` into the output directory.
#[derive(Debug, Parser)]
#[command(
    name = "fairnmf",
    version,
    after_help = "Exit codes: 0 success, 1 partial failure (some cells failed, \
                  results written), 2 configuration error.\n\n\
                  Flags override the config file; see the config module docs \
                  for the TOML schema."
)]
struct Cli {
    /// TOML config file; flags below override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Fit a CSV dataset instead of the built-in synthetic benchmark.
    #[arg(long, value_name = "FILE")]
    dataset: Option<PathBuf>,

    /// Column of the CSV holding the group label of each row.
    #[arg(long, value_name = "NAME", requires = "dataset")]
    group_column: Option<String>,

    /// CSV columns to exclude from the feature matrix.
    #[arg(
        long,
        value_name = "NAMES",
        value_delimiter = ',',
        requires = "dataset"
    )]
    drop_columns: Option<Vec<String>>,

    /// Methods to run: fairer-am, fairer-mu, standard-mu, standard-per-group.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    methods: Option<Vec<String>>,

    /// Ranks to sweep, as comma-separated values and inclusive ranges, e.g. "2-4,11".
    #[arg(long, value_name = "RANKS")]
    ranks: Option<String>,

    /// Trials per (method, rank) cell.
    #[arg(long, value_name = "N")]
    trials: Option<usize>,

    /// Master seed; every trial seed derives from it.
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,

    /// Output directory for results.csv and summary.json.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Worker threads for grid cells; defaults to all cores.
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,

    /// Leave wall-clock fields empty and omit timing quantiles, making
    /// repeated runs byte-identical.
    #[arg(long)]
    no_timing: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        dataset_csv: cli.dataset,
        group_column: cli.group_column,
        drop_columns: cli.drop_columns,
        methods: cli.methods,
        ranks: cli.ranks,
        trials: cli.trials,
        seed: cli.seed,
        out: cli.out,
        no_timing: cli.no_timing,
    };
    let cfg = match ExperimentConfig::resolve(cli.config.as_deref(), overrides) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(2);
        }
    };
    match run_experiment(&cfg, cli.jobs) {
        Ok((outcome, paths)) => {
            println!(
                "{} result rows -> {}",
                outcome.rows.len(),
                paths.results_csv.display()
            );
            println!("summary -> {}", paths.summary_json.display());
            if outcome.fully_succeeded() {
                ExitCode::SUCCESS
            } else {
                for failure in &outcome.summary.failures {
                    eprintln!(
                        "failed: {} rank {} {}{}: {}",
                        failure.stage,
                        failure.rank,
                        failure.method.as_deref().unwrap_or("-"),
                        failure
                            .trial
                            .map(|t| format!(" trial {t}"))
                            .unwrap_or_default(),
                        failure.message
                    );
                }
                ExitCode::from(1)
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
