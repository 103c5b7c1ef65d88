//! Experiment harness over the `fairnmf` solvers.
//!
//! [`run_experiment`] sweeps a (method, rank, trial) grid over one dataset
//! and writes two files into the output directory:
//!
//! - `results.csv`: one row per (method, rank, trial, group) with the
//!   relative error (percent), relative loss, min-max objective, iteration
//!   count, and fit wall-clock.
//! - `summary.json`: the resolved configuration, dataset shape, shared
//!   per-rank baselines, per-cell aggregates (mean and standard deviation
//!   over trials), timing quantiles, and any recorded failures.
//!
//! Group baselines are estimated once per rank and shared by every method
//! and trial, so paired comparisons see identical `E` values. Grid cells are
//! independent and run in parallel; outputs are canonically ordered (method,
//! rank, trial, then dataset group order) regardless of scheduling, and a
//! fixed config plus master seed reproduces every number except wall-clock
//! measurements, which can be dropped entirely via the timing switch.
//!
//! A failed cell is recorded in the summary and the sweep continues; callers
//! decide how to surface partial failure (the binary exits 1).

pub mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;

use fairnmf::{
    derive_seed, estimate_baselines, fairer_nmf_am, fairer_nmf_mu, generate_synthetic,
    group_metrics, load_grouped_csv, mean_std, nmf_mu, normalize_features, FairerOptions,
    GroupBaselines, GroupMetrics, GroupedMatrix, MetricStats, NmfOptions, Termination,
};

use config::{ConfigError, DatasetConfig, ExperimentConfig, Method};

/// Version of the `summary.json` layout.
pub const SCHEMA_VERSION: u32 = 1;

// Seed-derivation tags; the core library uses its own disjoint set.
pub(crate) const TAG_DATASET: u64 = 0xDA7A;
const TAG_BASELINE: u64 = 0xBA5E;
const TAG_TRIAL: u64 = 0x7A1A;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dataset: {0}")]
    Dataset(fairnmf::Error),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("writing {path}: {message}")]
    Write { path: PathBuf, message: String },
}

/// One output row: a (method, rank, trial, group) cell of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub rank: usize,
    pub trial: usize,
    pub group: String,
    pub rel_error_pct: f64,
    /// Absent for standard-per-group, which reports errors only.
    pub rel_loss: Option<f64>,
    /// The min-max objective of the trial; identical across its group rows.
    pub f: Option<f64>,
    pub iters: usize,
    pub seconds: f64,
}

/// Mean and sample standard deviation of one metric over trials.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

impl Stats {
    fn from_metric(stats: MetricStats, factor: f64) -> Self {
        Self {
            count: stats.count,
            mean: stats.mean * factor,
            std: stats.std * factor,
        }
    }
}

/// Aggregate of one (method, rank) cell over its trials.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    pub method: String,
    pub rank: usize,
    pub trials: usize,
    /// Per group, dataset order.
    pub rel_error_pct: Vec<Stats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rel_loss: Option<Vec<Stats>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f: Option<Stats>,
    /// Over all result rows of the cell.
    pub iters: Stats,
}

/// Wall-clock quantiles of one (method, rank) cell, linearly interpolated.
#[derive(Debug, Clone, Serialize)]
pub struct TimingRow {
    pub method: String,
    pub rank: usize,
    pub trials: usize,
    pub median_seconds: f64,
    pub iqr_seconds: f64,
    pub q1_seconds: f64,
    pub q3_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FailureNote {
    /// `"baselines"` or `"fit"`.
    pub stage: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    pub rank: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trial: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupEcho {
    pub label: String,
    pub rows: usize,
    pub rank: usize,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetEcho {
    #[serde(rename_all = "kebab-case")]
    Synthetic {
        cols: usize,
        seed: u64,
        groups: Vec<GroupEcho>,
    },
    #[serde(rename_all = "kebab-case")]
    Csv {
        path: String,
        group_column: String,
        drop_columns: Vec<String>,
    },
}

/// Echo of the resolved run parameters. The output directory is where the
/// summary landed, not part of what was computed, so it is not echoed.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigEcho {
    pub dataset: DatasetEcho,
    pub normalize: bool,
    pub methods: Vec<String>,
    pub ranks: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub baseline_runs: usize,
    pub rel_tol: f64,
    pub solver_tol: f64,
    pub max_iters: usize,
    pub am_max_outer_iters: usize,
    pub mu_max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub timing: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupShape {
    pub label: String,
    pub rows: usize,
    pub norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetSummary {
    pub rows: usize,
    pub cols: usize,
    pub groups: Vec<GroupShape>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub config: ConfigEcho,
    pub dataset: DatasetSummary,
    /// Baseline errors per rank, in dataset group order; shared by every
    /// method and trial of that rank.
    pub baselines: BTreeMap<usize, Vec<f64>>,
    pub aggregates: Vec<AggregateRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Vec<TimingRow>>,
    pub failures: Vec<FailureNote>,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub rows: Vec<ResultRow>,
    pub summary: Summary,
}

impl ExperimentOutcome {
    pub fn fully_succeeded(&self) -> bool {
        self.summary.failures.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct EmittedPaths {
    pub results_csv: PathBuf,
    pub summary_json: PathBuf,
}

/// Builds the dataset a config describes, normalized if requested.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<GroupedMatrix, Error> {
    let raw = match &cfg.dataset {
        DatasetConfig::Synthetic(spec) => generate_synthetic(spec).map_err(Error::Dataset)?,
        DatasetConfig::Csv {
            path,
            group_column,
            drop_columns,
        } => {
            let drops: Vec<&str> = drop_columns.iter().map(String::as_str).collect();
            load_grouped_csv(path, group_column, &drops).map_err(Error::Dataset)?
        }
    };
    if cfg.normalize {
        normalize_features(&raw).map_err(Error::Dataset)
    } else {
        Ok(raw)
    }
}

/// Runs the grid and writes `results.csv` and `summary.json`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    jobs: Option<usize>,
) -> Result<(ExperimentOutcome, EmittedPaths), Error> {
    let outcome = execute(cfg, jobs)?;
    let paths = emit_results(cfg, &outcome)?;
    Ok((outcome, paths))
}

/// Runs the grid without touching the filesystem.
pub fn execute(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<ExperimentOutcome, Error> {
    let x = load_dataset(cfg)?;
    validate_grid(cfg, &x)?;

    let mut failures: Vec<FailureNote> = Vec::new();

    // Baselines once per rank, shared across methods and trials.
    let mut baselines: BTreeMap<usize, GroupBaselines> = BTreeMap::new();
    if cfg.methods.iter().any(|m| m.needs_baselines()) {
        for &rank in &cfg.ranks {
            let opts = NmfOptions::new(rank, derive_seed(cfg.seed, &[TAG_BASELINE, rank as u64]))
                .with_max_iters(cfg.max_iters)
                .with_rel_tol(cfg.rel_tol);
            match estimate_baselines(&x, &opts, cfg.baseline_runs) {
                Ok(b) => {
                    baselines.insert(rank, b);
                }
                Err(err) => failures.push(FailureNote {
                    stage: "baselines".into(),
                    method: None,
                    rank,
                    trial: None,
                    message: err.to_string(),
                }),
            }
        }
    }

    // The grid in canonical order; parallel collect preserves it. Ranks whose
    // baseline estimation failed keep their baseline-free cells only.
    let mut cells: Vec<(Method, usize, usize)> = Vec::new();
    for &method in &cfg.methods {
        for &rank in &cfg.ranks {
            if method.needs_baselines() && !baselines.contains_key(&rank) {
                continue;
            }
            for trial in 1..=cfg.trials {
                cells.push((method, rank, trial));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Pool(e.to_string()))?;
    let cell_outputs: Vec<Result<CellOutput, fairnmf::Error>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(method, rank, trial)| {
                run_cell(cfg, &x, baselines.get(&rank), method, rank, trial)
            })
            .collect()
    });

    let mut rows: Vec<ResultRow> = Vec::new();
    let mut records: Vec<CellRecord> = Vec::new();
    for (&(method, rank, trial), output) in cells.iter().zip(cell_outputs) {
        match output {
            Ok(cell) => {
                if let Some(message) = cell.solver_failure {
                    failures.push(FailureNote {
                        stage: "fit".into(),
                        method: Some(method.to_string()),
                        rank,
                        trial: Some(trial),
                        message,
                    });
                }
                rows.extend(cell.rows);
                records.push(CellRecord {
                    method,
                    rank,
                    metrics: cell.metrics,
                    seconds: cell.seconds,
                });
            }
            Err(err) => failures.push(FailureNote {
                stage: "fit".into(),
                method: Some(method.to_string()),
                rank,
                trial: Some(trial),
                message: err.to_string(),
            }),
        }
    }
    // Construction order is already canonical; the sort is the contract.
    rows.sort_by_key(|r| (r.method, r.rank, r.trial));

    let aggregates = build_aggregates(cfg, &rows, &records)?;
    let timing = cfg.timing.then(|| build_timing(cfg, &records));

    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        config: echo_config(cfg),
        dataset: summarize_dataset(&x),
        baselines: baselines
            .iter()
            .map(|(&rank, b)| (rank, b.values.clone()))
            .collect(),
        aggregates,
        timing,
        failures,
    };
    Ok(ExperimentOutcome { rows, summary })
}

/// Writes `results.csv` and `summary.json` into the configured directory.
pub fn emit_results(
    cfg: &ExperimentConfig,
    outcome: &ExperimentOutcome,
) -> Result<EmittedPaths, Error> {
    let write_err = |path: &PathBuf| {
        let path = path.clone();
        move |e: std::io::Error| Error::Write {
            path,
            message: e.to_string(),
        }
    };
    std::fs::create_dir_all(&cfg.out_dir).map_err(write_err(&cfg.out_dir))?;

    let results_csv = cfg.out_dir.join("results.csv");
    let mut writer = csv::Writer::from_path(&results_csv).map_err(|e| Error::Write {
        path: results_csv.clone(),
        message: e.to_string(),
    })?;
    let emit = |field: Result<(), csv::Error>| {
        field.map_err(|e| Error::Write {
            path: results_csv.clone(),
            message: e.to_string(),
        })
    };
    emit(writer.write_record([
        "method",
        "rank",
        "trial",
        "group",
        "rel_error_pct",
        "rel_loss",
        "f",
        "iters",
        "seconds",
    ]))?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for row in &outcome.rows {
        emit(writer.write_record([
            row.method.as_str().to_string(),
            row.rank.to_string(),
            row.trial.to_string(),
            row.group.clone(),
            row.rel_error_pct.to_string(),
            opt(row.rel_loss),
            opt(row.f),
            row.iters.to_string(),
            if cfg.timing {
                row.seconds.to_string()
            } else {
                String::new()
            },
        ]))?;
    }
    emit(writer.flush().map_err(csv::Error::from))?;

    let summary_json = cfg.out_dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&outcome.summary).map_err(|e| Error::Write {
        path: summary_json.clone(),
        message: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(&summary_json, text).map_err(write_err(&summary_json))?;

    Ok(EmittedPaths {
        results_csv,
        summary_json,
    })
}

struct CellOutput {
    rows: Vec<ResultRow>,
    metrics: GroupMetrics,
    /// Total fit wall-clock of the cell (summed over blocks for the
    /// per-group method), excluding baseline estimation.
    seconds: f64,
    solver_failure: Option<String>,
}

struct CellRecord {
    method: Method,
    rank: usize,
    metrics: GroupMetrics,
    seconds: f64,
}

fn run_cell(
    cfg: &ExperimentConfig,
    x: &GroupedMatrix,
    baselines: Option<&GroupBaselines>,
    method: Method,
    rank: usize,
    trial: usize,
) -> Result<CellOutput, fairnmf::Error> {
    let cell_seed = derive_seed(cfg.seed, &[TAG_TRIAL, rank as u64, trial as u64]);

    if method == Method::StandardPerGroup {
        let mut rows = Vec::with_capacity(x.n_groups());
        let mut rel_errors = Vec::with_capacity(x.n_groups());
        let mut seconds = 0.0;
        let mut iters = 0;
        for g in 0..x.n_groups() {
            let block = x.block(g)?;
            let opts = NmfOptions::new(rank, derive_seed(cell_seed, &[g as u64]))
                .with_max_iters(cfg.max_iters)
                .with_rel_tol(cfg.rel_tol);
            let fit = nmf_mu(block.view(), &opts)?;
            let err = fit
                .report
                .trace
                .last()
                .expect("nmf_mu always records a trace entry")
                .errors[0];
            let rel = err / x.norms()[g];
            rows.push(ResultRow {
                method,
                rank,
                trial,
                group: x.groups()[g].label.clone(),
                rel_error_pct: 100.0 * rel,
                rel_loss: None,
                f: None,
                iters: fit.report.iterations,
                seconds: fit.report.seconds,
            });
            rel_errors.push(rel);
            seconds += fit.report.seconds;
            iters = iters.max(fit.report.iterations);
        }
        return Ok(CellOutput {
            rows,
            metrics: GroupMetrics {
                rel_errors,
                rel_losses: None,
                objective: None,
                iterations: iters,
            },
            seconds,
            solver_failure: None,
        });
    }

    let b = baselines.expect("cells needing baselines are scheduled only when they exist");
    let (fit, solver_failure) = match method {
        Method::StandardMu => {
            let opts = NmfOptions::new(rank, cell_seed)
                .with_max_iters(cfg.max_iters)
                .with_rel_tol(cfg.rel_tol);
            (nmf_mu(x.data(), &opts)?, None)
        }
        Method::FairerAm => {
            let opts = FairerOptions::am(rank, cell_seed)
                .with_max_outer_iters(cfg.am_max_outer_iters)
                .with_rel_tol(cfg.rel_tol)
                .with_solver_tol(cfg.solver_tol)
                .with_max_inner_iters(cfg.max_inner_iters);
            let fit = fairer_nmf_am(x, b, &opts)?;
            let failure = match &fit.report.termination {
                Termination::SolverFailure(msg) => Some(msg.clone()),
                _ => None,
            };
            (fit, failure)
        }
        Method::FairerMu => {
            let opts = FairerOptions::mu(rank, cell_seed)
                .with_max_outer_iters(cfg.mu_max_outer_iters)
                .with_rel_tol(cfg.rel_tol);
            (fairer_nmf_mu(x, b, &opts)?, None)
        }
        Method::StandardPerGroup => unreachable!("handled above"),
    };

    let metrics = group_metrics(
        x,
        fit.factors.w.view(),
        fit.factors.h.view(),
        Some(&b.values),
        fit.report.iterations,
    )?;
    let rows = (0..x.n_groups())
        .map(|g| ResultRow {
            method,
            rank,
            trial,
            group: x.groups()[g].label.clone(),
            rel_error_pct: 100.0 * metrics.rel_errors[g],
            rel_loss: metrics.rel_losses.as_ref().map(|l| l[g]),
            f: metrics.objective,
            iters: fit.report.iterations,
            seconds: fit.report.seconds,
        })
        .collect();
    Ok(CellOutput {
        rows,
        metrics,
        seconds: fit.report.seconds,
        solver_failure,
    })
}

fn validate_grid(cfg: &ExperimentConfig, x: &GroupedMatrix) -> Result<(), Error> {
    // Baseline and per-group fits factor single blocks, so every rank must
    // fit inside the smallest group as well as the feature count.
    let smallest = x.groups().iter().map(|g| g.rows.len()).min().unwrap_or(0);
    let bound = x.ncols().min(smallest);
    for &rank in &cfg.ranks {
        if rank > bound {
            return Err(Error::Config(ConfigError::Invalid(format!(
                "rank {rank} exceeds the largest usable rank {bound} \
                 (smallest group has {smallest} rows, {} features)",
                x.ncols()
            ))));
        }
    }
    Ok(())
}

fn build_aggregates(
    cfg: &ExperimentConfig,
    rows: &[ResultRow],
    records: &[CellRecord],
) -> Result<Vec<AggregateRow>, Error> {
    let stats_err = |e: fairnmf::Error| Error::Write {
        path: PathBuf::from("summary.json"),
        message: format!("aggregating: {e}"),
    };
    let mut out = Vec::new();
    for &method in &cfg.methods {
        for &rank in &cfg.ranks {
            let trials: Vec<GroupMetrics> = records
                .iter()
                .filter(|r| r.method == method && r.rank == rank)
                .map(|r| r.metrics.clone())
                .collect();
            if trials.is_empty() {
                continue;
            }
            let agg = fairnmf::aggregate_trials(&trials).map_err(stats_err)?;
            let iters: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == method && r.rank == rank)
                .map(|r| r.iters as f64)
                .collect();
            out.push(AggregateRow {
                method: method.to_string(),
                rank,
                trials: agg.count,
                rel_error_pct: agg
                    .rel_error
                    .iter()
                    .map(|&s| Stats::from_metric(s, 100.0))
                    .collect(),
                rel_loss: agg
                    .rel_loss
                    .map(|per| per.iter().map(|&s| Stats::from_metric(s, 1.0)).collect()),
                f: agg.objective.map(|s| Stats::from_metric(s, 1.0)),
                iters: Stats::from_metric(mean_std(&iters).map_err(stats_err)?, 1.0),
            });
        }
    }
    Ok(out)
}

fn build_timing(cfg: &ExperimentConfig, records: &[CellRecord]) -> Vec<TimingRow> {
    let mut out = Vec::new();
    for &method in &cfg.methods {
        for &rank in &cfg.ranks {
            let mut seconds: Vec<f64> = records
                .iter()
                .filter(|r| r.method == method && r.rank == rank)
                .map(|r| r.seconds)
                .collect();
            if seconds.is_empty() {
                continue;
            }
            seconds.sort_by(f64::total_cmp);
            let q1 = quantile(&seconds, 0.25);
            let q3 = quantile(&seconds, 0.75);
            out.push(TimingRow {
                method: method.to_string(),
                rank,
                trials: seconds.len(),
                median_seconds: quantile(&seconds, 0.5),
                iqr_seconds: q3 - q1,
                q1_seconds: q1,
                q3_seconds: q3,
            });
        }
    }
    out
}

/// Linearly interpolated quantile of an ascending slice (the common
/// "type 7" rule: index `h = (n−1)p`, interpolate between its neighbors).
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn echo_config(cfg: &ExperimentConfig) -> ConfigEcho {
    let dataset = match &cfg.dataset {
        DatasetConfig::Synthetic(spec) => DatasetEcho::Synthetic {
            cols: spec.cols,
            seed: spec.seed,
            groups: spec
                .groups
                .iter()
                .map(|g| GroupEcho {
                    label: g.label.clone(),
                    rows: g.rows,
                    rank: g.rank,
                })
                .collect(),
        },
        DatasetConfig::Csv {
            path,
            group_column,
            drop_columns,
        } => DatasetEcho::Csv {
            path: path.display().to_string(),
            group_column: group_column.clone(),
            drop_columns: drop_columns.clone(),
        },
    };
    ConfigEcho {
        dataset,
        normalize: cfg.normalize,
        methods: cfg.methods.iter().map(|m| m.to_string()).collect(),
        ranks: cfg.ranks.clone(),
        trials: cfg.trials,
        seed: cfg.seed,
        baseline_runs: cfg.baseline_runs,
        rel_tol: cfg.rel_tol,
        solver_tol: cfg.solver_tol,
        max_iters: cfg.max_iters,
        am_max_outer_iters: cfg.am_max_outer_iters,
        mu_max_outer_iters: cfg.mu_max_outer_iters,
        max_inner_iters: cfg.max_inner_iters,
        timing: cfg.timing,
    }
}

fn summarize_dataset(x: &GroupedMatrix) -> DatasetSummary {
    DatasetSummary {
        rows: x.nrows(),
        cols: x.ncols(),
        groups: x
            .groups()
            .iter()
            .zip(x.norms())
            .map(|(g, &norm)| GroupShape {
                label: g.label.clone(),
                rows: g.rows.len(),
                norm,
            })
            .collect(),
    }
}
