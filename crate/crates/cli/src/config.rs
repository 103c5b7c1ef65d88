//! Declarative experiment configuration.
//!
//! A run is described by an optional TOML file plus command-line overrides;
//! flags win over the file, and anything left unset falls back to the
//! defaults below. The full schema:
//!
//! ```toml
//! [dataset]
//! kind = "synthetic"          # or "csv"
//! cols = 20                   # synthetic only
//! seed = 7                    # synthetic only; derived from the master seed when absent
//! normalize = true            # scale features to unit Euclidean norm (default true)
//! [[dataset.groups]]          # synthetic only; defaults to the built-in benchmark mix
//! label = "large-low-rank"
//! rows = 1000
//! rank = 3
//!
//! # [dataset]
//! # kind = "csv"
//! # path = "data.csv"
//! # group-column = "sex"
//! # drop-columns = ["target"]
//!
//! [run]
//! methods = ["standard-mu", "standard-per-group", "fairer-am", "fairer-mu"]
//! ranks = "2-11"              # comma list and inclusive spans, or an array of integers
//! trials = 10
//! seed = 42                   # master seed; every other seed derives from it
//! baseline-runs = 5           # standard fits averaged into each group baseline
//! rel-tol = 1e-4              # relative per-group error change that counts as converged
//! solver-tol = 1e-6           # objective tolerance of the min-max H-step
//! max-iters = 2000            # standard multiplicative updates
//! am-max-outer-iters = 300
//! mu-max-outer-iters = 20000
//! max-inner-iters = 4000      # H-step budget per outer iteration
//!
//! [output]
//! dir = "results"
//! timing = true               # false drops wall-clock fields for bit-reproducible output
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use fairnmf::{derive_seed, SyntheticGroup, SyntheticSpec};

use crate::TAG_DATASET;

pub const DEFAULT_RANKS: &str = "2-11";
pub const DEFAULT_TRIALS: usize = 10;
pub const DEFAULT_BASELINE_RUNS: usize = 5;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_OUT_DIR: &str = "results";

/// A fitting method the harness knows how to run.
///
/// The variant order is the canonical output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FairerAm,
    FairerMu,
    StandardMu,
    StandardPerGroup,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::FairerAm,
        Method::FairerMu,
        Method::StandardMu,
        Method::StandardPerGroup,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::FairerAm => "fairer-am",
            Method::FairerMu => "fairer-mu",
            Method::StandardMu => "standard-mu",
            Method::StandardPerGroup => "standard-per-group",
        }
    }

    /// Whether fitting this method consumes per-group baselines.
    pub fn needs_baselines(self) -> bool {
        !matches!(self, Method::StandardPerGroup)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "unknown method '{s}' (expected one of: fairer-am, fairer-mu, \
                     standard-mu, standard-per-group)"
                ))
            })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

/// Where the data comes from, fully resolved.
#[derive(Debug, Clone)]
pub enum DatasetConfig {
    Synthetic(SyntheticSpec),
    Csv {
        path: PathBuf,
        group_column: String,
        drop_columns: Vec<String>,
    },
}

/// A fully resolved experiment: file, flags, and defaults merged.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub normalize: bool,
    /// Canonically ordered, deduplicated.
    pub methods: Vec<Method>,
    /// Ascending, deduplicated.
    pub ranks: Vec<usize>,
    pub trials: usize,
    /// Master seed; dataset, baseline, and trial seeds all derive from it.
    pub seed: u64,
    pub baseline_runs: usize,
    pub rel_tol: f64,
    pub solver_tol: f64,
    pub max_iters: usize,
    pub am_max_outer_iters: usize,
    pub mu_max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub out_dir: PathBuf,
    pub timing: bool,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub dataset_csv: Option<PathBuf>,
    pub group_column: Option<String>,
    pub drop_columns: Option<Vec<String>>,
    pub methods: Option<Vec<String>>,
    pub ranks: Option<String>,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub no_timing: bool,
}

// Raw file schema. Every section and key is optional so a config file can
// pin only what it cares about.

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct ConfigFile {
    dataset: Option<DatasetSection>,
    run: Option<RunSection>,
    output: Option<OutputSection>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
enum DatasetSection {
    #[serde(rename_all = "kebab-case")]
    Synthetic {
        cols: Option<usize>,
        seed: Option<u64>,
        groups: Option<Vec<GroupRow>>,
        normalize: Option<bool>,
    },
    #[serde(rename_all = "kebab-case")]
    Csv {
        path: PathBuf,
        group_column: String,
        drop_columns: Option<Vec<String>>,
        normalize: Option<bool>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct GroupRow {
    label: String,
    rows: usize,
    rank: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct RunSection {
    methods: Option<Vec<Method>>,
    ranks: Option<RanksValue>,
    trials: Option<usize>,
    seed: Option<u64>,
    baseline_runs: Option<usize>,
    rel_tol: Option<f64>,
    solver_tol: Option<f64>,
    max_iters: Option<usize>,
    am_max_outer_iters: Option<usize>,
    mu_max_outer_iters: Option<usize>,
    max_inner_iters: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum RanksValue {
    List(Vec<usize>),
    Text(String),
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct OutputSection {
    dir: Option<PathBuf>,
    timing: Option<bool>,
}

/// Parses rank syntax like `"6"`, `"3,5,9"`, or `"2-4,11"` into an ascending
/// deduplicated list.
pub fn parse_ranks(text: &str) -> Result<Vec<usize>, ConfigError> {
    let mut out = BTreeSet::new();
    for part in text.split(',') {
        let part = part.trim();
        let bad = || ConfigError::Invalid(format!("bad rank specifier '{part}' in '{text}'"));
        if let Some((lo, hi)) = part.split_once('-') {
            let lo: usize = lo.trim().parse().map_err(|_| bad())?;
            let hi: usize = hi.trim().parse().map_err(|_| bad())?;
            if lo == 0 || hi < lo {
                return Err(bad());
            }
            out.extend(lo..=hi);
        } else {
            let rank: usize = part.parse().map_err(|_| bad())?;
            if rank == 0 {
                return Err(bad());
            }
            out.insert(rank);
        }
    }
    if out.is_empty() {
        return Err(ConfigError::Invalid(format!("no ranks in '{text}'")));
    }
    Ok(out.into_iter().collect())
}

fn canonical_methods(methods: Vec<Method>) -> Result<Vec<Method>, ConfigError> {
    let set: BTreeSet<Method> = methods.into_iter().collect();
    if set.is_empty() {
        return Err(ConfigError::Invalid("no methods selected".into()));
    }
    Ok(set.into_iter().collect())
}

impl ExperimentConfig {
    /// Merges a config file (if any) with command-line overrides and
    /// validates the result.
    pub fn resolve(file: Option<&Path>, over: Overrides) -> Result<Self, ConfigError> {
        let parsed: ConfigFile = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                    path: path.to_path_buf(),
                    source,
                })?;
                toml::from_str(&text).map_err(|source| ConfigError::Parse {
                    path: path.to_path_buf(),
                    source,
                })?
            }
            None => ConfigFile::default(),
        };
        let run = parsed.run.unwrap_or_default();
        let output = parsed.output.unwrap_or_default();

        let seed = over.seed.or(run.seed).unwrap_or(DEFAULT_SEED);

        let methods = match over.methods {
            Some(names) => names
                .iter()
                .map(|name| name.trim().parse())
                .collect::<Result<Vec<Method>, _>>()?,
            None => run.methods.unwrap_or_else(|| Method::ALL.to_vec()),
        };
        let methods = canonical_methods(methods)?;

        let ranks = match (over.ranks, run.ranks) {
            (Some(text), _) => parse_ranks(&text)?,
            (None, Some(RanksValue::Text(text))) => parse_ranks(&text)?,
            (None, Some(RanksValue::List(list))) => {
                if list.is_empty() || list.contains(&0) {
                    return Err(ConfigError::Invalid("ranks must be positive".into()));
                }
                let set: BTreeSet<usize> = list.into_iter().collect();
                set.into_iter().collect()
            }
            (None, None) => parse_ranks(DEFAULT_RANKS)?,
        };

        let (dataset, normalize) = resolve_dataset(
            parsed.dataset,
            over.dataset_csv,
            over.group_column,
            over.drop_columns,
            seed,
        )?;

        let config = Self {
            dataset,
            normalize,
            methods,
            ranks,
            trials: over.trials.or(run.trials).unwrap_or(DEFAULT_TRIALS),
            seed,
            baseline_runs: run.baseline_runs.unwrap_or(DEFAULT_BASELINE_RUNS),
            rel_tol: run.rel_tol.unwrap_or(fairnmf::nmf::DEFAULT_REL_TOL),
            solver_tol: run
                .solver_tol
                .unwrap_or(fairnmf::fairer::DEFAULT_SOLVER_TOL),
            max_iters: run.max_iters.unwrap_or(fairnmf::nmf::DEFAULT_MAX_ITERS),
            am_max_outer_iters: run
                .am_max_outer_iters
                .unwrap_or(fairnmf::fairer::DEFAULT_AM_MAX_OUTER_ITERS),
            mu_max_outer_iters: run
                .mu_max_outer_iters
                .unwrap_or(fairnmf::fairer::DEFAULT_MU_MAX_OUTER_ITERS),
            max_inner_iters: run
                .max_inner_iters
                .unwrap_or(fairnmf::fairer::DEFAULT_MAX_INNER_ITERS),
            out_dir: over
                .out
                .or(output.dir)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
            timing: if over.no_timing {
                false
            } else {
                output.timing.unwrap_or(true)
            },
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            (self.trials, "trials"),
            (self.baseline_runs, "baseline-runs"),
            (self.max_iters, "max-iters"),
            (self.am_max_outer_iters, "am-max-outer-iters"),
            (self.mu_max_outer_iters, "mu-max-outer-iters"),
            (self.max_inner_iters, "max-inner-iters"),
        ];
        for (value, name) in positive {
            if value == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be at least 1")));
            }
        }
        for (value, name) in [(self.rel_tol, "rel-tol"), (self.solver_tol, "solver-tol")] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "{name} must be a positive finite number, got {value}"
                )));
            }
        }
        Ok(())
    }
}

fn resolve_dataset(
    section: Option<DatasetSection>,
    csv_flag: Option<PathBuf>,
    group_column_flag: Option<String>,
    drop_columns_flag: Option<Vec<String>>,
    master_seed: u64,
) -> Result<(DatasetConfig, bool), ConfigError> {
    // A --dataset flag forces CSV ingestion; the file's csv section (if any)
    // still supplies whatever the flags leave unset.
    let (file_csv, file_synthetic, normalize) = match section {
        Some(DatasetSection::Csv {
            path,
            group_column,
            drop_columns,
            normalize,
        }) => (
            Some((path, group_column, drop_columns.unwrap_or_default())),
            None,
            normalize,
        ),
        Some(DatasetSection::Synthetic {
            cols,
            seed,
            groups,
            normalize,
        }) => (None, Some((cols, seed, groups)), normalize),
        None => (None, None, None),
    };
    let normalize = normalize.unwrap_or(true);

    if let Some(path) = csv_flag {
        let (group_column, drop_columns) = match file_csv {
            Some((_, file_group, file_drops)) => (
                group_column_flag.unwrap_or(file_group),
                drop_columns_flag.unwrap_or(file_drops),
            ),
            None => {
                let group_column = group_column_flag.ok_or_else(|| {
                    ConfigError::Invalid(
                        "--dataset needs --group-column (or a csv dataset section)".into(),
                    )
                })?;
                (group_column, drop_columns_flag.unwrap_or_default())
            }
        };
        return Ok((
            DatasetConfig::Csv {
                path,
                group_column,
                drop_columns,
            },
            normalize,
        ));
    }

    if let Some((path, file_group, file_drops)) = file_csv {
        return Ok((
            DatasetConfig::Csv {
                path,
                group_column: group_column_flag.unwrap_or(file_group),
                drop_columns: drop_columns_flag.unwrap_or(file_drops),
            },
            normalize,
        ));
    }

    if group_column_flag.is_some() || drop_columns_flag.is_some() {
        return Err(ConfigError::Invalid(
            "--group-column and --drop-columns apply only to CSV datasets".into(),
        ));
    }

    // Synthetic: the built-in benchmark mix unless the file says otherwise.
    let (cols, seed, groups) = file_synthetic.unwrap_or((None, None, None));
    let mut spec =
        SyntheticSpec::benchmark(seed.unwrap_or_else(|| derive_seed(master_seed, &[TAG_DATASET])));
    if let Some(cols) = cols {
        spec.cols = cols;
    }
    if let Some(groups) = groups {
        spec.groups = groups
            .into_iter()
            .map(|g| SyntheticGroup::new(&g.label, g.rows, g.rank))
            .collect();
    }
    Ok((DatasetConfig::Synthetic(spec), normalize))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(text: &str) -> tempfile::NamedTempFile {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(text.as_bytes()).unwrap();
        file
    }

    #[test]
    fn rank_syntax_covers_lists_spans_and_mixtures() {
        assert_eq!(parse_ranks("6").unwrap(), vec![6]);
        assert_eq!(parse_ranks("3,5,9").unwrap(), vec![3, 5, 9]);
        assert_eq!(parse_ranks("2-4,11").unwrap(), vec![2, 3, 4, 11]);
        assert_eq!(parse_ranks("4, 2-3, 2").unwrap(), vec![2, 3, 4]);
        assert!(parse_ranks("").is_err());
        assert!(parse_ranks("0").is_err());
        assert!(parse_ranks("5-3").is_err());
        assert!(parse_ranks("a-b").is_err());
    }

    #[test]
    fn defaults_describe_the_benchmark_sweep() {
        let cfg = ExperimentConfig::resolve(None, Overrides::default()).unwrap();
        assert_eq!(cfg.methods, Method::ALL.to_vec());
        assert_eq!(cfg.ranks, (2..=11).collect::<Vec<_>>());
        assert_eq!(cfg.trials, 10);
        assert_eq!(cfg.baseline_runs, 5);
        assert!(cfg.timing);
        assert!(cfg.normalize);
        match &cfg.dataset {
            DatasetConfig::Synthetic(spec) => {
                assert_eq!(spec.cols, 20);
                assert_eq!(spec.groups.len(), 3);
                // The dataset seed is pinned by the master seed.
                assert_eq!(spec.seed, derive_seed(DEFAULT_SEED, &[TAG_DATASET]));
            }
            other => panic!("expected synthetic dataset, got {other:?}"),
        }
    }

    #[test]
    fn file_values_load_and_flags_win() {
        let file = write_config(
            r#"
            [run]
            methods = ["standard-mu", "fairer-mu"]
            ranks = [4, 2]
            trials = 3
            seed = 9
            baseline-runs = 2
            solver-tol = 1e-5

            [output]
            dir = "elsewhere"
            timing = false
            "#,
        );
        let cfg = ExperimentConfig::resolve(Some(file.path()), Overrides::default()).unwrap();
        assert_eq!(cfg.methods, vec![Method::FairerMu, Method::StandardMu]);
        assert_eq!(cfg.ranks, vec![2, 4]);
        assert_eq!(cfg.trials, 3);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.baseline_runs, 2);
        assert_eq!(cfg.solver_tol, 1e-5);
        assert_eq!(cfg.out_dir, PathBuf::from("elsewhere"));
        assert!(!cfg.timing);

        let over = Overrides {
            ranks: Some("7-8".into()),
            trials: Some(1),
            seed: Some(11),
            out: Some(PathBuf::from("cli-dir")),
            ..Overrides::default()
        };
        let cfg = ExperimentConfig::resolve(Some(file.path()), over).unwrap();
        assert_eq!(cfg.ranks, vec![7, 8]);
        assert_eq!(cfg.trials, 1);
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.out_dir, PathBuf::from("cli-dir"));
    }

    #[test]
    fn synthetic_sections_can_redefine_the_groups() {
        let file = write_config(
            r#"
            [dataset]
            kind = "synthetic"
            cols = 8
            seed = 123

            [[dataset.groups]]
            label = "a"
            rows = 30
            rank = 2

            [[dataset.groups]]
            label = "b"
            rows = 10
            rank = 3
            "#,
        );
        let cfg = ExperimentConfig::resolve(Some(file.path()), Overrides::default()).unwrap();
        match cfg.dataset {
            DatasetConfig::Synthetic(spec) => {
                assert_eq!(spec.cols, 8);
                assert_eq!(spec.seed, 123);
                let labels: Vec<&str> = spec.groups.iter().map(|g| g.label.as_str()).collect();
                assert_eq!(labels, vec!["a", "b"]);
            }
            other => panic!("expected synthetic dataset, got {other:?}"),
        }
    }

    #[test]
    fn csv_sections_and_flags_merge() {
        let file = write_config(
            r#"
            [dataset]
            kind = "csv"
            path = "heart.csv"
            group-column = "sex"
            drop-columns = ["target"]
            normalize = false
            "#,
        );
        let cfg = ExperimentConfig::resolve(Some(file.path()), Overrides::default()).unwrap();
        assert!(!cfg.normalize);
        match &cfg.dataset {
            DatasetConfig::Csv {
                path,
                group_column,
                drop_columns,
            } => {
                assert_eq!(path, &PathBuf::from("heart.csv"));
                assert_eq!(group_column, "sex");
                assert_eq!(drop_columns, &vec!["target".to_string()]);
            }
            other => panic!("expected csv dataset, got {other:?}"),
        }

        // A --dataset flag swaps the path but keeps the file's column picks.
        let over = Overrides {
            dataset_csv: Some(PathBuf::from("other.csv")),
            ..Overrides::default()
        };
        let cfg = ExperimentConfig::resolve(Some(file.path()), over).unwrap();
        match &cfg.dataset {
            DatasetConfig::Csv {
                path, group_column, ..
            } => {
                assert_eq!(path, &PathBuf::from("other.csv"));
                assert_eq!(group_column, "sex");
            }
            other => panic!("expected csv dataset, got {other:?}"),
        }
    }

    #[test]
    fn csv_flags_without_a_group_column_are_rejected() {
        let over = Overrides {
            dataset_csv: Some(PathBuf::from("d.csv")),
            ..Overrides::default()
        };
        assert!(ExperimentConfig::resolve(None, over).is_err());

        // Group-column flags are meaningless for synthetic data.
        let over = Overrides {
            group_column: Some("sex".into()),
            ..Overrides::default()
        };
        assert!(ExperimentConfig::resolve(None, over).is_err());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let file = write_config("[run]\nmethod = [\"standard-mu\"]\n");
        assert!(ExperimentConfig::resolve(Some(file.path()), Overrides::default()).is_err());

        let file = write_config("[run]\ntrials = 0\n");
        assert!(ExperimentConfig::resolve(Some(file.path()), Overrides::default()).is_err());

        let file = write_config("[run]\nsolver-tol = -1.0\n");
        assert!(ExperimentConfig::resolve(Some(file.path()), Overrides::default()).is_err());

        let over = Overrides {
            methods: Some(vec!["standard-mu".into(), "newton".into()]),
            ..Overrides::default()
        };
        assert!(ExperimentConfig::resolve(None, over).is_err());
    }

    #[test]
    fn duplicate_methods_collapse_in_canonical_order() {
        let over = Overrides {
            methods: Some(vec![
                "standard-mu".into(),
                "fairer-am".into(),
                "standard-mu".into(),
            ]),
            ..Overrides::default()
        };
        let cfg = ExperimentConfig::resolve(None, over).unwrap();
        assert_eq!(cfg.methods, vec![Method::FairerAm, Method::StandardMu]);
    }
}
