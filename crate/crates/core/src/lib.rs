//! Non-negative matrix factorization with group-fair reconstruction loss.
//!
//! Standard NMF minimizes one pooled Frobenius error, which lets the fit
//! quietly sacrifice small or atypical row groups. This crate measures each
//! group's *relative loss*, the gap between its error under a shared
//! factorization and the error it could achieve with the same rank on its
//! own, and provides two solvers that minimize the worst group's loss: an
//! alternating scheme with an exact convex min-max step
//! ([`fairer_nmf_am`]) and a cheaper reweighted multiplicative scheme
//! ([`fairer_nmf_mu`]). Plain multiplicative-update NMF ([`nmf_mu`]) and the
//! per-group baseline estimation it supports ([`estimate_baselines`]) are
//! included, along with dataset helpers and evaluation metrics.
//!
//! All randomness flows through explicit seeds, so every fit is reproducible
//! bit for bit.
//!
//! ```
//! use fairnmf::{
//!     estimate_baselines, fairer_nmf_mu, generate_synthetic, FairerOptions, NmfOptions,
//!     SyntheticGroup, SyntheticSpec,
//! };
//!
//! let spec = SyntheticSpec {
//!     groups: vec![
//!         SyntheticGroup::new("majority", 12, 2),
//!         SyntheticGroup::new("minority", 8, 2),
//!     ],
//!     cols: 6,
//!     seed: 7,
//! };
//! let x = generate_synthetic(&spec)?;
//!
//! let nmf_options = NmfOptions::new(2, 7).with_max_iters(200);
//! let baselines = estimate_baselines(&x, &nmf_options, 2)?;
//! let options = FairerOptions::mu(2, 7).with_max_outer_iters(200);
//! let fit = fairer_nmf_mu(&x, &baselines, &options)?;
//!
//! let last = fit.report.trace.last().unwrap();
//! assert!(last.objective.unwrap().is_finite());
//! # Ok::<(), fairnmf::Error>(())
//! ```

pub mod datasets;
mod error;
pub mod fairer;
mod linalg;
pub mod matrix;
pub mod metrics;
pub mod nmf;
pub mod nnls;

pub use datasets::{
    generate_synthetic, load_grouped_csv, normalize_features, write_grouped_csv, SyntheticGroup,
    SyntheticSpec,
};
pub use error::{Error, Result};
pub use fairer::am::{fairer_nmf_am, solve_h_minmax, HStepSolution, MinMaxSubproblem};
pub use fairer::mu::{
    argmax_group_loss, build_scaled_blocks, fairer_nmf_mu, update_weights, WeightVector,
};
pub use fairer::{objective_f, FairerOptions};
pub use matrix::{
    derive_seed, frobenius_norm, random_nonneg, row_partition, FactorPair, Group, GroupedMatrix,
};
pub use metrics::{
    aggregate_trials, converged, group_metrics, mean_std, relative_error, relative_loss, FitReport,
    GroupMetrics, IterationTrace, MetricStats, Termination, TrialAggregate,
};
pub use nmf::{
    estimate_baselines, mu_update_h, mu_update_w, nmf_mu, Fit, GroupBaselines, NmfOptions,
};
pub use nnls::{kkt_residuals, nnls, nnls_with_tol, KktResiduals};
