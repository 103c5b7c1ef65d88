//! Fairness-aware factorization.
//!
//! Standard NMF minimizes one pooled error, so small or hard-to-compress
//! groups quietly subsidize the rest. The solvers here minimize the worst
//! per-group *relative loss* instead: how far a group's reconstruction error
//! sits above what that group could achieve with the same rank on its own
//! (its baseline `E_g`), scaled by the group's norm. Two schemes are
//! provided: an alternating-minimization solver with an exact convex min-max
//! step ([`am`]) and a cheaper reweighted multiplicative scheme ([`mu`]).

pub mod am;
pub mod mu;

use crate::error::{Error, Result};
use crate::matrix::{FactorPair, GroupedMatrix};
use crate::metrics::group_metrics;
use crate::nmf::{DEFAULT_EPSILON_GUARD, DEFAULT_REL_TOL};

pub const DEFAULT_SOLVER_TOL: f64 = 1e-6;
/// Safety cap on the H-step; its plateau test normally fires much earlier.
pub const DEFAULT_MAX_INNER_ITERS: usize = 4_000;
/// The alternating scheme takes few, expensive outer iterations.
pub const DEFAULT_AM_MAX_OUTER_ITERS: usize = 300;
/// The multiplicative scheme takes many cheap ones.
pub const DEFAULT_MU_MAX_OUTER_ITERS: usize = 20_000;

/// Options shared by both fairness-aware fits.
#[derive(Debug, Clone)]
pub struct FairerOptions {
    pub rank: usize,
    pub max_outer_iters: usize,
    /// Relative per-group error change below which the outer loop stops.
    pub rel_tol: f64,
    /// Absolute objective tolerance of the min-max H-step (AM only).
    pub solver_tol: f64,
    /// Iteration budget of the min-max H-step (AM only).
    pub max_inner_iters: usize,
    /// Denominator floor for multiplicative updates (MU only).
    pub epsilon_guard: f64,
    pub seed: u64,
}

impl FairerOptions {
    /// Defaults for the alternating-minimization scheme.
    pub fn am(rank: usize, seed: u64) -> Self {
        Self {
            rank,
            max_outer_iters: DEFAULT_AM_MAX_OUTER_ITERS,
            rel_tol: DEFAULT_REL_TOL,
            solver_tol: DEFAULT_SOLVER_TOL,
            max_inner_iters: DEFAULT_MAX_INNER_ITERS,
            epsilon_guard: DEFAULT_EPSILON_GUARD,
            seed,
        }
    }

    /// Defaults for the reweighted multiplicative scheme.
    pub fn mu(rank: usize, seed: u64) -> Self {
        Self {
            max_outer_iters: DEFAULT_MU_MAX_OUTER_ITERS,
            ..Self::am(rank, seed)
        }
    }

    pub fn with_max_outer_iters(mut self, max_outer_iters: usize) -> Self {
        self.max_outer_iters = max_outer_iters;
        self
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_solver_tol(mut self, solver_tol: f64) -> Self {
        self.solver_tol = solver_tol;
        self
    }

    pub fn with_max_inner_iters(mut self, max_inner_iters: usize) -> Self {
        self.max_inner_iters = max_inner_iters;
        self
    }

    pub(crate) fn validate(&self, rows: usize, cols: usize, context: &'static str) -> Result<()> {
        if self.rank == 0 || self.rank > rows.min(cols) {
            return Err(Error::DimensionMismatch {
                context,
                expected: format!("rank in 1..={}", rows.min(cols)),
                got: format!("{}", self.rank),
            });
        }
        if self.max_outer_iters == 0 || self.max_inner_iters == 0 {
            return Err(Error::InvalidValue {
                context,
                index: 0,
                value: 0.0,
            });
        }
        for (index, value) in [self.rel_tol, self.solver_tol, self.epsilon_guard]
            .into_iter()
            .enumerate()
        {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidValue {
                    context,
                    index,
                    value,
                });
            }
        }
        Ok(())
    }
}

/// The min-max objective: `max_g (‖X_g − W_g H‖ − E_g) / ‖X_g‖`.
///
/// Negative values are meaningful (every group beat its baseline) and are
/// returned as-is.
pub fn objective_f(x: &GroupedMatrix, factors: &FactorPair, baselines: &[f64]) -> Result<f64> {
    let m = group_metrics(x, factors.w.view(), factors.h.view(), Some(baselines), 0)?;
    Ok(m.objective
        .expect("objective is present when baselines are"))
}
