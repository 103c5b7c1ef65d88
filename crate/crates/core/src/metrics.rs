//! Reconstruction metrics, convergence checks, and trial aggregation.
//!
//! Every solver in this crate reports its quality through this module so the
//! numbers mean the same thing everywhere: `relative_error` is
//! `‖X − WH‖ / ‖X‖`, and `relative_loss` measures how far a group's error
//! sits above its single-group baseline, scaled by the group norm. A loss
//! can legitimately be negative (the shared fit beat the baseline average)
//! and is never clamped.

use ndarray::ArrayView2;

use crate::error::{Error, Result};
use crate::matrix::{frobenius_norm, GroupedMatrix};

/// `‖X − WH‖ / ‖X‖` for a reconstruction `wh` of `x`.
pub fn relative_error(x: ArrayView2<'_, f64>, wh: ArrayView2<'_, f64>) -> Result<f64> {
    if x.dim() != wh.dim() {
        return Err(Error::DimensionMismatch {
            context: "relative_error",
            expected: format!("{:?}", x.dim()),
            got: format!("{:?}", wh.dim()),
        });
    }
    let norm = frobenius_norm(x)?;
    if norm <= 0.0 {
        return Err(Error::DegenerateGroup {
            label: "relative_error: zero-norm X".to_string(),
        });
    }
    let diff = &x - &wh;
    Ok(frobenius_norm(diff.view())? / norm)
}

/// `(error − baseline) / norm`; negative when the fit beats the baseline.
pub fn relative_loss(error: f64, baseline: f64, norm: f64) -> Result<f64> {
    for (index, value) in [error, baseline, norm].into_iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidValue {
                context: "relative_loss",
                index,
                value,
            });
        }
    }
    if norm == 0.0 {
        return Err(Error::InvalidValue {
            context: "relative_loss norm",
            index: 2,
            value: norm,
        });
    }
    Ok((error - baseline) / norm)
}

/// Per-group stopping rule on unnormalized errors.
///
/// Converged when `|cur − prev| / cur < rel_tol` for every group. A group
/// whose current error is exactly zero counts as converged regardless of its
/// previous value (there is nothing left to reduce).
pub fn converged(prev: &[f64], cur: &[f64], rel_tol: f64) -> Result<bool> {
    if prev.is_empty() {
        return Err(Error::EmptyInput {
            context: "converged",
        });
    }
    if prev.len() != cur.len() {
        return Err(Error::DimensionMismatch {
            context: "converged",
            expected: format!("{} entries", prev.len()),
            got: format!("{}", cur.len()),
        });
    }
    if !(rel_tol.is_finite() && rel_tol > 0.0) {
        return Err(Error::InvalidValue {
            context: "converged rel_tol",
            index: 0,
            value: rel_tol,
        });
    }
    for (index, &value) in prev.iter().chain(cur.iter()).enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::InvalidValue {
                context: "converged errors",
                index: index % prev.len(),
                value,
            });
        }
    }
    let worst = prev
        .iter()
        .zip(cur)
        .map(|(&p, &c)| if c == 0.0 { 0.0 } else { (c - p).abs() / c })
        .fold(0.0f64, f64::max);
    Ok(worst < rel_tol)
}

/// Mean and sample standard deviation of one metric over trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
}

/// Sample statistics (n−1 denominator); a single value has deviation zero.
pub fn mean_std(values: &[f64]) -> Result<MetricStats> {
    if values.is_empty() {
        return Err(Error::EmptyInput {
            context: "mean_std",
        });
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        var.sqrt()
    };
    Ok(MetricStats {
        count: n,
        mean,
        std,
    })
}

/// Metrics of one fitted iterate, per group.
#[derive(Debug, Clone)]
pub struct GroupMetrics {
    /// `‖X_g − (WH)_g‖ / ‖X_g‖` per group.
    pub rel_errors: Vec<f64>,
    /// `(‖X_g − (WH)_g‖ − E_g) / ‖X_g‖` per group, when baselines are known.
    pub rel_losses: Option<Vec<f64>>,
    /// Worst (largest) relative loss across groups.
    pub objective: Option<f64>,
    /// Iteration count of the fit that produced the iterate.
    pub iterations: usize,
}

/// Evaluates a factor pair against grouped data.
///
/// This is the single source of truth for per-group errors, losses, and the
/// min-max objective; the solvers report numbers computed here (or by the
/// same formulas on their internal state).
pub fn group_metrics(
    x: &GroupedMatrix,
    w: ArrayView2<'_, f64>,
    h: ArrayView2<'_, f64>,
    baselines: Option<&[f64]>,
    iterations: usize,
) -> Result<GroupMetrics> {
    let errors = x.group_errors(w, h)?;
    let rel_errors: Vec<f64> = errors.iter().zip(x.norms()).map(|(e, n)| e / n).collect();
    let rel_losses = match baselines {
        Some(e) => {
            if e.len() != errors.len() {
                return Err(Error::BaselineGroupMismatch {
                    baseline: e.len(),
                    data: errors.len(),
                });
            }
            let losses: Vec<f64> = errors
                .iter()
                .zip(e)
                .zip(x.norms())
                .map(|((err, base), norm)| relative_loss(*err, *base, *norm))
                .collect::<Result<_>>()?;
            Some(losses)
        }
        None => None,
    };
    let objective = rel_losses
        .as_ref()
        .map(|l| l.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    Ok(GroupMetrics {
        rel_errors,
        rel_losses,
        objective,
        iterations,
    })
}

/// Aggregate of per-group metrics over repeated trials.
#[derive(Debug, Clone)]
pub struct TrialAggregate {
    pub count: usize,
    /// Per-group stats of the relative errors.
    pub rel_error: Vec<MetricStats>,
    /// Per-group stats of the relative losses, when all trials carried them.
    pub rel_loss: Option<Vec<MetricStats>>,
    /// Stats of the min-max objective, when all trials carried it.
    pub objective: Option<MetricStats>,
}

/// Aggregates one (method, rank) cell's trials.
pub fn aggregate_trials(trials: &[GroupMetrics]) -> Result<TrialAggregate> {
    if trials.is_empty() {
        return Err(Error::EmptyInput {
            context: "aggregate_trials",
        });
    }
    let n_groups = trials[0].rel_errors.len();
    for t in trials {
        if t.rel_errors.len() != n_groups {
            return Err(Error::DimensionMismatch {
                context: "aggregate_trials",
                expected: format!("{n_groups} groups"),
                got: format!("{}", t.rel_errors.len()),
            });
        }
    }
    let per_group = |pick: &dyn Fn(&GroupMetrics, usize) -> f64| -> Result<Vec<MetricStats>> {
        (0..n_groups)
            .map(|g| {
                let values: Vec<f64> = trials.iter().map(|t| pick(t, g)).collect();
                mean_std(&values)
            })
            .collect()
    };
    let rel_error = per_group(&|t, g| t.rel_errors[g])?;
    let rel_loss = if trials.iter().all(|t| t.rel_losses.is_some()) {
        Some(per_group(&|t, g| t.rel_losses.as_ref().unwrap()[g])?)
    } else {
        None
    };
    let objective = if trials.iter().all(|t| t.objective.is_some()) {
        let values: Vec<f64> = trials.iter().map(|t| t.objective.unwrap()).collect();
        Some(mean_std(&values)?)
    } else {
        None
    };
    Ok(TrialAggregate {
        count: trials.len(),
        rel_error,
        rel_loss,
        objective,
    })
}

/// Why a fit stopped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Termination {
    /// The per-group stopping rule fired.
    Converged,
    /// The iteration budget ran out first.
    MaxIterations,
    /// An inner solver failed even after a retry; the factors are the best
    /// iterate found.
    SolverFailure(String),
}

/// One recorded iteration of a fit.
#[derive(Debug, Clone)]
pub struct IterationTrace {
    pub iteration: usize,
    /// Unnormalized per-group errors `‖X_g − (WH)_g‖` (a single entry for
    /// ungrouped fits).
    pub errors: Vec<f64>,
    /// Per-group relative losses, for fits that track baselines.
    pub losses: Option<Vec<f64>>,
    /// Min-max objective of the iterate, for fits that track baselines.
    pub objective: Option<f64>,
    /// Wall-clock seconds since the fit started.
    pub seconds: f64,
}

/// Full per-iteration trace plus how and when the fit stopped.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub trace: Vec<IterationTrace>,
    pub termination: Termination,
    /// Update iterations actually performed.
    pub iterations: usize,
    /// Total wall-clock seconds of the fit.
    pub seconds: f64,
}
