//! Standard NMF under the Frobenius objective, via multiplicative updates.
//!
//! `nmf_mu` factors a non-negative `X` as `WH` with both factors
//! entrywise non-negative, alternating the classic multiplicative updates
//! from a seeded uniform initialization. `estimate_baselines` runs it
//! repeatedly on each group block of a [`GroupedMatrix`] to establish how
//! well each group can be reconstructed on its own; the fairness-aware
//! solvers measure themselves against those numbers.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::matrix::{
    derive_seed, frobenius_norm, random_nonneg, validate_nonneg, FactorPair, GroupedMatrix,
};
use crate::metrics::{converged, FitReport, IterationTrace, Termination};

pub const DEFAULT_MAX_ITERS: usize = 2000;
pub const DEFAULT_REL_TOL: f64 = 1e-4;
pub const DEFAULT_EPSILON_GUARD: f64 = 1e-12;

/// Seed stream tags so W, H, and baseline runs never share a stream.
pub(crate) const TAG_W: u64 = 0x57;
pub(crate) const TAG_H: u64 = 0x48;
const TAG_BASELINE: u64 = 0xB5;

/// Options for a multiplicative-update fit.
#[derive(Debug, Clone)]
pub struct NmfOptions {
    pub rank: usize,
    pub max_iters: usize,
    /// Relative per-iteration error change below which the fit stops.
    pub rel_tol: f64,
    /// Relative floor added to update denominators; see [`mu_update_h`].
    pub epsilon_guard: f64,
    pub seed: u64,
}

impl NmfOptions {
    pub fn new(rank: usize, seed: u64) -> Self {
        Self {
            rank,
            max_iters: DEFAULT_MAX_ITERS,
            rel_tol: DEFAULT_REL_TOL,
            epsilon_guard: DEFAULT_EPSILON_GUARD,
            seed,
        }
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    pub fn with_epsilon_guard(mut self, epsilon_guard: f64) -> Self {
        self.epsilon_guard = epsilon_guard;
        self
    }

    fn validate(&self, rows: usize, cols: usize, context: &'static str) -> Result<()> {
        if self.rank == 0 || self.rank > rows.min(cols) {
            return Err(Error::DimensionMismatch {
                context,
                expected: format!("rank in 1..={}", rows.min(cols)),
                got: format!("{}", self.rank),
            });
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidValue {
                context,
                index: 0,
                value: 0.0,
            });
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.rel_tol) || !positive(self.epsilon_guard) {
            return Err(Error::InvalidValue {
                context,
                index: 1,
                value: self.rel_tol.min(self.epsilon_guard),
            });
        }
        Ok(())
    }
}

/// A fitted factor pair with its iteration trace.
#[derive(Debug, Clone)]
pub struct Fit {
    pub factors: FactorPair,
    pub report: FitReport,
}

fn denominator_guard(denom: &Array2<f64>, epsilon_guard: f64) -> f64 {
    let max = denom.iter().cloned().fold(0.0f64, f64::max);
    if max > 0.0 {
        epsilon_guard * max
    } else {
        epsilon_guard
    }
}

/// Multiplicative update of `H`: `H ⊙ (WᵀX) / (WᵀWH + g)`.
///
/// The guard `g` is `epsilon_guard · max(WᵀWH)` rather than a fixed constant,
/// so the update is exactly invariant when `X` and `W` are rescaled by a
/// common factor; the reweighted scheme in [`crate::fairer::mu`] leans on
/// that. The absolute fallback `g = epsilon_guard` only applies when the
/// denominator is identically zero (e.g. an all-zero `H`).
pub fn mu_update_h(
    x: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    h: ArrayView2<'_, f64>,
    epsilon_guard: f64,
) -> Array2<f64> {
    let wt = w.t();
    let numer = wt.dot(&x);
    let denom = wt.dot(&w).dot(&h);
    let guard = denominator_guard(&denom, epsilon_guard);
    let mut out = h.to_owned();
    ndarray::Zip::from(&mut out)
        .and(&numer)
        .and(&denom)
        .for_each(|hv, &nv, &dv| *hv *= nv / (dv + guard));
    out
}

/// Multiplicative update of `W`: `W ⊙ (XHᵀ) / (WHHᵀ + g)`.
///
/// Guarded the same way as [`mu_update_h`].
pub fn mu_update_w(
    x: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    h: ArrayView2<'_, f64>,
    epsilon_guard: f64,
) -> Array2<f64> {
    let ht = h.t();
    let numer = x.dot(&ht);
    let denom = w.dot(&h.dot(&ht));
    let guard = denominator_guard(&denom, epsilon_guard);
    let mut out = w.to_owned();
    ndarray::Zip::from(&mut out)
        .and(&numer)
        .and(&denom)
        .for_each(|wv, &nv, &dv| *wv *= nv / (dv + guard));
    out
}

/// Factors `X ≈ WH` by alternating multiplicative updates.
///
/// Both factors start from seeded uniform-[0,1) draws, so a given
/// `(X, options)` pair always produces the same fit. The Frobenius error is
/// non-increasing across iterations; the fit stops once its relative change
/// drops below `rel_tol` or the iteration budget runs out.
pub fn nmf_mu(x: ArrayView2<'_, f64>, options: &NmfOptions) -> Result<Fit> {
    if x.is_empty() {
        return Err(Error::EmptyMatrix { context: "nmf_mu" });
    }
    validate_nonneg(&x)?;
    options.validate(x.nrows(), x.ncols(), "nmf_mu")?;

    let (m, n) = x.dim();
    let r = options.rank;
    let mut w = random_nonneg(m, r, derive_seed(options.seed, &[TAG_W]));
    let mut h = random_nonneg(r, n, derive_seed(options.seed, &[TAG_H]));

    let start = Instant::now();
    let mut trace = Vec::with_capacity(options.max_iters + 1);
    let mut prev = frobenius_norm((&x - &w.dot(&h)).view())?;
    trace.push(IterationTrace {
        iteration: 0,
        errors: vec![prev],
        losses: None,
        objective: None,
        seconds: start.elapsed().as_secs_f64(),
    });

    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    for k in 1..=options.max_iters {
        w = mu_update_w(x, w.view(), h.view(), options.epsilon_guard);
        h = mu_update_h(x, w.view(), h.view(), options.epsilon_guard);
        let err = frobenius_norm((&x - &w.dot(&h)).view())?;
        trace.push(IterationTrace {
            iteration: k,
            errors: vec![err],
            losses: None,
            objective: None,
            seconds: start.elapsed().as_secs_f64(),
        });
        iterations = k;
        let done = converged(&[prev], &[err], options.rel_tol)?;
        prev = err;
        if done {
            termination = Termination::Converged;
            break;
        }
    }

    Ok(Fit {
        factors: FactorPair::new(w, h)?,
        report: FitReport {
            trace,
            termination,
            iterations,
            seconds: start.elapsed().as_secs_f64(),
        },
    })
}

/// Per-group single-group reconstruction baselines.
///
/// `values[g]` is the average final error `‖X_g − W_g H_g‖` over `t_runs`
/// independent standard-NMF fits of group `g`'s block alone, stored
/// unnormalized. The seeds actually used are kept alongside the options so a
/// baseline can be reproduced exactly.
#[derive(Debug, Clone)]
pub struct GroupBaselines {
    pub values: Vec<f64>,
    pub t_runs: usize,
    /// Seeds of the underlying fits, row-major by (group, run).
    pub seeds: Vec<u64>,
    pub options: NmfOptions,
}

impl GroupBaselines {
    /// Checks this baseline set against a fit about to use it.
    pub fn validate_for(&self, x: &GroupedMatrix, rank: usize) -> Result<()> {
        if self.values.len() != x.n_groups() {
            return Err(Error::BaselineGroupMismatch {
                baseline: self.values.len(),
                data: x.n_groups(),
            });
        }
        if self.options.rank != rank {
            return Err(Error::BaselineRankMismatch {
                baseline: self.options.rank,
                requested: rank,
            });
        }
        Ok(())
    }
}

/// Estimates per-group baselines by averaging `t_runs` standard fits of each
/// group block, with seeds derived from `options.seed`.
pub fn estimate_baselines(
    x: &GroupedMatrix,
    options: &NmfOptions,
    t_runs: usize,
) -> Result<GroupBaselines> {
    estimate_baselines_with(x, options, t_runs, |block, opts| {
        let fit = nmf_mu(block.view(), opts)?;
        Ok(fit
            .report
            .trace
            .last()
            .expect("nmf_mu always records at least one trace entry")
            .errors[0])
    })
}

fn estimate_baselines_with(
    x: &GroupedMatrix,
    options: &NmfOptions,
    t_runs: usize,
    mut run: impl FnMut(&Array2<f64>, &NmfOptions) -> Result<f64>,
) -> Result<GroupBaselines> {
    if t_runs == 0 {
        return Err(Error::EmptyInput {
            context: "estimate_baselines",
        });
    }
    let mut values = Vec::with_capacity(x.n_groups());
    let mut seeds = Vec::with_capacity(x.n_groups() * t_runs);
    for g in 0..x.n_groups() {
        let block = x.block(g)?;
        let mut total = 0.0;
        for t in 0..t_runs {
            let seed = derive_seed(options.seed, &[TAG_BASELINE, g as u64, t as u64]);
            seeds.push(seed);
            let mut opts = options.clone();
            opts.seed = seed;
            total += run(&block, &opts)?;
        }
        values.push(total / t_runs as f64);
    }
    Ok(GroupBaselines {
        values,
        t_runs,
        seeds,
        options: options.clone(),
    })
}
