//! Reweighted multiplicative updates.
//!
//! Instead of solving an exact min-max step, this scheme keeps an integer
//! count per group of how often that group has had the worst loss. Each
//! iteration increments the worst group's count, rescales every group block
//! by `count/norm`, and applies one ordinary multiplicative H update to the
//! rescaled stack followed by a W update on the raw data. Groups that lag
//! accumulate weight until the updates start favoring them, which pushes the
//! factorization toward balanced losses at a fraction of the cost of the
//! alternating scheme.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::matrix::{derive_seed, random_nonneg, FactorPair, GroupedMatrix};
use crate::metrics::{converged, relative_loss, FitReport, IterationTrace, Termination};
use crate::nmf::{mu_update_h, mu_update_w, Fit, GroupBaselines, TAG_H, TAG_W};

use super::FairerOptions;

/// Per-group emphasis counts. The total count equals the number of outer
/// iterations taken, since exactly one group is incremented per iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightVector {
    counts: Vec<u64>,
}

impl WeightVector {
    /// All-zero counts for `n_groups` groups.
    pub fn new(n_groups: usize) -> Result<Self> {
        if n_groups == 0 {
            return Err(Error::EmptyInput {
                context: "WeightVector",
            });
        }
        Ok(Self {
            counts: vec![0; n_groups],
        })
    }

    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::EmptyInput {
                context: "WeightVector",
            });
        }
        Ok(Self { counts })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Index of the largest loss; ties go to the smallest index.
pub fn argmax_group_loss(losses: &[f64]) -> Result<usize> {
    if losses.is_empty() {
        return Err(Error::EmptyInput {
            context: "argmax_group_loss",
        });
    }
    let mut best = 0;
    for (index, &value) in losses.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::InvalidValue {
                context: "argmax_group_loss",
                index,
                value,
            });
        }
        if value > losses[best] {
            best = index;
        }
    }
    Ok(best)
}

/// Returns a copy of `weights` with the given group's count incremented.
pub fn update_weights(weights: &WeightVector, group: usize) -> Result<WeightVector> {
    if group >= weights.len() {
        return Err(Error::IndexOutOfRange {
            index: group,
            len: weights.len(),
        });
    }
    let mut counts = weights.counts.clone();
    counts[group] += 1;
    Ok(WeightVector { counts })
}

/// Stacks `(count_g / norm_g) · X_g` and `(count_g / norm_g) · W_g` in group
/// order. Groups with a zero count contribute zero rows, so they exert no
/// pull on the H update.
pub fn build_scaled_blocks(
    x: &GroupedMatrix,
    w: ArrayView2<'_, f64>,
    weights: &WeightVector,
) -> Result<(Array2<f64>, Array2<f64>)> {
    const CONTEXT: &str = "build_scaled_blocks";
    if w.nrows() != x.nrows() {
        return Err(Error::DimensionMismatch {
            context: CONTEXT,
            expected: format!("{} factor rows", x.nrows()),
            got: format!("{}", w.nrows()),
        });
    }
    if weights.len() != x.n_groups() {
        return Err(Error::DimensionMismatch {
            context: CONTEXT,
            expected: format!("{} weights", x.n_groups()),
            got: format!("{}", weights.len()),
        });
    }
    let rank = w.ncols();
    let mut scaled_x = Array2::zeros((x.nrows(), x.ncols()));
    let mut scaled_w = Array2::zeros((x.nrows(), rank));
    let mut out = 0;
    for (g, group) in x.groups().iter().enumerate() {
        let factor = weights.counts[g] as f64 / x.norms()[g];
        for &row in &group.rows {
            scaled_x
                .row_mut(out)
                .assign(&x.data().row(row).mapv(|v| v * factor));
            scaled_w
                .row_mut(out)
                .assign(&w.row(row).mapv(|v| v * factor));
            out += 1;
        }
    }
    Ok((scaled_x, scaled_w))
}

/// Fairness-aware NMF by reweighted multiplicative updates.
///
/// Cheap per iteration but first-order: the objective is not monotone, so
/// the loop stops on relative error stability rather than objective decrease.
pub fn fairer_nmf_mu(
    x: &GroupedMatrix,
    baselines: &GroupBaselines,
    options: &FairerOptions,
) -> Result<Fit> {
    options.validate(x.nrows(), x.ncols(), "fairer_nmf_mu")?;
    baselines.validate_for(x, options.rank)?;

    let e = &baselines.values;
    let norms = x.norms();
    let start = Instant::now();
    let mut w = random_nonneg(x.nrows(), options.rank, derive_seed(options.seed, &[TAG_W]));
    let mut h = random_nonneg(options.rank, x.ncols(), derive_seed(options.seed, &[TAG_H]));
    let mut weights = WeightVector::new(x.n_groups())?;

    let losses_of = |errors: &[f64]| -> Result<Vec<f64>> {
        errors
            .iter()
            .zip(e)
            .zip(norms)
            .map(|((&err, &base), &norm)| relative_loss(err, base, norm))
            .collect()
    };

    let mut trace: Vec<IterationTrace> = Vec::new();
    let mut record = |iteration: usize, errors: &[f64], losses: &[f64]| {
        let objective = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        trace.push(IterationTrace {
            iteration,
            errors: errors.to_vec(),
            losses: Some(losses.to_vec()),
            objective: Some(objective),
            seconds: start.elapsed().as_secs_f64(),
        });
    };

    let mut errors = x.group_errors(w.view(), h.view())?;
    let mut losses = losses_of(&errors)?;
    record(0, &errors, &losses);

    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    for outer in 1..=options.max_outer_iters {
        iterations = outer;
        let winner = argmax_group_loss(&losses)?;
        weights = update_weights(&weights, winner)?;

        let (scaled_x, scaled_w) = build_scaled_blocks(x, w.view(), &weights)?;
        h = mu_update_h(
            scaled_x.view(),
            scaled_w.view(),
            h.view(),
            options.epsilon_guard,
        );
        w = mu_update_w(x.data(), w.view(), h.view(), options.epsilon_guard);

        let next_errors = x.group_errors(w.view(), h.view())?;
        losses = losses_of(&next_errors)?;
        record(outer, &next_errors, &losses);

        if converged(&errors, &next_errors, options.rel_tol)? {
            termination = Termination::Converged;
            break;
        }
        errors = next_errors;
    }

    let factors = FactorPair::new(w, h)?;
    let report = FitReport {
        trace,
        termination,
        iterations,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok(Fit { factors, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::row_partition;
    use crate::nmf::{estimate_baselines, NmfOptions};
    use ndarray::array;

    #[test]
    fn argmax_prefers_the_smallest_index_on_ties() {
        assert_eq!(argmax_group_loss(&[0.1, 0.5, 0.5]).unwrap(), 1);
        assert_eq!(argmax_group_loss(&[-0.3]).unwrap(), 0);
        assert_eq!(argmax_group_loss(&[2.0, 2.0]).unwrap(), 0);
        assert!(argmax_group_loss(&[]).is_err());
        assert!(argmax_group_loss(&[0.1, f64::NAN]).is_err());
    }

    #[test]
    fn update_weights_touches_only_the_winner() {
        let w = WeightVector::new(3).unwrap();
        let w = update_weights(&w, 1).unwrap();
        let w = update_weights(&w, 1).unwrap();
        let w = update_weights(&w, 2).unwrap();
        assert_eq!(w.counts(), &[0, 2, 1]);
        assert_eq!(w.total(), 3);
        assert!(update_weights(&w, 3).is_err());
    }

    #[test]
    fn one_increment_per_iteration_keeps_the_total_in_lockstep() {
        let mut weights = WeightVector::new(2).unwrap();
        let loss_history = [[0.4, 0.1], [0.2, 0.9], [0.5, 0.5], [0.0, 0.3], [0.7, 0.1]];
        for (k, losses) in loss_history.iter().enumerate() {
            weights = update_weights(&weights, argmax_group_loss(losses).unwrap()).unwrap();
            assert_eq!(weights.total(), k as u64 + 1);
        }
        assert_eq!(weights.counts(), &[3, 2]);
    }

    #[test]
    fn scaled_blocks_match_the_hand_computation() {
        // Group norms: a → 5, b → 2. Counts: a → 2, b → 1.
        let x = row_partition(array![[3.0, 4.0], [0.0, 2.0]], &["a", "b"]).unwrap();
        let w = array![[1.0, 0.5], [2.0, 1.0]];
        let weights = WeightVector::from_counts(vec![2, 1]).unwrap();
        let (sx, sw) = build_scaled_blocks(&x, w.view(), &weights).unwrap();
        assert_eq!(sx[[0, 0]], 3.0 * (2.0 / 5.0));
        assert_eq!(sx[[0, 1]], 4.0 * (2.0 / 5.0));
        assert_eq!(sx[[1, 1]], 2.0 * (1.0 / 2.0));
        assert_eq!(sw[[0, 1]], 0.5 * (2.0 / 5.0));
        assert_eq!(sw[[1, 0]], 2.0 * (1.0 / 2.0));
    }

    #[test]
    fn zero_count_groups_contribute_zero_rows() {
        let x = row_partition(array![[3.0, 4.0], [0.0, 2.0]], &["a", "b"]).unwrap();
        let w = array![[1.0, 0.5], [2.0, 1.0]];
        let weights = WeightVector::from_counts(vec![0, 1]).unwrap();
        let (sx, sw) = build_scaled_blocks(&x, w.view(), &weights).unwrap();
        assert_eq!(sx.row(0).sum(), 0.0);
        assert_eq!(sw.row(0).sum(), 0.0);
        assert!(sx.row(1).sum() > 0.0);
    }

    #[test]
    fn scaling_all_counts_leaves_the_update_unchanged() {
        // The H update depends on the weights only through a common scale,
        // so c and 7c must produce the same update to near machine accuracy.
        let w_full = crate::matrix::random_nonneg(12, 3, 101);
        let h = crate::matrix::random_nonneg(3, 5, 102);
        let data = crate::matrix::random_nonneg(12, 5, 103);
        let labels: Vec<&str> = (0..12)
            .map(|i| if i % 3 == 0 { "a" } else { "b" })
            .collect();
        let x = row_partition(data, &labels).unwrap();

        let small = WeightVector::from_counts(vec![2, 1]).unwrap();
        let large = WeightVector::from_counts(vec![14, 7]).unwrap();
        let (sx1, sw1) = build_scaled_blocks(&x, w_full.view(), &small).unwrap();
        let (sx2, sw2) = build_scaled_blocks(&x, w_full.view(), &large).unwrap();
        let h1 = mu_update_h(sx1.view(), sw1.view(), h.view(), 1e-12);
        let h2 = mu_update_h(sx2.view(), sw2.view(), h.view(), 1e-12);
        for (a, b) in h1.iter().zip(h2.iter()) {
            let rel = (a - b).abs() / a.abs().max(1e-300);
            assert!(rel < 1e-12, "updates diverged: {a} vs {b}");
        }
    }

    #[test]
    fn stacked_update_matches_the_per_group_sum() {
        // Numerator and denominator of the stacked update are sums of
        // per-group terms with squared scale factors.
        let w_full = crate::matrix::random_nonneg(10, 2, 201);
        let h = crate::matrix::random_nonneg(2, 4, 202);
        let data = crate::matrix::random_nonneg(10, 4, 203);
        let labels: Vec<&str> = (0..10).map(|i| if i < 4 { "a" } else { "b" }).collect();
        let x = row_partition(data, &labels).unwrap();
        let weights = WeightVector::from_counts(vec![3, 2]).unwrap();

        let (sx, sw) = build_scaled_blocks(&x, w_full.view(), &weights).unwrap();
        let numerator = sw.t().dot(&sx);
        let gram_h = sw.t().dot(&sw).dot(&h);

        let mut expected_num: Array2<f64> = Array2::zeros(numerator.dim());
        let mut expected_gram: Array2<f64> = Array2::zeros(gram_h.dim());
        for g in 0..2 {
            let factor = (weights.counts()[g] as f64 / x.norms()[g]).powi(2);
            let xg = x.block(g).unwrap();
            let wg = x.gather_rows(w_full.view(), g).unwrap();
            expected_num = expected_num + wg.t().dot(&xg).mapv(|v| v * factor);
            expected_gram = expected_gram + wg.t().dot(&wg).dot(&h).mapv(|v| v * factor);
        }
        for (a, b) in numerator.iter().zip(expected_num.iter()) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
        for (a, b) in gram_h.iter().zip(expected_gram.iter()) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
    }

    fn planted_grouped(seed: u64) -> GroupedMatrix {
        let w = crate::matrix::random_nonneg(18, 2, seed);
        let h = crate::matrix::random_nonneg(2, 6, seed ^ 0x5555);
        let labels: Vec<&str> = (0..18).map(|i| if i < 11 { "a" } else { "b" }).collect();
        row_partition(w.dot(&h), &labels).unwrap()
    }

    #[test]
    fn fit_terminates_with_consistent_reporting() {
        let x = planted_grouped(61);
        let nmf_opts = NmfOptions::new(2, 13).with_max_iters(300);
        let baselines = estimate_baselines(&x, &nmf_opts, 2).unwrap();
        let options = FairerOptions::mu(2, 13).with_max_outer_iters(500);
        let fit = fairer_nmf_mu(&x, &baselines, &options).unwrap();

        let trace = &fit.report.trace;
        assert!(trace.len() >= 2, "expected an initial entry plus updates");
        assert_eq!(trace[0].iteration, 0);
        for entry in trace {
            assert_eq!(entry.errors.len(), 2);
            let losses = entry.losses.as_ref().unwrap();
            let worst = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(entry.objective.unwrap(), worst);
        }
        assert!(fit.factors.w.iter().all(|&v| v >= 0.0));
        assert!(fit.factors.h.iter().all(|&v| v >= 0.0));
        assert_eq!(fit.report.iterations + 1, trace.len());
    }

    #[test]
    fn fit_is_deterministic_for_a_fixed_seed() {
        let x = planted_grouped(77);
        let nmf_opts = NmfOptions::new(2, 5).with_max_iters(200);
        let baselines = estimate_baselines(&x, &nmf_opts, 2).unwrap();
        let options = FairerOptions::mu(2, 5).with_max_outer_iters(120);
        let one = fairer_nmf_mu(&x, &baselines, &options).unwrap();
        let two = fairer_nmf_mu(&x, &baselines, &options).unwrap();
        assert_eq!(one.factors.w, two.factors.w);
        assert_eq!(one.factors.h, two.factors.h);
        assert_eq!(one.report.iterations, two.report.iterations);
    }

    #[test]
    fn baseline_disagreement_is_rejected() {
        let x = planted_grouped(83);
        let nmf_opts = NmfOptions::new(2, 3).with_max_iters(50);
        let baselines = estimate_baselines(&x, &nmf_opts, 1).unwrap();
        let options = FairerOptions::mu(3, 3).with_max_outer_iters(5);
        assert!(fairer_nmf_mu(&x, &baselines, &options).is_err());
    }
}
