//! Alternating minimization with an exact min-max H-step.
//!
//! With W held fixed, minimizing the worst-group loss over `H ≥ 0` is
//! convex. In epigraph form it is a second-order cone program:
//!
//! ```text
//! minimize   t
//! subject to ‖X_g − W_g H‖ ≤ n_g·t + E_g   for every group g
//!            H ≥ 0
//! ```
//!
//! where `n_g` is the group's norm and `E_g` its baseline error.
//! [`solve_h_minmax`] solves this with an ADMM splitting whose per-iteration
//! work is one triangular solve against a cached Cholesky factor of
//! `WᵀW + I`, one Euclidean cone projection per group, and a clamp.
//!
//! With H held fixed, the W refit is an exact non-negative least-squares
//! problem. It separates over rows of X, so every group's error is
//! individually minimized and no group's loss can increase. Together with a
//! warm-start guard in the H-step (never return an H worse than the previous
//! one), the outer objective is non-increasing by construction.

use std::time::Instant;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayViewMut2, Zip};

use crate::error::{Error, Result};
use crate::linalg::{chol_solve_columns, cholesky};
use crate::matrix::{validate_nonneg, FactorPair, GroupedMatrix};
use crate::metrics::{converged, relative_loss, FitReport, IterationTrace, Termination};
use crate::nmf::{Fit, GroupBaselines, TAG_W};
use crate::nnls::nnls;

use super::FairerOptions;

/// How often the ADMM loop evaluates its stopping tests.
const CHECK_EVERY: usize = 5;
/// How often the penalty parameter may be rebalanced.
const ADAPT_EVERY: usize = 25;
const RHO_INIT: f64 = 1.0;
const RHO_MIN: f64 = 1e-8;
const RHO_MAX: f64 = 1e8;
/// Consecutive checks without objective progress before the plateau exit.
const PLATEAU_CHECKS: usize = 10;
/// The plateau exit stays disarmed this long so that the dual ramp-up phase,
/// where the feasible iterate can sit still, is never mistaken for
/// convergence.
const PLATEAU_MIN_ITERS: usize = 50;
/// Feasibility gate for the plateau exit. These are deliberately loose; the
/// split variable P is exactly non-negative at all times, so its objective is
/// always attainable, and the gate only keeps the exit from firing while the
/// consensus between the two copies of H is still coarse.
const PLATEAU_FEAS_REL: f64 = 1e-3;
const PLATEAU_FEAS_ABS: f64 = 1e-4;
/// On a stalled H-step the fit retries once with this penalty and a larger
/// iteration budget before surfacing the failure.
const RETRY_RHO: f64 = 0.1;
const RETRY_BUDGET_FACTOR: usize = 4;

/// One fixed-W instance of the min-max problem over H.
///
/// Holds per-group `(X_g, W_g)` blocks together with the baselines and norms
/// that define each group's loss. Build one per outer iteration; the solver
/// itself does not mutate it.
#[derive(Debug, Clone)]
pub struct MinMaxSubproblem {
    blocks: Vec<(Array2<f64>, Array2<f64>)>,
    baselines: Vec<f64>,
    norms: Vec<f64>,
    solver_tol: f64,
    max_inner_iters: usize,
    warm_start: Option<Array2<f64>>,
    rho: f64,
}

impl MinMaxSubproblem {
    pub fn new(
        blocks: Vec<(Array2<f64>, Array2<f64>)>,
        baselines: Vec<f64>,
        norms: Vec<f64>,
    ) -> Result<Self> {
        const CONTEXT: &str = "MinMaxSubproblem";
        if blocks.is_empty() {
            return Err(Error::EmptyInput { context: CONTEXT });
        }
        if baselines.len() != blocks.len() || norms.len() != blocks.len() {
            return Err(Error::DimensionMismatch {
                context: CONTEXT,
                expected: format!("{} baselines and norms", blocks.len()),
                got: format!("{} and {}", baselines.len(), norms.len()),
            });
        }
        let cols = blocks[0].0.ncols();
        let rank = blocks[0].1.ncols();
        for (g, (x, w)) in blocks.iter().enumerate() {
            if x.nrows() == 0 || x.nrows() != w.nrows() || x.ncols() != cols || w.ncols() != rank {
                return Err(Error::DimensionMismatch {
                    context: CONTEXT,
                    expected: format!(
                        "block {g} shaped (rows, {cols}) with factors (rows, {rank})"
                    ),
                    got: format!("{:?} and {:?}", x.dim(), w.dim()),
                });
            }
        }
        if cols == 0 || rank == 0 {
            return Err(Error::EmptyMatrix { context: CONTEXT });
        }
        for (index, &value) in baselines.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidValue {
                    context: "MinMaxSubproblem baselines",
                    index,
                    value,
                });
            }
        }
        for (index, &value) in norms.iter().enumerate() {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::InvalidValue {
                    context: "MinMaxSubproblem norms",
                    index,
                    value,
                });
            }
        }
        Ok(Self {
            blocks,
            baselines,
            norms,
            solver_tol: super::DEFAULT_SOLVER_TOL,
            max_inner_iters: super::DEFAULT_MAX_INNER_ITERS,
            warm_start: None,
            rho: RHO_INIT,
        })
    }

    pub fn with_solver_tol(mut self, solver_tol: f64) -> Self {
        self.solver_tol = solver_tol;
        self
    }

    pub fn with_max_inner_iters(mut self, max_inner_iters: usize) -> Self {
        self.max_inner_iters = max_inner_iters;
        self
    }

    /// Seeds the solver with a known-good H, typically the previous outer
    /// iterate. The returned solution is guaranteed not to be worse.
    pub fn with_warm_start(mut self, h: Array2<f64>) -> Self {
        self.warm_start = Some(h);
        self
    }

    pub(crate) fn with_rho(mut self, rho: f64) -> Self {
        self.rho = rho;
        self
    }

    /// The min-max objective `max_g (‖X_g − W_g H‖ − E_g)/n_g` at a given H.
    pub fn objective_at(&self, h: &Array2<f64>) -> Result<f64> {
        let mut worst = f64::NEG_INFINITY;
        for (g, (x, w)) in self.blocks.iter().enumerate() {
            let residual = x - &w.dot(h);
            let err = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
            let loss = relative_loss(err, self.baselines[g], self.norms[g])?;
            worst = worst.max(loss);
        }
        Ok(worst)
    }
}

/// Result of one min-max H-step.
#[derive(Debug, Clone)]
pub struct HStepSolution {
    /// Entrywise non-negative coefficient matrix.
    pub h: Array2<f64>,
    /// Objective value at `h`.
    pub epigraph_value: f64,
    /// ADMM iterations spent.
    pub inner_iterations: usize,
}

/// Projects `(z, s0)` onto `{(z, s) : ‖z‖ ≤ a·s + b}` in place and returns
/// the projected `s`. Requires `a > 0` and `b ≥ 0`.
fn project_cone(mut z: ArrayViewMut2<'_, f64>, s0: f64, a: f64, b: f64) -> f64 {
    let zn = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let u0 = a * s0 + b;
    if zn <= u0 {
        return s0;
    }
    // The projection shrinks z along itself onto the boundary; w is the
    // boundary norm minimizing ‖z − z0‖² + (s − s0)².
    let w = (a * a * zn + u0) / (a * a + 1.0);
    if w <= 0.0 {
        z.fill(0.0);
        return -b / a;
    }
    let beta = w / zn;
    z.mapv_inplace(|v| v * beta);
    (w - b) / a
}

/// Solves the fixed-W min-max problem over `H ≥ 0`.
///
/// Two stopping tests run side by side: the usual primal/dual residual test,
/// and an objective plateau test that stops once the best feasible iterate
/// has not improved at `solver_tol` resolution for a stretch of checks. The
/// split variable tracking H is clamped non-negative every iteration, so its
/// objective is always attainable and the plateau test measures exactly the
/// quantity the caller cares about.
///
/// Returns the best iterate found; when a warm start is supplied the result
/// never has a larger objective than it. Exhausting the iteration budget
/// before either test passes yields [`Error::MinMaxStalled`] carrying the
/// best iterate so callers can decide how to proceed.
pub fn solve_h_minmax(problem: &MinMaxSubproblem) -> Result<HStepSolution> {
    const CONTEXT: &str = "solve_h_minmax";
    if !(problem.solver_tol.is_finite() && problem.solver_tol > 0.0) {
        return Err(Error::InvalidValue {
            context: CONTEXT,
            index: 0,
            value: problem.solver_tol,
        });
    }
    if problem.max_inner_iters == 0 {
        return Err(Error::InvalidValue {
            context: CONTEXT,
            index: 1,
            value: 0.0,
        });
    }

    let l = problem.blocks.len();
    let n = problem.blocks[0].0.ncols();
    let r = problem.blocks[0].1.ncols();
    let m: usize = problem.blocks.iter().map(|(x, _)| x.nrows()).sum();

    // Stack the blocks once; all per-group work happens on row ranges.
    let mut x_st = Array2::<f64>::zeros((m, n));
    let mut w_st = Array2::<f64>::zeros((m, r));
    let mut ranges = Vec::with_capacity(l);
    let mut offset = 0;
    for (x, w) in &problem.blocks {
        let rows = x.nrows();
        x_st.slice_mut(s![offset..offset + rows, ..]).assign(x);
        w_st.slice_mut(s![offset..offset + rows, ..]).assign(w);
        ranges.push(offset..offset + rows);
        offset += rows;
    }

    // The H update solves (WᵀW + I)H = Wᵀ(X − Z + U) + (P − Q); the identity
    // term comes from the H = P constraint and keeps the system positive
    // definite even when W is rank-deficient.
    let mut gram = w_st.t().dot(&w_st);
    for i in 0..r {
        gram[[i, i]] += 1.0;
    }
    let gl = cholesky(&gram).ok_or(Error::Numerical { context: CONTEXT })?;

    if let Some(warm) = &problem.warm_start {
        if warm.dim() != (r, n) {
            return Err(Error::DimensionMismatch {
                context: CONTEXT,
                expected: format!("warm start of shape ({r}, {n})"),
                got: format!("{:?}", warm.dim()),
            });
        }
        validate_nonneg(&warm.view())?;
    }

    let warm_objective = match &problem.warm_start {
        Some(warm) => Some(problem.objective_at(warm)?),
        None => None,
    };

    let mut h = match &problem.warm_start {
        Some(warm) => warm.clone(),
        None => Array2::zeros((r, n)),
    };
    let mut p = h.clone();
    let mut q = Array2::<f64>::zeros((r, n));
    let mut rbuf = &x_st - &w_st.dot(&h);
    let mut z = rbuf.clone();
    let mut u = Array2::<f64>::zeros((m, n));
    let mut cbuf = Array2::<f64>::zeros((m, n));
    let mut wt_scratch = Array2::<f64>::zeros((r, n));
    let mut z_prev = Array2::<f64>::zeros((m, n));
    let mut p_prev = Array2::<f64>::zeros((r, n));

    let a: Vec<f64> = problem.norms.clone();
    let b: Vec<f64> = problem.baselines.clone();
    let mut sv = vec![0.0; l];
    for g in 0..l {
        let zn = z
            .slice(s![ranges[g].clone(), ..])
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        sv[g] = (zn - b[g]) / a[g];
    }
    let mut t: f64;
    let mut s_prev = sv.clone();
    let mut vv = vec![0.0; l];

    let mut rho = problem.rho.clamp(RHO_MIN, RHO_MAX);
    let eps_rel = problem.solver_tol;
    let eps_abs = problem.solver_tol * 0.1;
    let dim_con = ((m * n + l + r * n) as f64).sqrt();
    let dim_x = ((r * n + 1) as f64).sqrt();
    let x_norm = x_st.iter().map(|v| v * v).sum::<f64>().sqrt();

    let mut iterations = 0;
    let mut converged_flag = false;
    let mut best_obj = f64::INFINITY;
    let mut best_p = p.clone();
    let mut stagnant_checks = 0;

    for iter in 1..=problem.max_inner_iters {
        iterations = iter;
        let check = iter % CHECK_EVERY == 0 || iter == problem.max_inner_iters;
        if check {
            z_prev.assign(&z);
            p_prev.assign(&p);
            s_prev.copy_from_slice(&sv);
        }

        // x-step: t and H jointly (they are decoupled).
        let sum_sv: f64 = sv.iter().zip(&vv).map(|(s, v)| s - v).sum();
        t = (sum_sv - 1.0 / rho) / l as f64;

        Zip::from(&mut cbuf)
            .and(&x_st)
            .and(&z)
            .and(&u)
            .for_each(|c, &x, &z, &u| *c = x - z + u);
        Zip::from(&mut h)
            .and(&p)
            .and(&q)
            .for_each(|h, &p, &q| *h = p - q);
        general_mat_mul(1.0, &w_st.t(), &cbuf, 1.0, &mut h);
        chol_solve_columns(&gl, &mut h);

        rbuf.assign(&x_st);
        general_mat_mul(-1.0, &w_st, &h, 1.0, &mut rbuf);

        // z-step: clamp for P, cone projections for (Z_g, s_g).
        Zip::from(&mut p)
            .and(&h)
            .and(&q)
            .for_each(|p, &h, &q| *p = (h + q).max(0.0));
        for g in 0..l {
            let mut zg = z.slice_mut(s![ranges[g].clone(), ..]);
            Zip::from(&mut zg)
                .and(&rbuf.slice(s![ranges[g].clone(), ..]))
                .and(&u.slice(s![ranges[g].clone(), ..]))
                .for_each(|z, &r, &u| *z = r + u);
            sv[g] = project_cone(zg, t + vv[g], a[g], b[g]);
        }

        // Scaled dual ascent.
        Zip::from(&mut u)
            .and(&rbuf)
            .and(&z)
            .for_each(|u, &r, &z| *u += r - z);
        for g in 0..l {
            vv[g] += t - sv[g];
        }
        Zip::from(&mut q)
            .and(&h)
            .and(&p)
            .for_each(|q, &h, &p| *q += h - p);

        if !check {
            continue;
        }

        let mut pri2 = 0.0;
        Zip::from(&rbuf)
            .and(&z)
            .for_each(|&r, &z| pri2 += (r - z) * (r - z));
        for &s in &sv {
            pri2 += (t - s) * (t - s);
        }
        Zip::from(&h)
            .and(&p)
            .for_each(|&h, &p| pri2 += (h - p) * (h - p));
        let pri = pri2.sqrt();

        Zip::from(&mut cbuf)
            .and(&z)
            .and(&z_prev)
            .for_each(|c, &z, &zp| *c = z - zp);
        general_mat_mul(1.0, &w_st.t(), &cbuf, 0.0, &mut wt_scratch);
        let mut dua2 = 0.0;
        Zip::from(&wt_scratch)
            .and(&p)
            .and(&p_prev)
            .for_each(|&wz, &p, &pp| {
                let d = wz - (p - pp);
                dua2 += d * d;
            });
        let ds: f64 = sv.iter().zip(&s_prev).map(|(s, sp)| s - sp).sum();
        let dua = rho * (dua2 + ds * ds).sqrt();

        let mut ax2 = t * t * l as f64;
        Zip::from(&x_st)
            .and(&rbuf)
            .for_each(|&x, &r| ax2 += (x - r) * (x - r));
        ax2 += h.iter().map(|v| v * v).sum::<f64>();
        let mut bz2 = z.iter().map(|v| v * v).sum::<f64>();
        bz2 += sv.iter().map(|v| v * v).sum::<f64>();
        bz2 += p.iter().map(|v| v * v).sum::<f64>();
        let scale = ax2.sqrt().max(bz2.sqrt()).max(x_norm);
        let eps_pri = dim_con * eps_abs + eps_rel * scale;
        let feas_pri = dim_con * PLATEAU_FEAS_ABS + PLATEAU_FEAS_REL * scale;

        general_mat_mul(1.0, &w_st.t(), &u, 0.0, &mut wt_scratch);
        let mut aty2 = 0.0;
        Zip::from(&q)
            .and(&wt_scratch)
            .for_each(|&q, &wu| aty2 += (q - wu) * (q - wu));
        let sum_v: f64 = vv.iter().sum();
        aty2 += sum_v * sum_v;
        let eps_dua = dim_x * eps_abs + eps_rel * rho * aty2.sqrt();

        // The objective at P is always attainable because P ≥ 0 holds
        // exactly. Keep the best iterate seen and watch for stagnation.
        cbuf.assign(&x_st);
        general_mat_mul(-1.0, &w_st, &p, 1.0, &mut cbuf);
        let mut objective = f64::NEG_INFINITY;
        for g in 0..l {
            let err = cbuf
                .slice(s![ranges[g].clone(), ..])
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            objective = objective.max(relative_loss(err, b[g], a[g])?);
        }
        let progress_tol = problem.solver_tol * best_obj.abs().max(1.0);
        if !best_obj.is_finite() || objective < best_obj - progress_tol {
            stagnant_checks = 0;
        } else {
            stagnant_checks += 1;
        }
        if objective < best_obj {
            best_obj = objective;
            best_p.assign(&p);
        }

        if pri <= eps_pri && dua <= eps_dua {
            converged_flag = true;
            break;
        }
        if iter >= PLATEAU_MIN_ITERS && stagnant_checks >= PLATEAU_CHECKS && pri <= feas_pri {
            converged_flag = true;
            break;
        }

        // Rebalance the penalty when one residual dominates; duals are
        // scaled so the underlying multipliers stay fixed.
        if iter % ADAPT_EVERY == 0 && eps_pri > 0.0 && eps_dua > 0.0 {
            let ratio_pri = pri / eps_pri;
            let ratio_dua = dua / eps_dua;
            let mut scale = 1.0;
            if ratio_pri > 10.0 * ratio_dua && rho * 2.0 <= RHO_MAX {
                scale = 2.0;
            } else if ratio_dua > 10.0 * ratio_pri && rho / 2.0 >= RHO_MIN {
                scale = 0.5;
            }
            if scale != 1.0 {
                rho *= scale;
                u.mapv_inplace(|v| v / scale);
                q.mapv_inplace(|v| v / scale);
                for v in &mut vv {
                    *v /= scale;
                }
            }
        }
    }

    // Report through the public objective so callers can reproduce the value
    // exactly, and prefer the warm start if it is still better.
    let candidate_objective = problem.objective_at(&best_p)?;
    let (h_out, objective) = match (&problem.warm_start, warm_objective) {
        (Some(warm), Some(wo)) if wo < candidate_objective => (warm.clone(), wo),
        _ => (best_p, candidate_objective),
    };
    let solution = HStepSolution {
        h: h_out,
        epigraph_value: objective,
        inner_iterations: iterations,
    };

    if converged_flag {
        Ok(solution)
    } else {
        Err(Error::MinMaxStalled {
            iterations,
            best_objective: solution.epigraph_value,
            best: Box::new(solution),
        })
    }
}

/// Fairness-aware NMF by alternating minimization.
///
/// Each outer iteration solves the convex min-max problem over H exactly
/// (via [`solve_h_minmax`]), then refits W by non-negative least squares.
/// Stops once every group's error is relatively stable, or at the iteration
/// cap. A stalled H-step is retried once with a more conservative solver
/// configuration; a second stall ends the fit early with
/// [`Termination::SolverFailure`] and the best iterates found so far.
pub fn fairer_nmf_am(
    x: &GroupedMatrix,
    baselines: &GroupBaselines,
    options: &FairerOptions,
) -> Result<Fit> {
    options.validate(x.nrows(), x.ncols(), "fairer_nmf_am")?;
    baselines.validate_for(x, options.rank)?;

    let l = x.n_groups();
    let x_blocks: Vec<Array2<f64>> = (0..l).map(|g| x.block(g)).collect::<Result<_>>()?;
    let norms = x.norms().to_vec();
    let e: Vec<f64> = baselines.values.clone();

    let start = Instant::now();
    let mut w = crate::matrix::random_nonneg(
        x.nrows(),
        options.rank,
        crate::matrix::derive_seed(options.seed, &[TAG_W]),
    );
    let mut h: Option<Array2<f64>> = None;
    let mut prev_errors: Option<Vec<f64>> = None;
    let mut trace: Vec<IterationTrace> = Vec::new();
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    let record = |trace: &mut Vec<IterationTrace>,
                  iteration: usize,
                  errors: Vec<f64>,
                  start: &Instant|
     -> Result<Vec<f64>> {
        let losses: Vec<f64> = errors
            .iter()
            .zip(&e)
            .zip(&norms)
            .map(|((&err, &base), &norm)| relative_loss(err, base, norm))
            .collect::<Result<_>>()?;
        let objective = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        trace.push(IterationTrace {
            iteration,
            errors: errors.clone(),
            losses: Some(losses),
            objective: Some(objective),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(errors)
    };

    for outer in 1..=options.max_outer_iters {
        iterations = outer;
        let make_subproblem = |warm: Option<&Array2<f64>>| -> Result<MinMaxSubproblem> {
            let blocks = x_blocks
                .iter()
                .enumerate()
                .map(|(g, xb)| Ok((xb.clone(), x.gather_rows(w.view(), g)?)))
                .collect::<Result<Vec<_>>>()?;
            let mut sub = MinMaxSubproblem::new(blocks, e.clone(), norms.clone())?
                .with_solver_tol(options.solver_tol)
                .with_max_inner_iters(options.max_inner_iters);
            if let Some(warm) = warm {
                sub = sub.with_warm_start(warm.clone());
            }
            Ok(sub)
        };

        let mut stall: Option<String> = None;
        let solution = match solve_h_minmax(&make_subproblem(h.as_ref())?) {
            Ok(sol) => sol,
            Err(Error::MinMaxStalled { best, .. }) => {
                let retry = make_subproblem(Some(&best.h))?
                    .with_max_inner_iters(options.max_inner_iters * RETRY_BUDGET_FACTOR)
                    .with_rho(RETRY_RHO);
                match solve_h_minmax(&retry) {
                    Ok(sol) => sol,
                    Err(Error::MinMaxStalled {
                        best, iterations, ..
                    }) => {
                        stall = Some(format!(
                            "min-max H-step stalled twice at outer iteration {outer} \
                             ({iterations} inner iterations on retry)"
                        ));
                        *best
                    }
                    Err(other) => return Err(other),
                }
            }
            Err(other) => return Err(other),
        };
        let h_cur = solution.h;

        if let Some(message) = stall {
            let errors = x.group_errors(w.view(), h_cur.view())?;
            record(&mut trace, outer, errors, &start)?;
            h = Some(h_cur);
            termination = Termination::SolverFailure(message);
            break;
        }

        // W refit: min ‖X − WH‖ over W ≥ 0 row by row.
        match nnls(h_cur.t(), x.data().t()) {
            Ok(v) => w = v.t().to_owned(),
            Err(err) if outer > 1 => {
                let errors = x.group_errors(w.view(), h_cur.view())?;
                record(&mut trace, outer, errors, &start)?;
                h = Some(h_cur);
                termination = Termination::SolverFailure(format!("W refit failed: {err}"));
                break;
            }
            Err(err) => return Err(err),
        }

        let errors = x.group_errors(w.view(), h_cur.view())?;
        let errors = record(&mut trace, outer, errors, &start)?;
        h = Some(h_cur);

        if let Some(prev) = &prev_errors {
            if converged(prev, &errors, options.rel_tol)? {
                termination = Termination::Converged;
                break;
            }
        }
        prev_errors = Some(errors);
    }

    let h = h.expect("at least one outer iteration ran");
    let factors = FactorPair::new(w, h)?;
    let report = FitReport {
        trace,
        termination,
        iterations,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok(Fit { factors, report })
}
