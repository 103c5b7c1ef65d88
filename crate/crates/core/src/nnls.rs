//! Non-negative least squares by the Lawson–Hanson active-set method.
//!
//! Solves `min ‖B − AV‖_F` over `V ≥ 0` one column at a time on the normal
//! equations. The Gram matrix `AᵀA` is formed once and shared across
//! columns, which is what makes the per-row factor updates cheap: those
//! solves all share one small design matrix.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::{chol_solve_in_place, cholesky};

/// Default bound on the KKT residuals of a returned solution.
pub const DEFAULT_KKT_TOL: f64 = 1e-6;

/// Solves `min ‖B − AV‖_F` over `V ≥ 0` with the default KKT tolerance.
pub fn nnls(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    nnls_with_tol(a, b, DEFAULT_KKT_TOL)
}

/// Solves `min ‖B − AV‖_F` over `V ≥ 0`.
///
/// The result satisfies the KKT conditions of the problem to `kkt_tol`: with
/// `G = Aᵀ(AV − B)`, entries of `G` where `V` is zero are ≥ `-kkt_tol` and
/// entries where `V` is positive are ≤ `kkt_tol` in magnitude.
pub fn nnls_with_tol(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    kkt_tol: f64,
) -> Result<Array2<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMatrix { context: "nnls" });
    }
    if b.nrows() != a.nrows() {
        return Err(Error::DimensionMismatch {
            context: "nnls",
            expected: format!("B with {} rows", a.nrows()),
            got: format!("{}", b.nrows()),
        });
    }
    if !(kkt_tol.is_finite() && kkt_tol > 0.0) {
        return Err(Error::InvalidValue {
            context: "nnls kkt_tol",
            index: 0,
            value: kkt_tol,
        });
    }
    for (col, column) in a.columns().into_iter().enumerate() {
        if column.iter().all(|&v| v == 0.0) {
            return Err(Error::ZeroDesignColumn { col });
        }
    }

    let gram = a.t().dot(&a);
    let atb = a.t().dot(&b);
    let r = a.ncols();
    let mut v = Array2::<f64>::zeros((r, b.ncols()));
    let mut rhs = vec![0.0; r];
    for j in 0..b.ncols() {
        for (i, slot) in rhs.iter_mut().enumerate() {
            *slot = atb[[i, j]];
        }
        let x = solve_column(&gram, &rhs, kkt_tol)?;
        for (i, value) in x.into_iter().enumerate() {
            v[[i, j]] = value;
        }
    }
    Ok(v)
}

/// Lawson–Hanson on one right-hand side of the normal equations.
fn solve_column(gram: &Array2<f64>, atb: &[f64], kkt_tol: f64) -> Result<Vec<f64>> {
    let r = atb.len();
    let mut x = vec![0.0; r];
    let mut passive = vec![false; r];
    let mut banned = vec![false; r];
    let mut w: Vec<f64> = atb.to_vec();

    // Generous bound; the active set changes at most a handful of times per
    // column in practice.
    let max_pivots = 30 * r + 100;
    for _ in 0..max_pivots {
        let entering = (0..r)
            .filter(|&i| !passive[i] && !banned[i] && w[i] > kkt_tol)
            .max_by(|&i, &j| w[i].partial_cmp(&w[j]).unwrap());
        let Some(entering) = entering else {
            return Ok(x);
        };
        passive[entering] = true;

        loop {
            let idx: Vec<usize> = (0..r).filter(|&i| passive[i]).collect();
            let Some(z) = restricted_solve(gram, atb, &idx) else {
                // The entering column is numerically dependent on the current
                // passive set; leave it out for good.
                passive[entering] = false;
                banned[entering] = true;
                break;
            };
            if z.iter().all(|&zi| zi > 0.0) {
                x.fill(0.0);
                for (&i, &zi) in idx.iter().zip(&z) {
                    x[i] = zi;
                }
                break;
            }
            // Step toward z until the first passive variable hits zero.
            let mut alpha = f64::INFINITY;
            for (&i, &zi) in idx.iter().zip(&z) {
                if zi <= 0.0 {
                    let denom = x[i] - zi;
                    let ratio = if denom > 0.0 { x[i] / denom } else { 0.0 };
                    alpha = alpha.min(ratio);
                }
            }
            if alpha <= 0.0 {
                // Degenerate zero-length step straight after entering: the
                // variable cannot improve the fit, so ban it instead of
                // cycling.
                passive[entering] = false;
                banned[entering] = true;
                if x[entering] != 0.0 {
                    x[entering] = 0.0;
                }
                break;
            }
            for (&i, &zi) in idx.iter().zip(&z) {
                x[i] += alpha * (zi - x[i]);
            }
            for &i in &idx {
                if x[i] <= f64::EPSILON * atb[i].abs().max(1.0) {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }

        for i in 0..r {
            let mut g = atb[i];
            for k in 0..r {
                g -= gram[[i, k]] * x[k];
            }
            w[i] = g;
        }
    }
    Err(Error::Numerical {
        context: "nnls active-set iteration limit",
    })
}

fn restricted_solve(gram: &Array2<f64>, atb: &[f64], idx: &[usize]) -> Option<Vec<f64>> {
    let k = idx.len();
    let mut sub = Array2::<f64>::zeros((k, k));
    let mut rhs = vec![0.0; k];
    for (a, &i) in idx.iter().enumerate() {
        rhs[a] = atb[i];
        for (b, &j) in idx.iter().enumerate() {
            sub[[a, b]] = gram[[i, j]];
        }
    }
    let l = cholesky(&sub)?;
    chol_solve_in_place(&l, &mut rhs);
    Some(rhs)
}

/// Worst KKT residuals of a candidate solution, split by active set.
///
/// `zero_set` is the worst violation of `G ≥ 0` over entries where `V` is
/// zero; `positive_set` is the largest `|G|` over entries where `V` is
/// positive. Both should be at most the solver tolerance.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    pub zero_set: f64,
    pub positive_set: f64,
}

pub fn kkt_residuals(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
) -> Result<KktResiduals> {
    if v.nrows() != a.ncols() || v.ncols() != b.ncols() || a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            context: "kkt_residuals",
            expected: format!("V {}×{}", a.ncols(), b.ncols()),
            got: format!("V {}×{}", v.nrows(), v.ncols()),
        });
    }
    let g = a.t().dot(&(a.dot(&v) - b));
    let mut zero_set = 0.0f64;
    let mut positive_set = 0.0f64;
    for (idx, &value) in v.indexed_iter() {
        if value > 0.0 {
            positive_set = positive_set.max(g[idx].abs());
        } else {
            zero_set = zero_set.max(-g[idx]);
        }
    }
    Ok(KktResiduals {
        zero_set,
        positive_set,
    })
}
