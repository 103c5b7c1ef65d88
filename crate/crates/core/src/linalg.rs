//! Small dense Cholesky helpers.
//!
//! The normal-equation systems produced by the NNLS and min-max solvers are
//! tiny (the factorization rank, at most a few dozen), so a plain
//! unpivoted Cholesky is all that is needed.

use ndarray::Array2;

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
///
/// Returns `None` when a non-positive pivot shows up, i.e. when the matrix is
/// not numerically positive definite.
pub(crate) fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    debug_assert_eq!(n, a.ncols());
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = b` in place given the lower factor `L`.
pub(crate) fn chol_solve_in_place(l: &Array2<f64>, b: &mut [f64]) {
    let n = l.nrows();
    debug_assert_eq!(n, b.len());
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * b[k];
        }
        b[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[[k, i]] * b[k];
        }
        b[i] = s / l[[i, i]];
    }
}

/// Solves `L Lᵀ X = B` column by column, overwriting `B` with the solution.
pub(crate) fn chol_solve_columns(l: &Array2<f64>, b: &mut Array2<f64>) {
    let mut col = vec![0.0; b.nrows()];
    for j in 0..b.ncols() {
        for (i, c) in col.iter_mut().enumerate() {
            *c = b[[i, j]];
        }
        chol_solve_in_place(l, &mut col);
        for (i, c) in col.iter().enumerate() {
            b[[i, j]] = *c;
        }
    }
}
