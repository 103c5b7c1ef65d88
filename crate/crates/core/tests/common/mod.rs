//! Shared helpers for the integration tests.

use ndarray::Array2;

/// Singular values of a dense matrix by one-sided Jacobi rotations,
/// descending. Independent of the library under test so it can vouch for
/// planted ranks.
pub fn singular_values(a: &Array2<f64>) -> Vec<f64> {
    let mut u = if a.nrows() >= a.ncols() {
        a.clone()
    } else {
        a.t().to_owned()
    };
    let n = u.ncols();
    let tol = 1e-14;
    for _ in 0..60 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for i in 0..u.nrows() {
                    app += u[[i, p]] * u[[i, p]];
                    aqq += u[[i, q]] * u[[i, q]];
                    apq += u[[i, p]] * u[[i, q]];
                }
                if apq.abs() <= tol * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let theta = 0.5 * (2.0 * apq).atan2(app - aqq);
                let (s, c) = theta.sin_cos();
                for i in 0..u.nrows() {
                    let up = u[[i, p]];
                    let uq = u[[i, q]];
                    u[[i, p]] = c * up + s * uq;
                    u[[i, q]] = -s * up + c * uq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..n)
        .map(|j| u.column(j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}
