use ndarray::Array2;
#[allow(unused_imports)]
use num_traits::Float;

/// Solves `A X = B` for square `A` by LU with partial pivoting.
///
/// If `A` is numerically singular the system is re-solved with a ridge
/// `1e-8 * trace(A) / n` added to the diagonal, matching the safety net
/// the kernel-smoothing M-step assumes.
pub(crate) fn solve_with_ridge_fallback(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    debug_assert_eq!(a.nrows(), a.ncols());
    debug_assert_eq!(a.nrows(), b.nrows());
    if let Some(x) = lu_solve(a.clone(), b.clone()) {
        return x;
    }
    let n = a.nrows();
    let trace: f64 = (0..n).map(|i| a[[i, i]]).sum();
    let ridge = 1e-8 * trace / n as f64;
    let mut ar = a.clone();
    for i in 0..n {
        ar[[i, i]] += ridge;
    }
    lu_solve(ar, b.clone()).unwrap_or_else(|| Array2::zeros(b.raw_dim()))
}

fn lu_solve(mut a: Array2<f64>, mut b: Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let m = b.ncols();
    let max_abs = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let tol = 1e-13 * max_abs.max(f64::MIN_POSITIVE) * n as f64;
    for col in 0..n {
        // partial pivot
        let mut pivot_row = col;
        let mut pivot_val = a[[col, col]].abs();
        for r in col + 1..n {
            let v = a[[r, col]].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if !(pivot_val > tol) || !pivot_val.is_finite() {
            return None;
        }
        if pivot_row != col {
            for c in 0..n {
                a.swap([col, c], [pivot_row, c]);
            }
            for c in 0..m {
                b.swap([col, c], [pivot_row, c]);
            }
        }
        let inv_p = 1.0 / a[[col, col]];
        for r in col + 1..n {
            let factor = a[[r, col]] * inv_p;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                a[[r, c]] -= factor * a[[col, c]];
            }
            for c in 0..m {
                b[[r, c]] -= factor * b[[col, c]];
            }
        }
    }
    // back substitution
    for col in (0..n).rev() {
        let inv_p = 1.0 / a[[col, col]];
        for c in 0..m {
            let mut acc = b[[col, c]];
            for k in col + 1..n {
                acc -= a[[col, k]] * b[[k, c]];
            }
            b[[col, c]] = acc * inv_p;
        }
    }
    Some(b)
}
