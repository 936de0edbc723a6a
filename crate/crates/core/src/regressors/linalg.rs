use ndarray::Array2;

/// Solves `A X = B` in place for symmetric positive-definite `A` via
/// Cholesky. On return `b` holds `X`. Returns `None` if `A` is not
/// numerically positive definite.
pub(crate) fn cholesky_solve(mut a: Array2<f64>, b: &mut Array2<f64>) -> Option<()> {
    let n = a.nrows();
    debug_assert_eq!(a.ncols(), n);
    debug_assert_eq!(b.nrows(), n);
    // Lower factor overwrites the lower triangle of `a`.
    for j in 0..n {
        let mut diag = a[(j, j)];
        for k in 0..j {
            diag -= a[(j, k)] * a[(j, k)];
        }
        if !(diag > 0.0) {
            return None;
        }
        let diag = diag.sqrt();
        a[(j, j)] = diag;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= a[(i, k)] * a[(j, k)];
            }
            a[(i, j)] = s / diag;
        }
    }
    let m = b.ncols();
    for c in 0..m {
        // Forward: L y = b.
        for i in 0..n {
            let mut s = b[(i, c)];
            for k in 0..i {
                s -= a[(i, k)] * b[(k, c)];
            }
            b[(i, c)] = s / a[(i, i)];
        }
        // Backward: Lᵀ x = y.
        for i in (0..n).rev() {
            let mut s = b[(i, c)];
            for k in (i + 1)..n {
                s -= a[(k, i)] * b[(k, c)];
            }
            b[(i, c)] = s / a[(i, i)];
        }
    }
    Some(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn solves_small_spd_system() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let x = array![[1.0, -2.0], [0.5, 0.0], [-1.0, 3.0]];
        let mut b = a.dot(&x);
        cholesky_solve(a, &mut b).unwrap();
        for (got, want) in b.iter().zip(x.iter()) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_singular() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let mut b = array![[1.0], [1.0]];
        assert!(cholesky_solve(a, &mut b).is_none());
    }
}
