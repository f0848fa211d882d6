//! Thomas algorithm for tridiagonal systems.

/// Solve `A x = rhs` where `A` has sub-diagonal `lower`, diagonal `diag` and
/// super-diagonal `upper` (`lower.len() == upper.len() == diag.len() - 1`).
///
/// Returns `None` if a pivot vanishes. All systems assembled in this crate
/// are strictly diagonally dominant, so elimination without pivoting is
/// stable.
pub fn solve(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    debug_assert_eq!(lower.len(), n - 1);
    debug_assert_eq!(upper.len(), n - 1);
    debug_assert_eq!(rhs.len(), n);

    let mut c = vec![0.0; n - 1]; // modified super-diagonal
    let mut d = vec![0.0; n]; // modified rhs

    if diag[0] == 0.0 {
        return None;
    }
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - lower[i - 1] * c[i - 1];
        if denom == 0.0 {
            return None;
        }
        if i < n - 1 {
            c[i] = upper[i] / denom;
        }
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / denom;
    }

    let mut x = d;
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Some(x)
}

/// Residual `A x - rhs`, for plugging a solution back into the system.
pub fn residual(lower: &[f64], diag: &[f64], upper: &[f64], x: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut r = vec![0.0; n];
    for i in 0..n {
        let mut ax = diag[i] * x[i];
        if i > 0 {
            ax += lower[i - 1] * x[i - 1];
        }
        if i < n - 1 {
            ax += upper[i] * x[i + 1];
        }
        r[i] = ax - rhs[i];
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_diagonally_dominant_system() {
        let n = 57;
        let lower = vec![-1.0; n - 1];
        let diag = vec![4.0; n];
        let upper = vec![-1.5; n - 1];
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = solve(&lower, &diag, &upper, &rhs).unwrap();
        let r = residual(&lower, &diag, &upper, &x, &rhs);
        let rmax = r.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(rmax < 1e-13, "residual {rmax}");
    }

    #[test]
    fn rejects_singular_pivot() {
        assert!(solve(&[1.0], &[0.0, 1.0], &[1.0], &[1.0, 1.0]).is_none());
    }
}
