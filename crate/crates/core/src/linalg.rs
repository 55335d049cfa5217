//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

/// Solve `a x = b` for symmetric positive (semi-)definite `a`.
///
/// Tries a plain Cholesky factorization first; on failure retries with
/// `ridge` added to the diagonal. The returned flag is `true` when the ridge
/// path was taken.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Option<(DVector<f64>, bool)> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) && !ill_conditioned(a) {
            return Some((x, false));
        }
    }
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
    let damped = a + DMatrix::identity(n, n) * (ridge * scale);
    let ch = damped.cholesky()?;
    let x = ch.solve(b);
    x.iter().all(|v| v.is_finite()).then_some((x, true))
}

/// Inverse of a symmetric positive definite matrix, `None` if singular.
pub fn inverse_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let ch = a.clone().cholesky()?;
    let inv = ch.inverse();
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}

fn ill_conditioned(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    if n == 0 {
        return false;
    }
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    max <= 0.0 || min <= max * 1e-13
}

/// Indices of columns that are linearly independent of the columns kept
/// before them (modified Gram-Schmidt in column order).
pub fn independent_columns(x: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j).into_owned();
        let norm0 = col.norm();
        if norm0 == 0.0 {
            continue;
        }
        let mut r = col;
        for q in &basis {
            let proj = q.dot(&r);
            r -= q * proj;
        }
        let nr = r.norm();
        if nr > tol * norm0 {
            basis.push(r / nr);
            kept.push(j);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_simple_system() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_row_slice(&[1.0, 2.0]);
        let (x, ridged) = solve_spd(&a, &b, 1e-8).unwrap();
        assert!(!ridged);
        assert!((a * x - b).norm() < 1e-12);
    }

    #[test]
    fn singular_system_takes_ridge_path() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_row_slice(&[2.0, 2.0]);
        let (x, ridged) = solve_spd(&a, &b, 1e-8).unwrap();
        assert!(ridged);
        assert!((x[0] + x[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn detects_collinear_columns() {
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, 1.0, 2.0, 1.0, 1.0, 2.0, 0.0]);
        assert_eq!(independent_columns(&x, 1e-9), vec![0, 2]);
    }
}
