use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Pivot ratio below which a Cholesky factor is treated as rank deficient.
const RANK_TOL: f64 = 1e-13;

/// Solves the symmetric positive semi-definite system `lhs * x = rhs`.
///
/// Uses Cholesky when the matrix is well conditioned. A rank-deficient matrix
/// falls back to the minimum-norm solution through an eigendecomposition.
/// A right-hand side with weight on the null space is reported as singular.
pub fn solve_normal_equations(lhs: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if lhs.nrows() != lhs.ncols() || lhs.nrows() != rhs.nrows() {
        return Err(Error::Shape(format!(
            "normal matrix {}x{} with right-hand side {}x{}",
            lhs.nrows(),
            lhs.ncols(),
            rhs.nrows(),
            rhs.ncols()
        )));
    }
    if lhs.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("normal equations contain non-finite values".into()));
    }
    if let Some(chol) = lhs.clone().cholesky() {
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        if hi > 0.0 && (lo / hi).powi(2) > RANK_TOL {
            return Ok(chol.solve(rhs));
        }
    }
    min_norm_solution(lhs, rhs)
}

fn min_norm_solution(lhs: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(lhs.clone());
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if max_ev == 0.0 {
        if rhs.iter().all(|&v| v == 0.0) {
            return Ok(DMatrix::zeros(lhs.ncols(), rhs.ncols()));
        }
        return Err(Error::SingularSystem("normal matrix is zero".into()));
    }
    let cutoff = max_ev * RANK_TOL.sqrt() * lhs.nrows() as f64;
    let null_tol = max_ev * 1e-10;
    let rhs_norm = rhs.norm();
    let projected = eig.eigenvectors.transpose() * rhs;
    let mut scaled = projected;
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        // A Gram system has no right-hand side component along its null space.
        if ev.abs() <= null_tol && scaled.row(i).norm() > 1e-4 * rhs_norm {
            return Err(Error::SingularSystem(format!(
                "rank-deficient system is inconsistent (null-space component {:e})",
                scaled.row(i).norm()
            )));
        }
        let inv = if ev > cutoff { 1.0 / ev } else { 0.0 };
        scaled.row_mut(i).scale_mut(inv);
    }
    let x = &eig.eigenvectors * scaled;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("minimum-norm solution is not finite".into()));
    }
    Ok(x)
}
