//! Small dense helpers shared by the estimators and the MSE engine.

use nalgebra::DMatrix;

use crate::error::{DfmError, Result};

/// Reciprocal condition floor below which an SPD solve is treated as singular.
const RCOND_FLOOR: f64 = 1e-14;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

pub fn is_symmetric(m: &DMatrix<f64>, rel_tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    let n = m.nrows();
    (0..n).all(|i| (i + 1..n).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= rel_tol * scale))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 1 {
        return m[(0, 0)];
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// PSD up to `-1e-10 * trace`.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    let tol = 1e-10 * m.trace().abs().max(f64::MIN_POSITIVE);
    min_eigenvalue(m) >= -tol
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or(DfmError::SingularNormalEquations { what })?;
    let l = chol.l_dirty();
    let diag = l.diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if !(lo > 0.0) || (lo / hi).powi(2) < RCOND_FLOOR {
        return Err(DfmError::SingularNormalEquations { what });
    }
    Ok(symmetrized(chol.inverse()))
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_inverse_of_2x2() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let inv = spd_inverse(&m, "test").unwrap();
        let id = &m * &inv;
        assert!((id - DMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn spd_inverse_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            spd_inverse(&m, "x"),
            Err(DfmError::SingularNormalEquations { what: "x" })
        ));
    }

    #[test]
    fn psd_tolerance_is_trace_relative() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-12]);
        assert!(is_psd(&m));
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-6]);
        assert!(!is_psd(&m));
    }
}
