//! Small dense helpers shared by reconstruction and precoding.

use std::f64::consts::PI;

use nalgebra::{Cholesky, Dyn, SymmetricEigen};

use crate::{CMatrix, CVector, Complex64, Error, Result};

/// Wraps an angle into `[-π, π)`.
pub fn wrap_to_pi(angle: f64) -> f64 {
    let w = (angle + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_to_2pi(angle: f64) -> f64 {
    let w = angle.rem_euclid(2.0 * PI);
    if w >= 2.0 * PI {
        0.0
    } else {
        w
    }
}

/// `v vᴴ`
pub fn outer(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

/// `xᴴ M x`, real part only (M Hermitian).
pub fn quad_form(m: &CMatrix, x: &CVector) -> f64 {
    x.dotc(&(m * x)).re
}

pub fn norm_sqr(v: &CVector) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Ratio of extreme eigenvalues of a Hermitian matrix. Used only for error
/// reporting, so the O(n³) cost is irrelevant.
pub fn condition_estimate(m: &CMatrix) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Factorizes a Hermitian positive-definite matrix, reporting the condition
/// estimate when the factorization breaks down.
pub fn cholesky(m: CMatrix) -> Result<Cholesky<Complex64, Dyn>> {
    match Cholesky::new(m.clone()) {
        Some(c) => Ok(c),
        None => Err(Error::IllConditioned { condition: condition_estimate(&m) }),
    }
}

/// Eigenvector of the largest eigenvalue of a Hermitian matrix, unit norm.
pub fn principal_eigenvector(m: &CMatrix) -> CVector {
    let eig = SymmetricEigen::new(m.clone());
    let (idx, _) =
        eig.eigenvalues.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            },
        );
    let v = eig.eigenvectors.column(idx).into_owned();
    let n = v.norm();
    v / Complex64::new(n, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_ranges() {
        assert_eq!(wrap_to_pi(0.0), 0.0);
        assert!((wrap_to_pi(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
        assert!((wrap_to_pi(PI) + PI).abs() < 1e-15);
        assert!((wrap_to_2pi(-PI / 2.0) - 3.0 * PI / 2.0).abs() < 1e-15);
        assert!(wrap_to_2pi(-1e-300) < 2.0 * PI);
        assert!(wrap_to_pi(-1e-300) < PI);
    }

    #[test]
    fn principal_eigenvector_of_rank_one() {
        let v = CVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0), Complex64::new(-1.0, 0.0)]);
        let u = principal_eigenvector(&outer(&v));
        let corr = u.dotc(&v).norm() / v.norm();
        assert!((corr - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_reports_condition() {
        let m = CMatrix::zeros(3, 3);
        match cholesky(m) {
            Err(Error::IllConditioned { condition }) => assert!(condition.is_infinite()),
            other => panic!("expected failure, got {:?}", other.map(|_| ())),
        }
    }
}
