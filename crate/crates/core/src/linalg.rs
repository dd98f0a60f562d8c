//! Small complex linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::SolverError;

pub type CMat = DMatrix<Complex64>;

pub const J: Complex64 = Complex64::new(0.0, 1.0);

/// `exp(j·phase)`.
#[inline]
pub fn cis(phase: f64) -> Complex64 {
    Complex64::from_polar(1.0, phase)
}

pub fn fro_norm_sqr(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

/// Wraps a phase into (-π, π].
pub fn wrap_phase(x: f64) -> f64 {
    use std::f64::consts::PI;
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// Least-squares solution of `a · x = b` through a thin QR factorization.
///
/// `a` must have at least as many rows as columns and full column rank.
pub fn least_squares(a: &CMat, b: &CMat) -> Result<CMat, SolverError> {
    let (m, n) = a.shape();
    if n == 0 {
        return Ok(CMat::zeros(0, b.ncols()));
    }
    if m < n {
        return Err(SolverError::Numerical(format!(
            "underdetermined least squares ({m} rows, {n} columns)"
        )));
    }
    let qr = a.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let scale = (0..n).map(|i| r[(i, i)].norm()).fold(0.0, f64::max);
    if (0..n).any(|i| r[(i, i)].norm() <= 1e-12 * scale.max(f64::MIN_POSITIVE)) {
        return Err(SolverError::Numerical("rank-deficient support".into()));
    }
    let rhs = q.adjoint() * b;
    r.solve_upper_triangular(&rhs)
        .ok_or_else(|| SolverError::Numerical("triangular solve failed".into()))
}

/// Columns of `a` listed in `cols`, in order.
pub fn select_columns(a: &CMat, cols: &[usize]) -> CMat {
    CMat::from_fn(a.nrows(), cols.len(), |i, j| a[(i, cols[j])])
}
