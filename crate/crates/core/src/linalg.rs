//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::num::Real;

/// Eigenvalues below this absolute floor are treated as zero by [`pseudo_inverse`].
pub const PINV_ABS_FLOOR: f64 = 1e-12;

pub fn symmetrize<T: Real>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = T::lit(0.5);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn is_symmetric<T: Real>(m: &DMatrix<T>, rel_tol: T) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.iter().fold(T::one(), |acc, v| acc.max(v.abs()));
    let n = m.nrows();
    (0..n).all(|j| (j + 1..n).all(|i| (m[(i, j)] - m[(j, i)]).abs() <= rel_tol * scale))
}

/// Eigendecomposition-based pseudo-inverse of a symmetric matrix.
///
/// Eigenvalues at or below `max(tol * lambda_max, 1e-12)` map to zero, so the
/// zero matrix maps to itself.
pub fn pseudo_inverse<T: Real>(p: &DMatrix<T>, tol: T) -> DMatrix<T> {
    let n = p.nrows();
    let floor = T::lit(PINV_ABS_FLOOR);
    if n == 1 {
        let v = p[(0, 0)];
        let cutoff = (tol * v.abs()).max(floor);
        return DMatrix::from_element(1, 1, if v > cutoff { v.recip() } else { T::zero() });
    }
    let eig = SymmetricEigen::new(p.clone());
    let lambda_max = eig.eigenvalues.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let cutoff = (tol * lambda_max).max(floor);
    let inv = eig
        .eigenvalues
        .map(|l| if l > cutoff { l.recip() } else { T::zero() });
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&inv) * q.transpose();
    symmetrize(&mut out);
    out
}

/// Square root of a symmetric positive semi-definite matrix.
pub fn sqrt_psd<T: Real>(m: &DMatrix<T>, context: &'static str) -> Result<DMatrix<T>> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let scale = eig.eigenvalues.iter().fold(T::one(), |acc, v| acc.max(v.abs()));
    let mut roots = DVector::zeros(n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l < -T::lit(1e-10) * scale {
            return Err(Error::Parameter(format!(
                "{context} is not positive semi-definite (eigenvalue {})",
                l.to_f64_lossy()
            )));
        }
        roots[k] = l.max(T::zero()).sqrt();
    }
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&roots) * q.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// Floors the eigenvalues of a symmetric matrix at zero.
///
/// Returns the floored matrix and the most negative eigenvalue that was clipped
/// (zero when nothing was clipped).
pub fn floor_eigenvalues<T: Real>(m: &DMatrix<T>) -> (DMatrix<T>, T) {
    if m.nrows() == 1 {
        let v = m[(0, 0)];
        return if v < T::zero() {
            (DMatrix::zeros(1, 1), v)
        } else {
            (m.clone(), T::zero())
        };
    }
    if m.clone().cholesky().is_some() {
        return (m.clone(), T::zero());
    }
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.iter().fold(T::zero(), |acc, &v| acc.min(v));
    if min >= T::zero() {
        return (m.clone(), T::zero());
    }
    let clipped = eig.eigenvalues.map(|l| l.max(T::zero()));
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    symmetrize(&mut out);
    (out, min)
}

pub fn min_singular_value<T: Real>(m: &DMatrix<T>) -> T {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(T::max_value().unwrap_or_else(|| T::lit(f64::MAX)), |acc, &v| acc.min(v))
}

pub fn inverse<T: Real>(m: &DMatrix<T>, what: &str) -> Result<DMatrix<T>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::Parameter(format!("{what} is not invertible")))
}

pub fn frobenius<T: Real>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()
}

/// `out = a * x` with a fixed, column-major accumulation order.
#[inline]
pub fn gemv_into<T: Real>(out: &mut [T], a: &DMatrix<T>, x: &[T]) {
    let rows = a.nrows();
    debug_assert_eq!(out.len(), rows);
    debug_assert_eq!(x.len(), a.ncols());
    let data = a.as_slice();
    out.fill(T::zero());
    for (c, &xc) in x.iter().enumerate() {
        let col = &data[c * rows..(c + 1) * rows];
        for (o, &v) in out.iter_mut().zip(col) {
            *o += v * xc;
        }
    }
}

/// `out += alpha * a * x`.
#[inline]
pub fn gemv_acc<T: Real>(out: &mut [T], a: &DMatrix<T>, x: &[T], alpha: T) {
    let rows = a.nrows();
    debug_assert_eq!(out.len(), rows);
    debug_assert_eq!(x.len(), a.ncols());
    let data = a.as_slice();
    for (c, &xc) in x.iter().enumerate() {
        let s = alpha * xc;
        let col = &data[c * rows..(c + 1) * rows];
        for (o, &v) in out.iter_mut().zip(col) {
            *o += v * s;
        }
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}
