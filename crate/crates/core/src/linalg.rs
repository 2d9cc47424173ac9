//! Dense linear-algebra helpers shared by the filter: covariance hygiene,
//! SPD solves and finite-difference Jacobians.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{dim_err, FilterError, Result};
use crate::scalar::Scalar;

/// Symmetry tolerance enforced on every covariance the filter emits.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Smallest eigenvalue allowed relative to the largest before repair kicks in.
pub const PSD_REL_TOL: f64 = 1e-8;
/// Relative diagonal jitter used when a factorization fails.
pub const JITTER: f64 = 1e-10;
/// Condition-number ceiling for innovation covariances.
pub const MAX_CONDITION: f64 = 1e12;

pub fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

pub fn max_abs<T: Scalar>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
}

pub fn all_finite<T: Scalar>(m: &DMatrix<T>) -> bool {
    m.iter().all(|v| v.is_finite_value())
}

/// Extreme eigenvalues of a symmetric matrix, `(min, max)`.
pub fn eigen_range<T: Scalar>(m: &DMatrix<T>) -> (T, T) {
    if m.nrows() == 0 {
        return (T::zero(), T::zero());
    }
    let eig = m.clone().symmetric_eigenvalues();
    let lo = eig.iter().fold(T::infinity(), |a, &v| a.min(v));
    let hi = eig.iter().fold(-T::infinity(), |a, &v| a.max(v));
    (lo, hi)
}

/// Whether the symmetric matrix satisfies `λ_min ≥ −1e-8·λ_max`.
pub fn is_psd<T: Scalar>(m: &DMatrix<T>) -> bool {
    let (lo, hi) = eigen_range(m);
    lo >= -T::lit(PSD_REL_TOL) * hi.max(T::zero())
}

/// Symmetrizes `m`, and clips negative eigenvalues to zero only when the
/// PSD invariant is violated.
pub fn repair_covariance<T: Scalar>(m: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !m.is_square() {
        return Err(dim_err(format!("expected square matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    if !all_finite(m) {
        return Err(FilterError::InvalidMatrix);
    }
    let sym = symmetrize(m);
    if is_psd(&sym) {
        return Ok(sym);
    }
    let eig = sym.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.iter().fold(T::infinity(), |a, &v| a.min(v));
    log::warn!("covariance repair: clipping eigenvalues (min eigenvalue {min_eig:e})");
    let clipped = eig.eigenvalues.map(|v| v.max(T::zero()));
    let repaired = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    Ok(symmetrize(&repaired))
}

/// Cholesky factor of an SPD matrix, retrying once with a relative diagonal
/// jitter of [`JITTER`] when the plain factorization fails.
pub fn spd_factor<T: Scalar>(m: &DMatrix<T>) -> Option<Cholesky<T, Dyn>> {
    if let Some(chol) = m.clone().cholesky() {
        return Some(chol);
    }
    let scale = m.diagonal().iter().fold(T::zero(), |a, v| a.max(v.abs()));
    let scale = if scale > T::zero() { scale } else { T::one() };
    let jitter = DMatrix::<T>::identity(m.nrows(), m.ncols()) * (T::lit(JITTER) * scale);
    (m + jitter).cholesky()
}

/// Condition estimate of an SPD matrix from its Cholesky diagonal.
pub fn cholesky_condition<T: Scalar>(chol: &Cholesky<T, Dyn>) -> T {
    let l = chol.l_dirty();
    let n = l.nrows();
    if n == 0 {
        return T::one();
    }
    let mut lo = T::infinity();
    let mut hi = T::zero();
    for i in 0..n {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo <= T::zero() {
        return T::infinity();
    }
    let r = hi / lo;
    r * r
}

/// Solves `A X = B` for SPD `A` without forming an inverse.
pub fn spd_solve<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> Option<DMatrix<T>> {
    spd_factor(a).map(|chol| chol.solve(b))
}

/// Central-difference Jacobian of `g` at `x`, using the per-component step
/// `h_rel·max(|x_i|, 1)`.
pub fn finite_difference_jacobian<T, G>(mut g: G, x: &DVector<T>, h_rel: T) -> Result<DMatrix<T>>
where
    T: Scalar,
    G: FnMut(&DVector<T>) -> Result<DVector<T>>,
{
    if h_rel <= T::zero() {
        return Err(FilterError::Config("finite-difference step must be positive".into()));
    }
    let n = x.len();
    let mut jac: Option<DMatrix<T>> = None;
    let mut xp = x.clone();
    for i in 0..n {
        let h = h_rel * x[i].abs().max(T::one());
        xp[i] = x[i] + h;
        let up = g(&xp)?;
        xp[i] = x[i] - h;
        let down = g(&xp)?;
        xp[i] = x[i];
        if !up.iter().chain(down.iter()).all(|v| v.is_finite_value()) {
            return Err(FilterError::InvalidMatrix);
        }
        let jac = jac.get_or_insert_with(|| DMatrix::zeros(up.len(), n));
        let col = (up - down) / (h + h);
        jac.set_column(i, &col);
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}

/// Block-diagonal matrix built from `a` (top-left) and `b` (bottom-right).
pub fn block_diag<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let n = a.nrows() + b.nrows();
    let m = a.ncols() + b.ncols();
    let mut out = DMatrix::zeros(n, m);
    out.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), (b.nrows(), b.ncols())).copy_from(b);
    out
}

/// Principal submatrix on `idx`.
pub fn principal<T: Scalar>(m: &DMatrix<T>, idx: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

pub fn select_rows<T: Scalar>(m: &DMatrix<T>, idx: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

pub fn select<T: Scalar>(v: &DVector<T>, idx: &[usize]) -> DVector<T> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn repair_leaves_valid_input_alone() {
        let m = dmatrix![2.0, 0.3; 0.3, 1.0];
        let r = repair_covariance(&m).unwrap();
        assert!((r - m).amax() < 1e-14);
    }

    #[test]
    fn repair_symmetrizes() {
        let m = dmatrix![1.0, 2.0; 0.0, 1.0];
        let r = repair_covariance(&m).unwrap();
        assert!((r - dmatrix![1.0, 1.0; 1.0, 1.0]).amax() < 1e-14);
    }

    #[test]
    fn repair_clips_negative_eigenvalues() {
        let m = dmatrix![1.0, 0.0; 0.0, -1e-6];
        let r = repair_covariance(&m).unwrap();
        assert!((r - dmatrix![1.0, 0.0; 0.0, 0.0]).amax() < 1e-14);
    }

    #[test]
    fn repair_rejects_nan() {
        let m = dmatrix![1.0, f64::NAN; 0.0, 1.0];
        assert_eq!(repair_covariance(&m), Err(FilterError::InvalidMatrix));
    }

    #[test]
    fn fd_jacobian_of_linear_map() {
        let a = dmatrix![1.0, -2.0, 0.5; 3.0, 0.25, -1.0];
        let x = DVector::from_vec(vec![0.3, -1.7, 4.0]);
        let j = finite_difference_jacobian(|v: &DVector<f64>| Ok(&a * v), &x, 1e-6).unwrap();
        assert!((j - a).amax() < 1e-8);
    }

    #[test]
    fn fd_jacobian_of_identity() {
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let j = finite_difference_jacobian(|v: &DVector<f64>| Ok(v.clone()), &x, 1e-6).unwrap();
        assert!((j - DMatrix::identity(2, 2)).amax() < 1e-9);
    }

    #[test]
    fn fd_jacobian_propagates_non_finite() {
        let x = DVector::from_vec(vec![0.0]);
        let r = finite_difference_jacobian(|v: &DVector<f64>| Ok(v.map(|t| 1.0 / (t * 0.0))), &x, 1e-6);
        assert!(r.is_err());
    }

    #[test]
    fn jitter_rescues_singular_psd() {
        let m = dmatrix![1.0, 1.0; 1.0, 1.0];
        assert!(m.clone().cholesky().is_none());
        assert!(spd_factor(&m).is_some());
    }
}
