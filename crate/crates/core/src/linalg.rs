//! Small dense-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub(crate) fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub(crate) fn l1_norm(v: &DVector<f64>) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Principal submatrix `a[idx, idx]`.
pub(crate) fn principal_submatrix(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| a[(idx[r], idx[c])])
}

pub(crate) fn subvector(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub(crate) fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    if a.nrows() == 1 {
        return vec![a[(0, 0)]];
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(a.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Operator (spectral) norm of a symmetric matrix.
pub(crate) fn sym_operator_norm(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// `(1/n) Σ_i a_i b_i`, accumulated left to right.
///
/// Every moment object in the crate goes through this one routine so that
/// blocks of different objects agree bit-for-bit.
#[inline]
pub(crate) fn cross_mean(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s / a.len() as f64
}
