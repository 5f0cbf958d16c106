//! Dense matrix aliases and the handful of Hermitian helpers shared by the
//! optimizers.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
pub use num_complex::Complex64;
use num_traits::Float;

pub type RMatrix = DMatrix<f64>;
pub type RVector = DVector<f64>;
pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const C_ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Eigendecomposition of a real symmetric matrix with eigenvalues sorted in
/// descending order; columns of the returned matrix are the matching vectors.
pub fn sym_eig_sorted(m: &RMatrix) -> (Vec<f64>, RMatrix) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = RMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Hermitian eigendecomposition, eigenvalues descending.
pub fn herm_eig_sorted(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = m.nrows();
    let herm = (m + m.adjoint()).map(|z| z * 0.5);
    let eig = SymmetricEigen::new(herm);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Largest singular value of a real matrix, via the symmetric eigenproblem
/// of its Gram matrix.
pub fn spectral_norm_sq(m: &RMatrix) -> f64 {
    let gram = m.transpose() * m;
    let (values, _) = sym_eig_sorted(&gram);
    values.first().copied().unwrap_or(0.0).max(0.0)
}

pub fn cvec_norm_sq(v: &CVector) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `aᴴ b`
pub fn cdot(a: &CVector, b: &CVector) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn is_symmetric(m: &RMatrix, tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let n = m.nrows();
    (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol))
}

pub fn sqrt(x: f64) -> f64 {
    Float::sqrt(x)
}
