//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
pub fn sym2_eigenvalues(m: &Matrix2<f64>) -> (f64, f64) {
    let a = m[(0, 0)];
    let d = m[(1, 1)];
    let b = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (mean - rad, mean + rad)
}

/// Orthogonal polar factor `U V^T` of a square matrix.
pub fn polar_orthogonal(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    u * vt
}

pub fn polar2(a: &Matrix2<f64>) -> Matrix2<f64> {
    let svd = a.svd(true, true);
    svd.u.unwrap() * svd.v_t.unwrap()
}

/// Smallest singular value of a square matrix.
pub fn min_singular_value(a: &DMatrix<f64>) -> f64 {
    a.singular_values().min()
}

/// Symmetric eigen-decomposition with eigenvalues sorted ascending.
pub fn sorted_symmetric_eigen(a: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let eig = SymmetricEigen::new(a);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Orthonormal basis (columns) of the orthogonal complement of `w` in `R^n`,
/// from a Householder reflection mapping `w/|w|` to `e_0`.
pub fn complement_basis(w: &DVector<f64>) -> DMatrix<f64> {
    let n = w.len();
    let mut v = w.normalize();
    let s = if v[0] >= 0.0 { 1.0 } else { -1.0 };
    v[0] += s;
    let vn = v.norm_squared();
    let mut h = DMatrix::identity(n, n);
    if vn > 0.0 {
        h -= &v * v.transpose() * (2.0 / vn);
    }
    h.columns(1, n - 1).into_owned()
}
