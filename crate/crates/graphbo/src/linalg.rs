//! Small dense linear-algebra helpers shared by the library and its tests.

use nalgebra::DMatrix;

/// Eigendecomposition of a symmetric matrix with a fixed ordering convention:
/// eigenvalues ascending (ties broken by the solver's original order) and
/// each eigenvector's first component of magnitude > 1e-12 made positive.
/// The convention pins an otherwise arbitrary sign so that seeded pipelines
/// built on eigenvectors are reproducible.
pub struct SymEigen {
    /// Eigenvalues in ascending order.
    pub values: Vec<f64>,
    /// Column `i` is the eigenvector for `values[i]`.
    pub vectors: DMatrix<f64>,
}

/// Dense symmetric eigendecomposition (ascending, sign-normalized).
pub fn sym_eigen(a: &DMatrix<f64>) -> SymEigen {
    assert_eq!(a.nrows(), a.ncols(), "sym_eigen needs a square matrix");
    let se = a.clone().symmetric_eigen();
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        se.eigenvalues[i]
            .partial_cmp(&se.eigenvalues[j])
            .expect("non-finite eigenvalue")
            .then(i.cmp(&j))
    });
    let mut values = Vec::with_capacity(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values.push(se.eigenvalues[src]);
        vectors.set_column(dst, &se.eigenvectors.column(src));
    }
    sign_normalize_columns(&mut vectors);
    SymEigen { values, vectors }
}

/// Flip column signs so the first entry with |x| > 1e-12 is positive.
pub fn sign_normalize_columns(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        let mut flip = false;
        for i in 0..m.nrows() {
            let x = m[(i, j)];
            if x.abs() > 1e-12 {
                flip = x < 0.0;
                break;
            }
        }
        if flip {
            for i in 0..m.nrows() {
                m[(i, j)] = -m[(i, j)];
            }
        }
    }
}

/// Thin QR orthonormalization: returns a matrix with the same column span as
/// `m` but orthonormal columns (rank deficiency permitting).
pub fn orthonormalize_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (rows, cols) = (m.nrows(), m.ncols());
    assert!(rows >= cols, "orthonormalize_columns expects a tall matrix");
    let qr = m.clone().qr();
    let q = qr.q();
    q.columns(0, cols).into_owned()
}
