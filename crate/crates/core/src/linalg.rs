//! Small dense helpers shared by the design, factorization and classification code.

use nalgebra::{DMatrix, SymmetricEigen};

/// `X Xᵀ`.
pub fn gram(x: &DMatrix<f64>) -> DMatrix<f64> {
    x * x.transpose()
}

/// Squared Frobenius norm.
pub fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Largest absolute asymmetry `|m_ij - m_ji|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Replace `m` by `(m + mᵀ) / 2` with bitwise-equal mirrored entries.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut vals: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(0.0)
}
