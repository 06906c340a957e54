//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{GlipError, Result};

/// Spectral norm (largest singular value). Zero for empty matrices.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let (r, c) = m.shape();
    if r.max(c) > 8 * r.min(c) {
        let g = if r > c { m.tr_mul(m) } else { m * m.transpose() };
        return g.symmetric_eigen().eigenvalues.max().max(0.0).sqrt();
    }
    m.singular_values().max()
}

/// Inverse of a symmetric matrix, via Cholesky when positive definite and LU otherwise.
pub fn sym_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        let mut inv = ch.inverse();
        symmetrize(&mut inv);
        return Ok(inv);
    }
    m.clone()
        .try_inverse()
        .ok_or_else(|| GlipError::Singular(what.to_string()))
}

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

/// Log-determinant of a symmetric positive definite matrix.
pub fn log_det_pd(m: &DMatrix<f64>, what: &str) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let ch = m
        .clone()
        .cholesky()
        .ok_or_else(|| GlipError::Singular(format!("{what} is not positive definite")))?;
    Ok(2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.clone().symmetric_eigen().eigenvalues.min()
}

/// Orthonormal basis split of `R^p` into the row space of `m` and its null space.
///
/// Returns `(row_basis, null_basis, singular_values)`, where the row basis holds
/// right singular vectors with singular value above `rel_tol` times the largest.
pub fn row_null_split(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let p = m.ncols();
    if m.nrows() == 0 || p == 0 {
        return (DMatrix::zeros(p, 0), DMatrix::identity(p, p), Vec::new());
    }
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sv: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    let smax = sv.first().copied().unwrap_or(0.0);
    let keep: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&k| smax > 0.0 && svd.singular_values[k] > rel_tol * smax)
        .collect();
    let p0 = keep.len();
    let mut row = DMatrix::zeros(p, p0);
    for (c, &k) in keep.iter().enumerate() {
        row.set_column(c, &v_t.row(k).transpose());
    }
    let p1 = p - p0;
    let null = if p1 == 0 {
        DMatrix::zeros(p, 0)
    } else {
        let mut comp = DMatrix::identity(p, p) - &row * row.transpose();
        symmetrize(&mut comp);
        let eig = comp.symmetric_eigen();
        let mut idx: Vec<usize> = (0..p).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut null = DMatrix::zeros(p, p1);
        for (c, &k) in idx.iter().take(p1).enumerate() {
            null.set_column(c, &eig.eigenvectors.column(k));
        }
        null
    };
    (row, null, sv)
}

pub fn diag(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(v)
}

/// `diag(w) m` without forming the diagonal matrix.
pub fn scale_rows(m: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= w[i];
    }
    out
}

/// Symmetric `m^T diag(w) m`.
pub fn weighted_gram(m: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut g = m.tr_mul(&scale_rows(m, w));
    symmetrize(&mut g);
    g
}

/// Whether all off-diagonal entries of a square matrix are exactly zero.
pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j && m[(i, j)] != 0.0 {
                return false;
            }
        }
    }
    true
}
