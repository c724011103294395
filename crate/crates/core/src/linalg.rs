//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Spectral norm (largest singular value).
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Inverse principal square root of a symmetric positive definite matrix.
/// Eigenvalues below `floor` are clamped to `floor`.
pub fn sym_inv_sqrt(v: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(v.clone());
    let scaled = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| 1.0 / l.max(floor).sqrt()),
    );
    let q = &eig.eigenvectors;
    let mut out = q * DMatrix::from_diagonal(&scaled) * q.transpose();
    symmetrize(&mut out);
    out
}

/// Principal square root of a symmetric positive semidefinite matrix.
pub fn sym_sqrt(v: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(v.clone());
    let scaled = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
    );
    let q = &eig.eigenvectors;
    q * DMatrix::from_diagonal(&scaled) * q.transpose()
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let a = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}

/// `log det` of an SPD matrix via Cholesky; `None` if not positive definite.
pub fn logdet_spd(m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    let l = chol.l_dirty();
    Some(2.0 * (0..m.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

/// In-place rank-1 update of a lower Cholesky factor: `L Lᵀ + v vᵀ`.
/// `v` is consumed as workspace. Returns `false` on breakdown.
pub fn cholesky_rank_one_update(l: &mut DMatrix<f64>, v: &mut [f64]) -> bool {
    let n = l.nrows();
    for j in 0..n {
        let ljj = l[(j, j)];
        let vj = v[j];
        let r = (ljj * ljj + vj * vj).sqrt();
        if !(r.is_finite() && r > 0.0 && ljj > 0.0) {
            return false;
        }
        let c = r / ljj;
        let s = vj / ljj;
        l[(j, j)] = r;
        for i in (j + 1)..n {
            let lij = (l[(i, j)] + s * v[i]) / c;
            l[(i, j)] = lij;
            v[i] = c * v[i] - s * lij;
        }
    }
    true
}

/// Solve `L y = b` for lower-triangular `L`.
pub fn forward_solve(l: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let n = l.nrows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut acc = b[i];
        for k in 0..i {
            acc -= l[(i, k)] * y[k];
        }
        y[i] = acc / l[(i, i)];
    }
    y
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-major nested vectors into a matrix. Returns `None` for ragged input.
pub fn from_rows(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return None;
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Some(DMatrix::from_row_slice(r, c, &flat))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_update_matches_refactor() {
        let v0 = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let mut l = v0.clone().cholesky().unwrap().l();
        let x = [0.3, -1.2, 0.7];
        let mut work = x.to_vec();
        assert!(cholesky_rank_one_update(&mut l, &mut work));
        let xv = DVector::from_column_slice(&x);
        let v1 = &v0 + &xv * xv.transpose();
        assert!((&l * l.transpose() - v1).norm() < 1e-12);
    }

    #[test]
    fn inv_sqrt_of_diagonal() {
        let v = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let s = sym_inv_sqrt(&v, 1e-12);
        assert!((s[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((s[(1, 1)] - 0.5).abs() < 1e-14);
        assert!(s[(0, 1)].abs() < 1e-14);
    }

    #[test]
    fn op_norm_of_nilpotent() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!((op_norm(&a) - 1.0).abs() < 1e-14);
    }
}
