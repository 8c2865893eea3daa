//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn matrix_power(s: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::identity(s.nrows(), s.ncols());
    for _ in 0..k {
        out = &out * s;
    }
    out
}

/// `sum_{k=0}^{K-1} S^k`.
pub fn power_sum(s: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = s.nrows();
    let mut acc = DMatrix::zeros(n, n);
    let mut p = DMatrix::identity(n, n);
    for j in 0..k {
        if j > 0 {
            p = &p * s;
        }
        acc += &p;
    }
    acc
}

/// `sum_{k,k'} S^{k+k'} = (sum_k S^k)^2`.
pub fn double_power_sum(s: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let p = power_sum(s, k);
    &p * &p
}

/// Eigenvalues in ascending order with matching eigenvector columns.
pub fn sym_eigen(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(a.nrows(), idx.len());
    for (c, &i) in idx.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = symmetrize(a).symmetric_eigenvalues().iter().cloned().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Spectral norm of a symmetric matrix.
pub fn sym_op_norm(a: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(a).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Spectral norm of a general matrix.
pub fn op_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().iter().cloned().fold(0.0, f64::max)
}

pub fn rel_frobenius(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let d = (a - reference).norm();
    let r = reference.norm();
    if r == 0.0 {
        d
    } else {
        d / r
    }
}

/// Spectral data of a PSD matrix restricted to its numerical range.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PinvQuadratic {
    /// `y^T Theta^+ y`.
    pub value: f64,
    pub lambda_max: f64,
    /// Smallest eigenvalue above the cutoff.
    pub lambda_min_pos: f64,
    pub rank: usize,
    /// `||P y||^2` where `P` projects onto the range.
    pub projected_sq: f64,
}

/// Relative cutoff below which eigenvalues are treated as zero.
pub const PINV_CUTOFF: f64 = 1e-10;

pub fn pinv_quadratic(theta: &DMatrix<f64>, y: &DVector<f64>) -> PinvQuadratic {
    let (vals, vecs) = sym_eigen(theta);
    let lambda_max = vals.iter().cloned().fold(0.0, f64::max);
    let cut = PINV_CUTOFF * lambda_max;
    let coords = vecs.transpose() * y;
    let mut value = 0.0;
    let mut projected_sq = 0.0;
    let mut lambda_min_pos = f64::INFINITY;
    let mut rank = 0;
    for (i, &l) in vals.iter().enumerate() {
        if l > cut && l > 0.0 {
            value += coords[i] * coords[i] / l;
            projected_sq += coords[i] * coords[i];
            lambda_min_pos = lambda_min_pos.min(l);
            rank += 1;
        }
    }
    if rank == 0 {
        lambda_min_pos = 0.0;
    }
    PinvQuadratic { value, lambda_max, lambda_min_pos, rank, projected_sq }
}

pub fn quad_form(a: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    y.dot(&(a * y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_sum_matches_naive() {
        let s = DMatrix::from_row_slice(2, 2, &[0.2, 0.5, 0.5, -0.1]);
        let naive = DMatrix::identity(2, 2) + &s + &s * &s;
        assert!((power_sum(&s, 3) - naive).norm() < 1e-15);
        assert!((double_power_sum(&s, 1) - DMatrix::identity(2, 2)).norm() < 1e-15);
    }

    #[test]
    fn pinv_identity_and_null() {
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let q = pinv_quadratic(&DMatrix::identity(3, 3), &y);
        assert!((q.value - y.norm_squared()).abs() < 1e-14);
        let x = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let theta = &x * x.transpose();
        let z = DVector::from_vec(vec![0.0, 1.0, 1.0]);
        let q = pinv_quadratic(&theta, &z);
        assert_eq!(q.rank, 1);
        assert!(q.value.abs() < 1e-14);
    }

    #[test]
    fn eigen_sorted() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (v, vecs) = sym_eigen(&a);
        assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] - 3.0).abs() < 1e-12);
        let back = &vecs * DMatrix::from_diagonal(&DVector::from_vec(v)) * vecs.transpose();
        assert!((back - a).norm() < 1e-12);
    }
}
