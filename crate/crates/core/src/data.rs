//! Core domain types: datasets, stacked vectors, shift operators, the virtual
//! block-diagonal shift and NTK matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Absolute tolerance on `max |S_ij - S_ji|`.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Paired samples; column `i` of `x` is input `x_i`, column `i` of `y` its target.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// Set once the pair has been rescaled so that `max_i ||x_i|| <= 1`.
    pub normalized: bool,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.shape() != y.shape() {
            return Err(Error::Dimension(format!(
                "X is {:?} but Y is {:?}",
                x.shape(),
                y.shape()
            )));
        }
        if x.ncols() == 0 || x.nrows() == 0 {
            return Err(Error::EmptyInput);
        }
        let normalized = max_column_norm(&x) <= 1.0 + 1e-12;
        Ok(Self { x, y, normalized })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn m(&self) -> usize {
        self.x.ncols()
    }

    /// Scales X and Y by one common factor `1 / max_i max(||x_i||, ||y_i||)`.
    /// Returns the rescaled dataset and the factor applied.
    pub fn normalize_global(&self) -> (Self, f64) {
        let peak = max_column_norm(&self.x).max(max_column_norm(&self.y));
        let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
        let out = Self { x: &self.x * scale, y: &self.y * scale, normalized: true };
        (out, scale)
    }
}

pub fn max_column_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Column-stacked `x~` and `y~`, each of length `n*M`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedData {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub n: usize,
    pub m: usize,
}

pub fn stack(d: &Dataset) -> StackedData {
    let (n, m) = d.x.shape();
    StackedData {
        x: DVector::from_column_slice(d.x.as_slice()),
        y: DVector::from_column_slice(d.y.as_slice()),
        n,
        m,
    }
}

pub fn unstack(s: &StackedData) -> Dataset {
    let x = DMatrix::from_column_slice(s.n, s.m, s.x.as_slice());
    let y = DMatrix::from_column_slice(s.n, s.m, s.y.as_slice());
    let normalized = max_column_norm(&x) <= 1.0 + 1e-12;
    Dataset { x, y, normalized }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    FrobeniusUnit,
    /// Arbitrary scale; carries the Frobenius norm at construction.
    Custom(f64),
}

/// Symmetric graph shift operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftOperator {
    s: DMatrix<f64>,
    pub norm_mode: NormMode,
}

impl ShiftOperator {
    pub fn new(s: DMatrix<f64>) -> Result<Self> {
        if !s.is_square() {
            return Err(Error::Dimension(format!("shift operator is {:?}", s.shape())));
        }
        let asym = linalg::max_asymmetry(&s);
        if asym > SYMMETRY_TOL {
            return Err(Error::NotSymmetric(asym));
        }
        let f = s.norm();
        Ok(Self { s, norm_mode: NormMode::Custom(f) })
    }

    /// Rescales to unit Frobenius norm.
    pub fn frobenius_unit(s: DMatrix<f64>) -> Result<Self> {
        let op = Self::new(s)?;
        let f = op.s.norm();
        if f == 0.0 {
            return Err(Error::ZeroMatrix("shift operator"));
        }
        Ok(Self { s: op.s / f, norm_mode: NormMode::FrobeniusUnit })
    }

    pub(crate) fn with_norm_mode(mut self, mode: NormMode) -> Self {
        self.norm_mode = mode;
        self
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.s
    }

    pub fn n(&self) -> usize {
        self.s.nrows()
    }

    pub fn block(&self, m: usize) -> BlockDiagShift<'_> {
        BlockDiagShift { s: &self.s, m }
    }
}

/// The operator `I_M (x) S`, never materialised.
#[derive(Debug, Clone, Copy)]
pub struct BlockDiagShift<'a> {
    pub s: &'a DMatrix<f64>,
    pub m: usize,
}

impl<'a> BlockDiagShift<'a> {
    pub fn new(s: &'a DMatrix<f64>, m: usize) -> Self {
        Self { s, m }
    }

    pub fn dim(&self) -> usize {
        self.s.nrows() * self.m
    }

    /// `S~^k v`.
    pub fn apply(&self, v: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
        if v.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "vector of length {} applied to block shift of size {}",
                v.len(),
                self.dim()
            )));
        }
        let n = self.s.nrows();
        let mut cur = DMatrix::from_column_slice(n, self.m, v.as_slice());
        for _ in 0..k {
            cur = self.s * cur;
        }
        Ok(DVector::from_column_slice(cur.as_slice()))
    }

    /// `[v, S~ v, ..., S~^{K-1} v]` as an `nM x K` matrix.
    pub fn krylov(&self, v: &DVector<f64>, k: usize) -> Result<DMatrix<f64>> {
        let dim = self.dim();
        if v.len() != dim {
            return Err(Error::Dimension(format!("krylov: {} vs {}", v.len(), dim)));
        }
        let n = self.s.nrows();
        let mut out = DMatrix::zeros(dim, k);
        let mut cur = DMatrix::from_column_slice(n, self.m, v.as_slice());
        for j in 0..k {
            if j > 0 {
                cur = self.s * &cur;
            }
            out.column_mut(j).copy_from_slice(cur.as_slice());
        }
        Ok(out)
    }

    /// `S~^k E` for a dense `nM x c` matrix.
    pub fn left_apply(&self, e: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        let n = self.s.nrows();
        let sk = linalg::matrix_power(self.s, k);
        let mut out = DMatrix::zeros(e.nrows(), e.ncols());
        for i in 0..self.m {
            let blk = &sk * e.rows(i * n, n);
            out.rows_mut(i * n, n).copy_from(&blk);
        }
        out
    }

    /// `E S~^k` for a dense `r x nM` matrix.
    pub fn right_apply(&self, e: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        let n = self.s.nrows();
        let sk = linalg::matrix_power(self.s, k);
        let mut out = DMatrix::zeros(e.nrows(), e.ncols());
        for j in 0..self.m {
            let blk = e.columns(j * n, n) * &sk;
            out.columns_mut(j * n, n).copy_from(&blk);
        }
        out
    }

    /// `sum_k S~^k E S~^k` for `k = 0..K-1`.
    pub fn power_sandwich(&self, e: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(e.nrows(), e.ncols());
        for j in 0..k {
            acc += self.right_apply(&self.left_apply(e, j), j);
        }
        acc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NtkProvenance {
    FilterAnalytic,
    FilterEmpirical,
    GnnEmpirical { width: usize },
    GnnInfiniteQuadrature,
    GnnInfiniteSeries { l: usize },
    GnnMonteCarlo { width: usize },
}

/// Block kernel matrix of size `nM x nM`.
#[derive(Debug, Clone)]
pub struct NtkMatrix {
    pub theta: DMatrix<f64>,
    pub provenance: NtkProvenance,
    pub n: usize,
    pub m: usize,
}

impl NtkMatrix {
    pub fn new(theta: DMatrix<f64>, provenance: NtkProvenance, n: usize, m: usize) -> Self {
        debug_assert_eq!(theta.nrows(), n * m);
        Self { theta, provenance, n, m }
    }

    /// Block `(i, j)`, the `n x n` kernel between samples `i` and `j`.
    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.theta.view((i * self.n, j * self.n), (self.n, self.n)).into_owned()
    }

    pub fn symmetry_error(&self) -> f64 {
        let f = self.theta.norm();
        if f == 0.0 {
            return 0.0;
        }
        (&self.theta - self.theta.transpose()).norm() / f
    }

    /// Checks symmetry (1e-8 relative Frobenius) and PSD
    /// (`lambda_min >= -1e-8 ||Theta||_op`).
    pub fn check_invariants(&self) -> Result<()> {
        let asym = self.symmetry_error();
        if asym > 1e-8 {
            return Err(Error::NotSymmetric(asym));
        }
        let sym = linalg::symmetrize(&self.theta);
        let ev = linalg::sym_eigenvalues(&sym);
        let lmax = ev.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let lmin = ev.iter().cloned().fold(f64::INFINITY, f64::min);
        if lmin < -1e-8 * lmax {
            return Err(Error::InvalidArgument(format!(
                "NTK is not positive semidefinite: lambda_min = {lmin:e}, lambda_max = {lmax:e}"
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_block(s: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
        let n = s.nrows();
        let mut b = DMatrix::zeros(n * m, n * m);
        for i in 0..m {
            b.view_mut((i * n, i * n), (n, n)).copy_from(s);
        }
        b
    }

    #[test]
    fn stack_scalar() {
        let d = Dataset::new(DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 0.5)).unwrap();
        let s = stack(&d);
        assert_eq!(s.x.as_slice(), &[0.5]);
        assert_eq!(s.y.as_slice(), &[0.5]);
    }

    #[test]
    fn stack_is_column_major() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]);
        let d = Dataset::new(x.clone(), x).unwrap();
        assert_eq!(stack(&d).x.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn stacked_index_formula() {
        let x = DMatrix::from_fn(3, 5, |a, i| (10 * a + i) as f64);
        let d = Dataset::new(x.clone(), -x.clone()).unwrap();
        let s = stack(&d);
        for i in 0..5 {
            for a in 0..3 {
                assert_eq!(s.x[i * 3 + a], x[(a, i)]);
                assert_eq!(s.y[i * 3 + a], -x[(a, i)]);
            }
        }
        assert_eq!(unstack(&s), d);
    }

    #[test]
    fn block_shift_identity_cases() {
        let s = DMatrix::<f64>::identity(3, 3);
        let v = DVector::from_fn(6, |i, _| i as f64 - 2.5);
        let b = BlockDiagShift::new(&s, 2);
        assert_eq!(b.apply(&v, 4).unwrap(), v);
        let r = DMatrix::from_fn(3, 3, |i, j| (i + 2 * j) as f64);
        assert_eq!(BlockDiagShift::new(&r, 2).apply(&v, 0).unwrap(), v);
    }

    #[test]
    fn block_shift_dimension_error() {
        let s = DMatrix::<f64>::identity(3, 3);
        let b = BlockDiagShift::new(&s, 2);
        assert!(b.apply(&DVector::zeros(5), 1).is_err());
    }

    #[test]
    fn block_shift_matches_dense() {
        let s = DMatrix::from_fn(4, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.2 - 0.4);
        let s = (&s + s.transpose()) * 0.5;
        let m = 3;
        let v = DVector::from_fn(12, |i, _| (i as f64).sin());
        let dense = dense_block(&s, m);
        let want = &dense * &dense * &dense * &v;
        let got = BlockDiagShift::new(&s, m).apply(&v, 3).unwrap();
        assert!((want - got).norm() < 1e-12);
    }

    #[test]
    fn left_right_apply_match_dense() {
        let s = DMatrix::from_fn(3, 3, |i, j| ((i + 1) * (j + 2)) as f64 * 0.1);
        let m = 4;
        let e = DMatrix::from_fn(12, 12, |i, j| ((i * 13 + j * 7) % 11) as f64 - 5.0);
        let dense = dense_block(&s, m);
        let b = BlockDiagShift::new(&s, m);
        assert!((b.left_apply(&e, 2) - &dense * &dense * &e).norm() < 1e-9);
        assert!((b.right_apply(&e, 2) - &e * &dense * &dense).norm() < 1e-9);
    }

    #[test]
    fn shift_operator_rejects_asymmetry() {
        let s = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(ShiftOperator::new(s), Err(Error::NotSymmetric(_))));
        let u = ShiftOperator::frobenius_unit(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).unwrap();
        assert!((u.matrix().norm() - 1.0).abs() < 1e-12);
        assert_eq!(u.norm_mode, NormMode::FrobeniusUnit);
    }

    #[test]
    fn global_normalization_bounds_columns() {
        let x = DMatrix::from_fn(3, 4, |i, j| (i + j) as f64);
        let y = DMatrix::from_fn(3, 4, |i, j| 2.0 * (i * j) as f64);
        let d = Dataset::new(x, y).unwrap();
        let (dn, _) = d.normalize_global();
        let peak = max_column_norm(&dn.x).max(max_column_norm(&dn.y));
        assert!((peak - 1.0).abs() < 1e-14);
        assert!(dn.normalized);
    }

    proptest! {
        #[test]
        fn stack_unstack_bijection(n in 1usize..6, m in 1usize..6, seed in 0u64..1000) {
            let x = DMatrix::from_fn(n, m, |i, j| ((seed as usize + 3 * i + 7 * j) % 17) as f64 - 8.0);
            let y = DMatrix::from_fn(n, m, |i, j| ((seed as usize + 5 * i + 2 * j) % 13) as f64);
            let d = Dataset::new(x, y).unwrap();
            prop_assert_eq!(unstack(&stack(&d)), d);
        }

        #[test]
        fn repeated_unit_power_equals_power(j in 0usize..6, seed in 0u64..500) {
            let s = DMatrix::from_fn(3, 3, |a, b| (((seed as usize) * 31 + a * 5 + b * 5 + a * b) % 9) as f64 / 9.0 - 0.5);
            let s = (&s + s.transpose()) * 0.5;
            let v = DVector::from_fn(6, |i, _| ((seed as usize + i) as f64).cos());
            let b = BlockDiagShift::new(&s, 2);
            let mut it = v.clone();
            for _ in 0..j {
                it = b.apply(&it, 1).unwrap();
            }
            let direct = b.apply(&v, j).unwrap();
            prop_assert!((it - direct).norm() <= 1e-10 * (1.0 + v.norm()));
        }
    }
}
