//! Covariance-type shift operators and the alignment-optimal shift operator.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NormMode, ShiftOperator};
use crate::error::{Error, Result};
use crate::linalg;

/// `X X^T / ||X X^T||_F`.
pub fn covariance(d: &Dataset) -> Result<ShiftOperator> {
    let c = &d.x * d.x.transpose();
    let f = c.norm();
    if f == 0.0 {
        return Err(Error::ZeroMatrix("covariance of all-zero data"));
    }
    let s = linalg::symmetrize(&(c / f));
    Ok(ShiftOperator::frobenius_unit(s)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossMode {
    /// `(X Y^T + Y X^T) / 2`.
    Symmetrized,
    /// `X Y^T`, not a valid shift operator for the analytic kernels.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossCovariance {
    pub c: DMatrix<f64>,
    pub mode: CrossMode,
    pub normalized: bool,
}

impl CrossCovariance {
    pub fn to_shift(&self) -> Result<ShiftOperator> {
        if self.mode == CrossMode::Raw {
            return Err(Error::InvalidArgument(
                "the raw cross-covariance is not symmetric and cannot serve as a shift operator here".into(),
            ));
        }
        let op = ShiftOperator::new(self.c.clone())?;
        Ok(if self.normalized { op.with_norm_mode(NormMode::FrobeniusUnit) } else { op })
    }
}

/// Cross-covariance in the requested mode, rescaled to unit Frobenius norm.
pub fn cross_covariance(d: &Dataset, mode: CrossMode) -> Result<CrossCovariance> {
    let raw = &d.x * d.y.transpose();
    let c = match mode {
        CrossMode::Symmetrized => (&raw + raw.transpose()) * 0.5,
        CrossMode::Raw => raw,
    };
    let f = c.norm();
    if f == 0.0 {
        return Err(Error::ZeroMatrix("cross-covariance"));
    }
    let mut c = c / f;
    if mode == CrossMode::Symmetrized {
        c = linalg::symmetrize(&c);
    }
    Ok(CrossCovariance { c, mode, normalized: true })
}

/// `||sum_{k<K} S^k||_F`.
pub fn constraint_lhs(s: &ShiftOperator, k: usize) -> f64 {
    linalg::power_sum(s.matrix(), k).norm()
}

/// `sqrt(alpha / (eta M))`.
pub fn budget(alpha: f64, eta: f64, m: usize) -> f64 {
    (alpha / (eta * m as f64)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MuMode {
    /// `mu = sqrt(alpha / (eta M)) / ||C||_F`.
    Exact,
    /// Solve with the exact `mu`, then rescale the result to unit Frobenius
    /// norm; only the direction is kept.
    UnitFrobenius,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GsoSolveConfig {
    pub k: usize,
    pub alpha: f64,
    pub eta: f64,
    pub m: usize,
    pub mu_mode: MuMode,
}

impl GsoSolveConfig {
    pub fn mu(&self, c: &CrossCovariance) -> Result<f64> {
        if !(self.alpha > 0.0) || !(self.eta > 0.0) || self.m == 0 {
            return Err(Error::InvalidArgument(format!(
                "need alpha > 0, eta > 0, M >= 1 (got {}, {}, {})",
                self.alpha, self.eta, self.m
            )));
        }
        let f = c.c.norm();
        if f == 0.0 {
            return Err(Error::ZeroMatrix("cross-covariance"));
        }
        Ok(budget(self.alpha, self.eta, self.m) / f)
    }
}

#[derive(Debug, Clone)]
pub struct GsoSolution {
    pub shift: ShiftOperator,
    pub mu: f64,
    /// `||P(S*) - mu C||_F / ||mu C||_F` before any rescaling, where `P` is
    /// the power sum being matched.
    pub residual: f64,
    /// Eigenvalues of `mu C`, ascending.
    pub gamma: Vec<f64>,
    /// Chosen scalar root per eigenvalue.
    pub roots: Vec<f64>,
}

/// Real roots of `sum_{k<K} s^k = target`, ascending.
pub fn real_roots_power_sum(target: f64, k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need K >= 2, got {k}")));
    }
    let deg = k - 1;
    let p = |s: f64| (0..k).fold(0.0, |acc, _| acc * s + 1.0) - target;
    let dp = |s: f64| (1..k).rev().fold(0.0, |acc, j| acc * s + j as f64);
    if deg == 1 {
        return Ok(vec![target - 1.0]);
    }
    // companion matrix of s^d + ... + s + (1 - target)
    let mut comp = DMatrix::zeros(deg, deg);
    for i in 1..deg {
        comp[(i, i - 1)] = 1.0;
    }
    for j in 0..deg {
        let coef = if j == 0 { 1.0 - target } else { 1.0 };
        comp[(j, deg - 1)] = -coef;
    }
    let eig = nalgebra::linalg::Schur::try_new(comp, 1e-15, 100_000)
        .ok_or_else(|| Error::InvalidArgument(format!("companion eigenvalues did not converge for target {target}")))?
        .complex_eigenvalues();
    let mut roots: Vec<f64> = Vec::new();
    for z in eig.iter() {
        let scale = 1.0 + z.re.abs();
        if z.im.abs() > 1e-6 * scale {
            continue;
        }
        let mut s = z.re;
        for _ in 0..50 {
            let d = dp(s);
            if d == 0.0 {
                break;
            }
            let step = p(s) / d;
            s -= step;
            if step.abs() <= 1e-16 * (1.0 + s.abs()) {
                break;
            }
        }
        if p(s).abs() <= 1e-9 * (1.0 + target.abs()) {
            roots.push(s);
        }
    }
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + a.abs()));
    Ok(roots)
}

/// Real root of `sum_{k<K} s^k = target` smallest in absolute value.
pub fn smallest_root(target: f64, k: usize) -> Result<f64> {
    let roots = real_roots_power_sum(target, k)?;
    roots
        .into_iter()
        .min_by(|a, b| a.abs().total_cmp(&b.abs()))
        .ok_or(Error::NoRealRoot { gamma: target, k })
}

/// Eigen route: for `target = V diag(gamma) V^T`, returns `V diag(s) V^T`
/// with `s_i` the smallest real root of `sum_k s^k = power_value(gamma_i)`.
pub fn solve_spectral<F>(target: &DMatrix<f64>, k: usize, power_value: F) -> Result<(DMatrix<f64>, Vec<f64>, Vec<f64>)>
where
    F: Fn(f64) -> Result<f64>,
{
    let (gamma, v) = linalg::sym_eigen(target);
    let roots = gamma
        .iter()
        .map(|&g| smallest_root(power_value(g)?, k).map_err(|e| match e {
            Error::NoRealRoot { k, .. } => Error::NoRealRoot { gamma: g, k },
            other => other,
        }))
        .collect::<Result<Vec<f64>>>()?;
    let s = &v * DMatrix::from_diagonal(&DVector::from_vec(roots.clone())) * v.transpose();
    Ok((linalg::symmetrize(&s), gamma, roots))
}

fn finish(s: DMatrix<f64>, mu: f64, target: &DMatrix<f64>, achieved: &DMatrix<f64>, gamma: Vec<f64>, roots: Vec<f64>, mode: MuMode) -> Result<GsoSolution> {
    let tn = target.norm();
    let residual = if tn == 0.0 { (achieved - target).norm() } else { (achieved - target).norm() / tn };
    let shift = match mode {
        MuMode::Exact => ShiftOperator::new(s)?,
        MuMode::UnitFrobenius => ShiftOperator::frobenius_unit(s)?,
    };
    Ok(GsoSolution { shift, mu, residual, gamma, roots })
}

/// Solves `sum_{k<K} S^k = mu C`: closed form `mu C - I` for `K = 2`,
/// eigenvalue route otherwise.
pub fn solve_optimal_gso(c: &CrossCovariance, cfg: &GsoSolveConfig) -> Result<GsoSolution> {
    if c.mode == CrossMode::Raw {
        return Err(Error::InvalidArgument("the optimal shift operator needs the symmetrized cross-covariance".into()));
    }
    if cfg.k < 2 {
        return Err(Error::InvalidArgument(format!("need K >= 2, got {}", cfg.k)));
    }
    let mu = cfg.mu(c)?;
    let target = &c.c * mu;
    let n = target.nrows();
    let (s, gamma, roots) = if cfg.k == 2 {
        let s = &target - DMatrix::identity(n, n);
        let gamma = linalg::sym_eigenvalues(&target);
        let roots = gamma.iter().map(|g| g - 1.0).collect();
        (s, gamma, roots)
    } else {
        solve_spectral(&target, cfg.k, Ok)?
    };
    let achieved = linalg::power_sum(&s, cfg.k);
    let sol = finish(s, mu, &target, &achieved, gamma, roots, cfg.mu_mode)?;
    if sol.residual > 1e-8 {
        return Err(Error::InvalidArgument(format!("power-sum residual {:e} above 1e-8", sol.residual)));
    }
    Ok(sol)
}

/// Solves `sum_{k,k'} S^{k+k'} = (sum_k S^k)^2 = target` taking the
/// nonnegative square root per eigenvalue.
pub fn solve_double_power_sum(target: &DMatrix<f64>, k: usize, mu: f64, mode: MuMode) -> Result<GsoSolution> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need K >= 2, got {k}")));
    }
    let scale = target.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let (s, gamma, roots) = solve_spectral(target, k, |g| {
        if g < -1e-12 * scale {
            Err(Error::NegativeEigenvalue(g))
        } else {
            Ok(g.max(0.0).sqrt())
        }
    })?;
    let achieved = linalg::double_power_sum(&s, k);
    let sol = finish(s, mu, target, &achieved, gamma, roots, mode)?;
    if sol.residual > 1e-8 {
        return Err(Error::InvalidArgument(format!("double power-sum residual {:e} above 1e-8", sol.residual)));
    }
    Ok(sol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dataset(n: usize, m: usize, seed: u64) -> Dataset {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, m, |_, _| r.gen_range(-1.0..1.0));
        let y = DMatrix::from_fn(n, m, |_, _| r.gen_range(-1.0..1.0));
        Dataset::new(x, y).unwrap()
    }

    fn cc(c: DMatrix<f64>) -> CrossCovariance {
        CrossCovariance { c, mode: CrossMode::Symmetrized, normalized: false }
    }

    #[test]
    fn covariance_single_column() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let d = Dataset::new(x.clone(), x).unwrap();
        let c = covariance(&d).unwrap();
        assert!((c.matrix() - DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))).norm() < 1e-15);
    }

    #[test]
    fn covariance_orthonormal_columns() {
        let x = DMatrix::<f64>::identity(3, 3);
        let d = Dataset::new(x.clone(), x).unwrap();
        let c = covariance(&d).unwrap();
        assert!((c.matrix() - DMatrix::identity(3, 3) / 3f64.sqrt()).norm() < 1e-15);
        let z = Dataset::new(DMatrix::zeros(2, 2), DMatrix::zeros(2, 2)).unwrap();
        assert!(matches!(covariance(&z), Err(Error::ZeroMatrix(_))));
    }

    #[test]
    fn covariance_matches_outer_sum() {
        let d = random_dataset(4, 7, 3);
        let mut acc = DMatrix::zeros(4, 4);
        for c in d.x.column_iter() {
            acc += &c * c.transpose();
        }
        let want = &acc / acc.norm();
        assert!((covariance(&d).unwrap().matrix() - want).norm() < 1e-14);
    }

    #[test]
    fn cross_covariance_special_cases() {
        let d = random_dataset(3, 5, 11);
        let same = Dataset::new(d.x.clone(), d.x.clone()).unwrap();
        let c = cross_covariance(&same, CrossMode::Symmetrized).unwrap();
        assert!((&c.c - covariance(&same).unwrap().matrix()).norm() < 1e-14);
        let neg = Dataset::new(d.x.clone(), -d.x.clone()).unwrap();
        let c = cross_covariance(&neg, CrossMode::Symmetrized).unwrap();
        assert!((&c.c + covariance(&same).unwrap().matrix()).norm() < 1e-14);
        let raw = cross_covariance(&d, CrossMode::Raw).unwrap();
        let sym = cross_covariance(&d, CrossMode::Symmetrized).unwrap();
        let want = (&raw.c + raw.c.transpose()) * 0.5;
        assert!((&sym.c - &want / want.norm()).norm() < 1e-14);
        assert!(raw.to_shift().is_err());
        assert!(sym.to_shift().is_ok());
    }

    #[test]
    fn constraint_lhs_cases() {
        let z = ShiftOperator::new(DMatrix::zeros(4, 4)).unwrap();
        assert!((constraint_lhs(&z, 2) - 2.0).abs() < 1e-15);
        let i = ShiftOperator::new(DMatrix::identity(4, 4)).unwrap();
        assert!((constraint_lhs(&i, 3) - 6.0).abs() < 1e-14);
        let s = DMatrix::from_row_slice(2, 2, &[0.3, -0.2, -0.2, 0.5]);
        let naive = DMatrix::identity(2, 2) + &s + &s * &s + &s * &s * &s;
        let op = ShiftOperator::new(s).unwrap();
        assert!((constraint_lhs(&op, 4) - naive.norm()).abs() < 1e-14);
    }

    fn unit_cfg(k: usize, m: usize) -> GsoSolveConfig {
        GsoSolveConfig { k, alpha: 1.0, eta: 1.0, m, mu_mode: MuMode::Exact }
    }

    #[test]
    fn closed_form_examples() {
        // mu C = I: choose ||C||_F = sqrt(n) and budget sqrt(n)
        let n = 3;
        let c = cc(DMatrix::identity(n, n));
        let cfg = GsoSolveConfig { k: 2, alpha: n as f64, eta: 1.0, m: 1, mu_mode: MuMode::Exact };
        let sol = solve_optimal_gso(&c, &cfg).unwrap();
        assert!(sol.shift.matrix().norm() < 1e-15);
        let cfg = GsoSolveConfig { alpha: 4.0 * n as f64, ..cfg };
        let sol = solve_optimal_gso(&c, &cfg).unwrap();
        assert!((sol.shift.matrix() - DMatrix::identity(n, n)).norm() < 1e-14);
    }

    #[test]
    fn cubic_root_choice() {
        assert_eq!(smallest_root(3.0, 3).unwrap(), 1.0);
        let r = real_roots_power_sum(3.0, 3).unwrap();
        assert_eq!(r.len(), 2);
        assert!((r[0] + 2.0).abs() < 1e-12 && (r[1] - 1.0).abs() < 1e-12);
        assert!(matches!(smallest_root(0.5, 3), Err(Error::NoRealRoot { .. })));
        // diagonal target through the eigen route
        let target = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 7.0, 1.0]));
        let (s, _, roots) = solve_spectral(&target, 3, Ok).unwrap();
        for (g, r) in [3.0, 7.0, 1.0].iter().zip([1.0, 2.0, 0.0]) {
            assert!(roots.iter().any(|x| (x - r).abs() < 1e-12), "gamma {g}");
        }
        assert!((linalg::power_sum(&s, 3) - target).norm() < 1e-12);
    }

    #[test]
    fn no_real_root_is_reported() {
        let c = cc(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.1])));
        let cfg = GsoSolveConfig { k: 3, alpha: 1.0, eta: 1.0, m: 1, mu_mode: MuMode::Exact };
        assert!(matches!(solve_optimal_gso(&c, &cfg), Err(Error::NoRealRoot { .. })));
    }

    #[test]
    fn eigen_route_matches_closed_form_for_k2() {
        let d = random_dataset(5, 9, 21);
        let c = cross_covariance(&d, CrossMode::Symmetrized).unwrap();
        let sol = solve_optimal_gso(&c, &unit_cfg(2, 9)).unwrap();
        let (s, _, _) = solve_spectral(&(&c.c * sol.mu), 2, Ok).unwrap();
        assert!((s - sol.shift.matrix()).norm() < 1e-10);
        assert!(sol.residual < 1e-14);
    }

    #[test]
    fn unit_frobenius_mode() {
        let d = random_dataset(4, 6, 5);
        let c = cross_covariance(&d, CrossMode::Symmetrized).unwrap();
        let cfg = GsoSolveConfig { mu_mode: MuMode::UnitFrobenius, ..unit_cfg(2, 6) };
        let sol = solve_optimal_gso(&c, &cfg).unwrap();
        assert!((sol.shift.matrix().norm() - 1.0).abs() < 1e-12);
        assert_eq!(sol.shift.norm_mode, NormMode::FrobeniusUnit);
    }

    #[test]
    fn double_power_sum_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        let sol = solve_double_power_sum(&i, 2, 1.0, MuMode::Exact).unwrap();
        assert!(sol.shift.matrix().norm() < 1e-12);
        let sol = solve_double_power_sum(&(&i * 4.0), 2, 1.0, MuMode::Exact).unwrap();
        assert!((sol.shift.matrix() - &i).norm() < 1e-12);
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(solve_double_power_sum(&neg, 2, 1.0, MuMode::Exact), Err(Error::NegativeEigenvalue(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn higher_order_residual(seed in 0u64..10_000, k in 3usize..6) {
            // targets with eigenvalues large enough to have real roots
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let n = 4;
            let a = DMatrix::from_fn(n, n, |_, _| r.gen_range(-1.0..1.0));
            let q = a.qr().q();
            let gam: Vec<f64> = (0..n).map(|_| r.gen_range(1.0..6.0)).collect();
            let target = &q * DMatrix::from_diagonal(&DVector::from_vec(gam)) * q.transpose();
            let target = linalg::symmetrize(&target);
            let (s, _, _) = solve_spectral(&target, k, Ok).unwrap();
            let res = (linalg::power_sum(&s, k) - &target).norm() / target.norm();
            prop_assert!(res < 1e-8);
        }
    }
}
