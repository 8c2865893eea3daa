//! Alignment functionals `y~^T Theta~ y~`, their lower bounds and the
//! inequality checkers relating graph filter, linear GNN and tanh GNN
//! alignments.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{stack, BlockDiagShift, Dataset, NtkMatrix, ShiftOperator};
use crate::error::{Error, Result};
use crate::hermite::{self, ExpansionConstants};
use crate::linalg;
use crate::models::Activation;
use crate::ntk::{expectation_e_first_layer, expectation_e_quadrature, expectation_e_series, ZVectors};
use crate::quadrature::QuadConfig;
use crate::shiftops::{self, CrossCovariance, GsoSolution, GsoSolveConfig};

/// Absolute slack for inequality checks, scaled by the magnitude of the sides.
pub const CHECK_SLACK: f64 = 1e-9;

fn slack(a: f64, b: f64) -> f64 {
    CHECK_SLACK * a.abs().max(b.abs()).max(1.0)
}

/// `Q = sum_k S~^k y~ y~^T S~^k`.
pub fn q_matrix(s: &DMatrix<f64>, d: &Dataset, k: usize) -> Result<DMatrix<f64>> {
    let zy = BlockDiagShift::new(s, d.m()).krylov(&stack(d).y, k)?;
    Ok(&zy * zy.transpose())
}

/// `y~^T Theta~ y~`.
pub fn alignment(theta: &NtkMatrix, y: &DVector<f64>) -> Result<f64> {
    if theta.theta.nrows() != y.len() {
        return Err(Error::Dimension(format!("NTK of size {} against y of length {}", theta.theta.nrows(), y.len())));
    }
    Ok(linalg::quad_form(&theta.theta, y))
}

/// `t_j = tr(Y^T S^j X)` for `j < count`.
fn trace_terms(s: &DMatrix<f64>, d: &Dataset, count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    let mut cur = d.x.clone();
    for j in 0..count {
        if j > 0 {
            cur = s * &cur;
        }
        out.push(d.y.dot(&cur));
    }
    out
}

/// `sum_k (tr(Y^T S^k X))^2`, the graph filter alignment.
pub fn alignment_filt(s: &DMatrix<f64>, d: &Dataset, k: usize) -> f64 {
    trace_terms(s, d, k).iter().map(|t| t * t).sum()
}

/// Unnormalised symmetrized cross-covariance `(X Y^T + Y X^T) / 2`.
pub fn raw_cross_covariance(d: &Dataset) -> DMatrix<f64> {
    let xy = &d.x * d.y.transpose();
    (&xy + xy.transpose()) * 0.5
}

/// `(tr((sum_k S^k) C_XY) / sqrt K)^2` together with the `C_XY` used.
pub fn alignment_lower_bound(s: &DMatrix<f64>, d: &Dataset, k: usize) -> (f64, DMatrix<f64>) {
    let c = raw_cross_covariance(d);
    let t = linalg::power_sum(s, k).dot(&c);
    (t * t / k as f64, c)
}

/// `sum_{k,k'} (tr(Y^T S^{k+k'} X))^2 = tr(Q B_lin)`.
pub fn alignment_lin(s: &DMatrix<f64>, d: &Dataset, k: usize) -> f64 {
    let t = trace_terms(s, d, 2 * k - 1);
    let mut acc = 0.0;
    for a in 0..k {
        for b in 0..k {
            acc += t[a + b] * t[a + b];
        }
    }
    acc
}

fn double_sum_trace(s: &DMatrix<f64>, d: &Dataset, k: usize) -> f64 {
    let c = raw_cross_covariance(d);
    linalg::double_power_sum(s, k).dot(&c)
}

/// `(tr((sum_{k,k'} S^{k+k'}) C_XY) / sqrt K)^2`.
pub fn alignment_lin_lower_bound(s: &DMatrix<f64>, d: &Dataset, k: usize) -> f64 {
    let t = double_sum_trace(s, d, k);
    t * t / k as f64
}

/// `(tr((sum_{k,k'} S^{k+k'}) C_XY) / K)^2`: Cauchy–Schwarz over the `K^2`
/// terms of the double sum, a valid lower bound on the linear GNN alignment.
pub fn alignment_lin_cauchy_schwarz_bound(s: &DMatrix<f64>, d: &Dataset, k: usize) -> f64 {
    let t = double_sum_trace(s, d, k) / k as f64;
    t * t
}

/// Solves `sum_{k,k'} S^{k+k'} = mu C` with `mu` from the budget.
pub fn solve_optimal_gso_linear_gnn(c: &CrossCovariance, cfg: &GsoSolveConfig) -> Result<GsoSolution> {
    let mu = cfg.mu(c)?;
    shiftops::solve_double_power_sum(&(&c.c * mu), cfg.k, mu, cfg.mu_mode)
}

#[derive(Debug, Clone, Serialize)]
pub struct AlignmentReport {
    /// Tanh GNN second-layer alignment, when requested.
    pub a: Option<f64>,
    pub a_filt: f64,
    pub a_lin: f64,
    pub a_l: f64,
    pub a_l_prime: f64,
    pub a_l_prime_cauchy_schwarz: f64,
    pub constraint_lhs: f64,
    pub budget: f64,
    pub xi_observed: f64,
    pub constants: Option<ExpansionConstants>,
}

/// `A_lin / (||Q||_F ||B_lin||_F)`, 0 when either factor vanishes.
pub fn xi_observed(q: &DMatrix<f64>, b_lin: &DMatrix<f64>, a_lin: f64) -> f64 {
    let den = q.norm() * b_lin.norm();
    if den == 0.0 {
        0.0
    } else {
        a_lin / den
    }
}

pub struct ReportOptions {
    pub alpha: f64,
    pub eta: f64,
    /// Adds the tanh GNN alignment (quadrature `E`) and the bound constants.
    pub with_gnn: Option<f64>,
}

pub fn alignment_report(s: &ShiftOperator, d: &Dataset, k: usize, opts: &ReportOptions) -> Result<AlignmentReport> {
    let sm = s.matrix();
    let z = ZVectors::new(sm, d, k)?;
    let bl = z.gram();
    let q = q_matrix(sm, d, k)?;
    let a_lin = alignment_lin(sm, d, k);
    let (a, constants) = match opts.with_gnn {
        Some(nu) => {
            let e = expectation_e_quadrature(&z, Activation::Tanh, &QuadConfig::default())?;
            (Some(q.dot(&e.e)), Some(ExpansionConstants::new(nu, k)?))
        }
        None => (None, None),
    };
    Ok(AlignmentReport {
        a,
        a_filt: alignment_filt(sm, d, k),
        a_lin,
        a_l: alignment_lower_bound(sm, d, k).0,
        a_l_prime: alignment_lin_lower_bound(sm, d, k),
        a_l_prime_cauchy_schwarz: alignment_lin_cauchy_schwarz_bound(sm, d, k),
        constraint_lhs: shiftops::constraint_lhs(s, k),
        budget: shiftops::budget(opts.alpha, opts.eta, d.m()),
        xi_observed: xi_observed(&q, &bl, a_lin),
        constants,
    })
}

/// One side-by-side comparison `lhs >= rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
}

impl InequalityCheck {
    pub fn new(lhs: f64, rhs: f64) -> Self {
        Self { lhs, rhs, margin: lhs - rhs, pass: lhs >= rhs - slack(lhs, rhs) }
    }
}

/// Graph filter alignment against its trace lower bound.
pub fn check_filter_lower_bound(s: &DMatrix<f64>, d: &Dataset, k: usize) -> InequalityCheck {
    InequalityCheck::new(alignment_filt(s, d, k), alignment_lower_bound(s, d, k).0)
}

/// Linear GNN alignment against its `1/sqrt K` trace bound.
pub fn check_lin_lower_bound(s: &DMatrix<f64>, d: &Dataset, k: usize) -> InequalityCheck {
    InequalityCheck::new(alignment_lin(s, d, k), alignment_lin_lower_bound(s, d, k))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BudgetImplication {
    pub constraint_lhs: f64,
    pub budget: f64,
    pub premise: bool,
    /// `eta ||Theta~_filt||_op`.
    pub eta_op_norm: f64,
    pub alpha: f64,
    /// `M sum_k ||S^k||_F^2`, the bound that holds without the premise.
    pub power_bound: f64,
    pub pass: bool,
}

/// Whether `||sum_k S^k||_F <= sqrt(alpha/(eta M))` forces
/// `eta ||Theta~_filt||_op <= alpha`; vacuous pass when the premise fails.
pub fn check_budget_implication(s: &DMatrix<f64>, d: &Dataset, k: usize, alpha: f64, eta: f64) -> Result<BudgetImplication> {
    let lhs = linalg::power_sum(s, k).norm();
    let b = shiftops::budget(alpha, eta, d.m());
    let z = ZVectors::new(s, d, k)?;
    // ||Z Z^T||_op = ||Z^T Z||_op, a K x K problem
    let op = linalg::sym_op_norm(&(z.z.transpose() * &z.z));
    let power_bound = d.m() as f64 * (0..k).map(|j| linalg::matrix_power(s, j).norm_squared()).sum::<f64>();
    let premise = lhs <= b;
    let eta_op = eta * op;
    Ok(BudgetImplication {
        constraint_lhs: lhs,
        budget: b,
        premise,
        eta_op_norm: eta_op,
        alpha,
        power_bound,
        pass: !premise || eta_op <= alpha + slack(eta_op, alpha),
    })
}

/// `sigma_hat(||z_a||^2)` per row.
fn sigma_hat_rows(z: &ZVectors) -> Result<Vec<f64>> {
    z.norms().par_iter().map(|&y| hermite::sigma_hat(y * y)).collect()
}

fn first_term(z: &ZVectors, sig: &[f64]) -> DMatrix<f64> {
    let mut b = z.gram();
    for a in 0..b.nrows() {
        for c in 0..b.ncols() {
            b[(a, c)] *= sig[a] * sig[c];
        }
    }
    b
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FirstTermBound {
    /// `tr(Q B)`.
    pub tr_qb: f64,
    pub a_lin: f64,
    pub rho: f64,
    /// `min_a sigma_hat(||z_a||^2)^2`.
    pub lambda_min_sq: f64,
    pub op_norm: f64,
    pub nu: f64,
    pub pass: bool,
}

fn check_normalized(d: &Dataset) -> Result<()> {
    if !d.normalized {
        return Err(Error::InvalidArgument("bound checks need normalized data (max ||x_i|| <= 1)".into()));
    }
    Ok(())
}

fn check_nu(s: &DMatrix<f64>, nu: f64) -> Result<f64> {
    let op = linalg::sym_op_norm(s);
    if op > nu * (1.0 + 1e-12) {
        return Err(Error::Precondition { norm: op, nu });
    }
    Ok(op)
}

/// `tr(Q B) >= rho A_lin` with `B = D B_lin D`, `D = diag sigma_hat(||z_a||^2)`.
pub fn check_first_term_bound(s: &DMatrix<f64>, d: &Dataset, k: usize, nu: f64) -> Result<FirstTermBound> {
    check_normalized(d)?;
    let op = check_nu(s, nu)?;
    let z = ZVectors::new(s, d, k)?;
    let sig = sigma_hat_rows(&z)?;
    let b = first_term(&z, &sig);
    let q = q_matrix(s, d, k)?;
    let tr_qb = q.dot(&b);
    let a_lin = alignment_lin(s, d, k);
    let rho = hermite::rho_constant(nu, k)?;
    let lmin = sig.iter().cloned().fold(f64::INFINITY, f64::min);
    let rhs = rho * a_lin;
    Ok(FirstTermBound {
        tr_qb,
        a_lin,
        rho,
        lambda_min_sq: lmin * lmin,
        op_norm: op,
        nu,
        pass: tr_qb >= rhs - slack(tr_qb, rhs),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailDomination {
    pub entries: usize,
    pub sign_violations: usize,
    pub magnitude_violations: usize,
    /// `max |Delta B_ab| / |B_ab|` over entries with `B_ab != 0`.
    pub worst_ratio: f64,
    pub beta: f64,
    pub pass: bool,
}

/// Elementwise sign agreement of `Delta B` with `B` and `|Delta B| <= beta |B|`.
pub fn check_tail_domination(b: &DMatrix<f64>, db: &DMatrix<f64>, beta: f64) -> TailDomination {
    let mut sign_v = 0;
    let mut mag_v = 0;
    let mut worst = 0.0f64;
    for (x, dx) in b.iter().zip(db.iter()) {
        if x * dx < 0.0 && dx.abs() > 1e-15 * x.abs().max(1e-300) {
            sign_v += 1;
        }
        if dx.abs() > beta * x.abs() + 1e-12 {
            mag_v += 1;
        }
        if *x != 0.0 {
            worst = worst.max(dx.abs() / x.abs());
        }
    }
    TailDomination {
        entries: b.len(),
        sign_violations: sign_v,
        magnitude_violations: mag_v,
        worst_ratio: worst,
        beta,
        pass: sign_v == 0 && mag_v == 0,
    }
}

/// Tail domination for the tanh series expansion of `E` truncated at `l`.
pub fn check_series_tail(z: &ZVectors, l: usize, beta: f64) -> Result<TailDomination> {
    let e = expectation_e_series(z, Activation::Tanh, l, &QuadConfig::default())?;
    let (b, db) = e.decomposition.expect("series method decomposes");
    Ok(check_tail_domination(&b, &db, beta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    /// The constant factor is not positive; nothing to check.
    Vacuous,
    AssumptionUnmet,
    Holds,
    Violated,
}

#[derive(Debug, Clone, Serialize)]
pub struct GnnBoundReport {
    /// Alignment of the nonlinear kernel, `tr(Q E)`.
    pub a: f64,
    pub a_lin: f64,
    pub tr_qb: f64,
    pub xi_observed: f64,
    pub xi_used: f64,
    pub c: f64,
    pub d: f64,
    pub factor: f64,
    pub status: BoundStatus,
    /// `tr(Q B) / (||Q||_F ||B||_F)`.
    pub xi_b: f64,
    /// `1 - (beta/2)(1/xi_b - 1)`.
    pub instance_factor: f64,
    pub instance_status: BoundStatus,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

fn bound_status(factor: f64, lhs: f64, rhs_unit: f64) -> BoundStatus {
    if factor <= 0.0 {
        return BoundStatus::Vacuous;
    }
    let rhs = factor * rhs_unit;
    if lhs >= rhs - slack(lhs, rhs) {
        BoundStatus::Holds
    } else {
        BoundStatus::Violated
    }
}

fn gnn_bound(
    a: f64,
    q: &DMatrix<f64>,
    b: &DMatrix<f64>,
    bl: &DMatrix<f64>,
    sig: &[f64],
    a_lin: f64,
    c: f64,
    dcoef: f64,
    beta: f64,
    xi: Option<f64>,
) -> GnnBoundReport {
    let xi_obs = xi_observed(q, bl, a_lin);
    let tr_qb = q.dot(b);
    let xi_used = xi.unwrap_or(xi_obs);
    let factor = if xi_used > 0.0 { c - dcoef / xi_used } else { f64::NEG_INFINITY };
    let status = match xi {
        Some(req) if xi_obs < req => BoundStatus::AssumptionUnmet,
        _ => bound_status(factor, a, a_lin),
    };
    let den = q.norm() * b.norm();
    let xi_b = if den > 0.0 { tr_qb / den } else { 0.0 };
    let instance_factor = if xi_b > 0.0 { 1.0 - beta / 2.0 * (1.0 / xi_b - 1.0) } else { f64::NEG_INFINITY };
    GnnBoundReport {
        a,
        a_lin,
        tr_qb,
        xi_observed: xi_obs,
        xi_used,
        c,
        d: dcoef,
        factor,
        status,
        xi_b,
        instance_factor,
        instance_status: bound_status(instance_factor, a, tr_qb),
        lambda_min: sig.iter().cloned().fold(f64::INFINITY, f64::min),
        lambda_max: sig.iter().cloned().fold(0.0, f64::max),
    }
}

/// Tanh GNN alignment `A = tr(Q E)` against `(c - d/xi) A_lin`, plus the
/// instance-level bound `A >= (1 - (beta/2)(1/xi_B - 1)) tr(Q B)`.
/// `xi = None` uses the observed value.
pub fn check_gnn_alignment_bound(
    s: &DMatrix<f64>,
    d: &Dataset,
    k: usize,
    nu: f64,
    xi: Option<f64>,
    constants: &ExpansionConstants,
) -> Result<GnnBoundReport> {
    check_normalized(d)?;
    check_nu(s, nu)?;
    let z = ZVectors::new(s, d, k)?;
    let sig = sigma_hat_rows(&z)?;
    let b = first_term(&z, &sig);
    let e = expectation_e_quadrature(&z, Activation::Tanh, &QuadConfig::default())?;
    let q = q_matrix(s, d, k)?;
    let bl = z.gram();
    let a_lin = q.dot(&bl);
    Ok(gnn_bound(q.dot(&e.e), &q, &b, &bl, &sig, a_lin, constants.c, constants.d, constants.beta, xi))
}

#[derive(Debug, Clone, Serialize)]
pub struct FirstLayerReport {
    pub first_term: FirstTermBound,
    pub tail: TailDomination,
    pub bound: GnnBoundReport,
}

/// First-layer analogue: `A1 = tr(Q E1)`, `B1 = D B_lin D`, with constants
/// `rho1`, `beta1` and `b = rho1 (1 + beta1/2)`, `s = (beta1/2)(sup/rho1)^2`.
pub fn check_first_layer_alignment_bound(
    s: &DMatrix<f64>,
    d: &Dataset,
    k: usize,
    nu: f64,
    beta1: f64,
    xi: Option<f64>,
) -> Result<FirstLayerReport> {
    check_normalized(d)?;
    let op = check_nu(s, nu)?;
    let z = ZVectors::new(s, d, k)?;
    let sig = sigma_hat_rows(&z)?;
    let b1 = first_term(&z, &sig);
    let e1 = expectation_e_first_layer(&z, Activation::Tanh, &QuadConfig::default())?;
    let db1 = &e1 - &b1;
    let q = q_matrix(s, d, k)?;
    let bl = z.gram();
    let a_lin = q.dot(&bl);
    let rho1 = hermite::rho_first_layer(nu, k)?;
    let tr_qb = q.dot(&b1);
    let lmin = sig.iter().cloned().fold(f64::INFINITY, f64::min);
    let first = FirstTermBound {
        tr_qb,
        a_lin,
        rho: rho1,
        lambda_min_sq: lmin * lmin,
        op_norm: op,
        nu,
        pass: tr_qb >= rho1 * a_lin - slack(tr_qb, rho1 * a_lin),
    };
    let tail = check_tail_domination(&b1, &db1, beta1);
    let sup = hermite::sigma_hat_sup();
    let bc = rho1 * (1.0 + beta1 / 2.0);
    let sc = beta1 / 2.0 * (sup / rho1).powi(2);
    let bound = gnn_bound(q.dot(&e1), &q, &b1, &bl, &sig, a_lin, bc, sc, beta1, xi);
    Ok(FirstLayerReport { first_term: first, tail, bound })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalityReport {
    pub samples: usize,
    pub a_l_optimal: f64,
    pub best_sampled: f64,
    pub violations: usize,
}

/// Samples symmetric `S` on the boundary `||I + S||_F = budget` and compares
/// `A_L(S)` with `A_L(mu C_XY - I)`; `K = 2`.
pub fn optimality_sweep(d: &Dataset, alpha: f64, eta: f64, samples: usize, seed: u64) -> Result<OptimalityReport> {
    let n = d.n();
    let c = raw_cross_covariance(d);
    let cc = CrossCovariance { c: c.clone(), mode: shiftops::CrossMode::Symmetrized, normalized: false };
    let cfg = GsoSolveConfig { k: 2, alpha, eta, m: d.m(), mu_mode: shiftops::MuMode::Exact };
    let opt = shiftops::solve_optimal_gso(&cc, &cfg)?;
    let a_opt = alignment_lower_bound(opt.shift.matrix(), d, 2).0;
    let b = shiftops::budget(alpha, eta, d.m());
    let best: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let r = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
            let p = linalg::symmetrize(&r);
            let p = &p * (b / p.norm());
            let s = p - DMatrix::identity(n, n);
            alignment_lower_bound(&s, d, 2).0
        })
        .collect();
    let violations = best.iter().filter(|&&v| v > a_opt + slack(v, a_opt)).count();
    Ok(OptimalityReport {
        samples,
        a_l_optimal: a_opt,
        best_sampled: best.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        violations,
    })
}

/// Sizes drawn for random normalized instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InstanceRanges {
    pub n: (usize, usize),
    pub m: (usize, usize),
    pub k: (usize, usize),
}

impl Default for InstanceRanges {
    fn default() -> Self {
        Self { n: (2, 6), m: (1, 5), k: (1, 4) }
    }
}

/// Random instance with `||S||_F = 1` and globally normalized Gaussian data.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub seed: u64,
    pub s: DMatrix<f64>,
    pub data: Dataset,
    pub k: usize,
}

pub fn random_instance(seed: u64, ranges: &InstanceRanges) -> RandomInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(ranges.n.0..=ranges.n.1);
    let m = rng.gen_range(ranges.m.0..=ranges.m.1);
    let k = rng.gen_range(ranges.k.0..=ranges.k.1);
    let r = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let s = linalg::symmetrize(&r);
    let s = &s / s.norm();
    let x = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let data = Dataset::new(x, y).expect("shapes match").normalize_global().0;
    RandomInstance { seed, s, data, k }
}

/// Summary of one property over many instances.
#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub name: String,
    pub instances: usize,
    pub violations: usize,
    /// Smallest `lhs - rhs` (or equivalent margin) seen.
    pub worst_margin: f64,
    pub worst_seed: u64,
    /// Seeds of the first violating instances, for reproduction.
    pub violating_seeds: Vec<u64>,
}

impl SweepReport {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

/// Runs `check` on instances `seed0..seed0+count`; `check` returns
/// `(margin, pass)`.
pub fn sweep<F>(name: &str, count: usize, seed0: u64, ranges: &InstanceRanges, check: F) -> Result<SweepReport>
where
    F: Fn(&RandomInstance) -> Result<(f64, bool)> + Sync,
{
    let results: Vec<Result<(u64, f64, bool)>> = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let inst = random_instance(seed0 + i, ranges);
            check(&inst).map(|(m, p)| (inst.seed, m, p))
        })
        .collect();
    let mut report = SweepReport {
        name: name.to_string(),
        instances: count,
        violations: 0,
        worst_margin: f64::INFINITY,
        worst_seed: seed0,
        violating_seeds: Vec::new(),
    };
    for r in results {
        let (seed, margin, pass) = r?;
        if margin < report.worst_margin {
            report.worst_margin = margin;
            report.worst_seed = seed;
        }
        if !pass {
            report.violations += 1;
            if report.violating_seeds.len() < 20 {
                report.violating_seeds.push(seed);
            }
        }
    }
    Ok(report)
}

/// The standard battery of inequality sweeps on `count` instances each.
pub fn standard_sweeps(count: usize, seed: u64, beta: f64) -> Result<Vec<SweepReport>> {
    let ranges = InstanceRanges::default();
    let small = InstanceRanges { n: (2, 5), m: (1, 4), k: (1, 3) };
    Ok(vec![
        sweep("filter_alignment_lower_bound", count, seed, &ranges, |i| {
            let c = check_filter_lower_bound(&i.s, &i.data, i.k);
            Ok((c.margin, c.pass))
        })?,
        sweep("linear_gnn_lower_bound", count, seed, &ranges, |i| {
            let c = check_lin_lower_bound(&i.s, &i.data, i.k);
            Ok((c.margin, c.pass))
        })?,
        sweep("linear_gnn_cauchy_schwarz_bound", count, seed, &ranges, |i| {
            let c = InequalityCheck::new(
                alignment_lin(&i.s, &i.data, i.k),
                alignment_lin_cauchy_schwarz_bound(&i.s, &i.data, i.k),
            );
            Ok((c.margin, c.pass))
        })?,
        sweep("budget_implication", count, seed, &ranges, |i| {
            // put the instance on the boundary of the Frobenius budget
            let eta = 0.1;
            let lhs = linalg::power_sum(&i.s, i.k).norm();
            let alpha = eta * i.data.m() as f64 * lhs * lhs;
            let c = check_budget_implication(&i.s, &i.data, i.k, alpha, eta)?;
            Ok((c.alpha - c.eta_op_norm, c.pass))
        })?,
        sweep("first_term_bound", count, seed, &small, |i| {
            let c = check_first_term_bound(&i.s, &i.data, i.k, 1.0)?;
            Ok((c.tr_qb - c.rho * c.a_lin, c.pass))
        })?,
        sweep("series_tail_domination", count, seed, &small, |i| {
            let z = ZVectors::new(&i.s, &i.data, i.k)?;
            let c = check_series_tail(&z, hermite::DEFAULT_L, beta)?;
            Ok((beta - c.worst_ratio, c.pass))
        })?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ntk::filter_ntk;
    use proptest::prelude::*;

    fn inst(seed: u64) -> RandomInstance {
        random_instance(seed, &InstanceRanges::default())
    }

    #[test]
    fn alignment_elementary() {
        let i = inst(1);
        let dim = i.data.n() * i.data.m();
        let t = NtkMatrix::new(DMatrix::identity(dim, dim), crate::data::NtkProvenance::FilterAnalytic, i.data.n(), i.data.m());
        let y = stack(&i.data).y;
        assert!((alignment(&t, &y).unwrap() - y.norm_squared()).abs() < 1e-14);
        assert_eq!(alignment(&t, &DVector::zeros(dim)).unwrap(), 0.0);
        assert!(alignment(&t, &DVector::zeros(dim + 1)).is_err());
    }

    #[test]
    fn trace_forms_match_quadratic_forms() {
        for seed in 0..20 {
            let i = inst(seed);
            let (s, d, k) = (&i.s, &i.data, i.k);
            let y = stack(d).y;
            let a = alignment(&filter_ntk(s, d, k).unwrap(), &y).unwrap();
            let af = alignment_filt(s, d, k);
            assert!((a - af).abs() <= 1e-9 * af.max(1e-12));
            // tr(Q B_lin) with explicit matrices
            let q = q_matrix(s, d, k).unwrap();
            let bl = ZVectors::new(s, d, k).unwrap().gram();
            let al = alignment_lin(s, d, k);
            assert!((q.dot(&bl) - al).abs() <= 1e-9 * al.max(1e-12));
            // rank of Q
            let rank = linalg::sym_eigenvalues(&q).iter().filter(|&&v| v > 1e-10 * q.norm()).count();
            assert!(rank <= k);
        }
    }

    #[test]
    fn k_one_reductions() {
        let i = inst(3);
        let d = &i.data;
        let t = d.y.dot(&d.x);
        assert!((alignment_filt(&i.s, d, 1) - t * t).abs() < 1e-12);
        assert!((alignment_lower_bound(&i.s, d, 1).0 - t * t).abs() < 1e-12);
        assert!((alignment_lin(&i.s, d, 1) - t * t).abs() < 1e-12);
        assert!((alignment_lin_lower_bound(&i.s, d, 1) - t * t).abs() < 1e-12);
        let zero = Dataset::new(d.x.clone(), DMatrix::zeros(d.n(), d.m())).unwrap();
        assert_eq!(alignment_filt(&i.s, &zero, 3), 0.0);
        assert_eq!(alignment_lower_bound(&i.s, &zero, 3).0, 0.0);
        assert_eq!(alignment_lin_lower_bound(&i.s, &zero, 3), 0.0);
    }

    #[test]
    fn lin_alignment_orthogonal_case() {
        // S = diag(1, 0), x = e1, y = e2: every S^j x is along e1
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 0.0]));
        let d = Dataset::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), DMatrix::from_column_slice(2, 1, &[0.0, 1.0]))
            .unwrap();
        assert_eq!(alignment_lin(&s, &d, 3), 0.0);
    }

    #[test]
    fn linear_gnn_gso_cases() {
        let c = |m: DMatrix<f64>| CrossCovariance { c: m, mode: shiftops::CrossMode::Symmetrized, normalized: false };
        // mu C = I -> s = 0 ; mu C = 4 I -> s = 1, with mu fixed through the budget
        for (target, want) in [(1.0, 0.0), (4.0, 1.0)] {
            let n = 3;
            let cm = DMatrix::identity(n, n);
            // budget = target * ||I||_F so that mu = target
            let b = target * (n as f64).sqrt();
            let cfg = GsoSolveConfig { k: 2, alpha: b * b, eta: 1.0, m: 1, mu_mode: shiftops::MuMode::Exact };
            let sol = solve_optimal_gso_linear_gnn(&c(cm), &cfg).unwrap();
            assert!((sol.shift.matrix() - DMatrix::identity(n, n) * want).norm() < 1e-10);
        }
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let cfg = GsoSolveConfig { k: 2, alpha: 1.0, eta: 1.0, m: 1, mu_mode: shiftops::MuMode::Exact };
        assert!(matches!(solve_optimal_gso_linear_gnn(&c(neg), &cfg), Err(Error::NegativeEigenvalue(_))));
        for seed in 0..5 {
            let i = inst(seed);
            let raw = raw_cross_covariance(&i.data);
            let psd = &raw * &raw;
            let cfg = GsoSolveConfig { k: 2, alpha: 1.0, eta: 0.5, m: 4, mu_mode: shiftops::MuMode::Exact };
            let sol = solve_optimal_gso_linear_gnn(&c(psd), &cfg).unwrap();
            assert!(sol.residual <= 1e-8);
        }
    }

    #[test]
    fn budget_implication_counterexample() {
        // ||I + S||_F = 0 for S = -I, yet the kernel norm is 2 ||x||^2
        let s = -DMatrix::<f64>::identity(1, 1);
        let d = Dataset::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let c = check_budget_implication(&s, &d, 2, 0.5, 1.0).unwrap();
        assert!(c.premise);
        assert!((c.eta_op_norm - 2.0).abs() < 1e-14);
        assert!(!c.pass);
        assert!(c.eta_op_norm <= c.power_bound);
    }

    #[test]
    fn first_term_identity_linear_case() {
        // with B replaced by B_lin the bound is an identity; rho -> 1 as nu -> 0
        let i = inst(4);
        let z = ZVectors::new(&i.s, &i.data, i.k).unwrap();
        let b = first_term(&z, &vec![1.0; z.dim()]);
        let q = q_matrix(&i.s, &i.data, i.k).unwrap();
        assert!((q.dot(&b) - alignment_lin(&i.s, &i.data, i.k)).abs() < 1e-10);
        let zero = Dataset::new(i.data.x.clone(), DMatrix::zeros(i.data.n(), i.data.m())).unwrap();
        let c = check_first_term_bound(&i.s, &zero, i.k, 1.0).unwrap();
        assert_eq!(c.tr_qb, 0.0);
        assert_eq!(c.a_lin, 0.0);
        assert!(c.pass);
        assert!(matches!(check_first_term_bound(&(&i.s * 3.0), &i.data, i.k, 1.0), Err(Error::Precondition { .. })));
    }

    #[test]
    fn tail_domination_diagonal_and_zero() {
        let beta = hermite::beta_constant().unwrap().value;
        let z = ZVectors::from_matrix(DMatrix::from_row_slice(3, 2, &[0.8, 0.0, 0.0, 0.6, 0.5, 0.5]), 3, 1).unwrap();
        let e = expectation_e_series(&z, Activation::Tanh, 21, &QuadConfig::default()).unwrap();
        let (b, db) = e.decomposition.unwrap();
        assert_eq!(b[(0, 1)], 0.0);
        assert_eq!(db[(0, 1)], 0.0);
        for a in 0..3 {
            assert!(b[(a, a)] >= 0.0 && db[(a, a)] >= 0.0);
        }
        assert!(check_tail_domination(&b, &db, beta).pass);
    }

    #[test]
    fn gnn_bound_reports() {
        let k = 2;
        let consts = ExpansionConstants::new(1.0, k).unwrap();
        // the Frobenius-normalized constants leave no room: c - d/xi <= c - d < 0
        assert!(consts.bound_factor(1.0) < 0.0);
        // planted instance: Y = (I + S) X
        let i = random_instance(5, &InstanceRanges { n: (4, 4), m: (3, 3), k: (2, 2) });
        let y = (DMatrix::identity(4, 4) + &i.s) * &i.data.x;
        let d = Dataset::new(i.data.x.clone(), y).unwrap().normalize_global().0;
        let r = check_gnn_alignment_bound(&i.s, &d, k, 1.0, None, &consts).unwrap();
        assert_eq!(r.status, BoundStatus::Vacuous);
        assert!(r.xi_observed > 0.5);
        assert_ne!(r.instance_status, BoundStatus::Violated);
        assert!(r.a > 0.0);
        let r2 = check_gnn_alignment_bound(&i.s, &d, k, 1.0, Some(0.999_999), &consts).unwrap();
        assert_eq!(r2.status, BoundStatus::AssumptionUnmet);
    }

    #[test]
    fn first_layer_report() {
        let i = random_instance(6, &InstanceRanges { n: (3, 3), m: (3, 3), k: (2, 2) });
        let r = check_first_layer_alignment_bound(&i.s, &i.data, 2, 1.0, 0.7, None).unwrap();
        assert!(r.first_term.pass);
        assert!(r.tail.pass, "{:?}", r.tail);
        assert_ne!(r.bound.instance_status, BoundStatus::Violated);
    }

    #[test]
    fn optimality_sweep_small() {
        let i = random_instance(7, &InstanceRanges { n: (4, 4), m: (5, 5), k: (2, 2) });
        let r = optimality_sweep(&i.data, 1.0, 0.1, 200, 1).unwrap();
        assert_eq!(r.violations, 0);
        assert!(r.best_sampled <= r.a_l_optimal);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn filter_bound_and_sign_invariance(seed in 0u64..100_000) {
            let i = inst(seed);
            prop_assert!(check_filter_lower_bound(&i.s, &i.data, i.k).pass);
            let lin = alignment_lin(&i.s, &i.data, i.k);
            prop_assert!(lin + slack(lin, 0.0) >= alignment_lin_cauchy_schwarz_bound(&i.s, &i.data, i.k));
            let flipped = Dataset::new(i.data.x.clone(), -&i.data.y).unwrap();
            let a = alignment_filt(&i.s, &i.data, i.k);
            prop_assert!((alignment_filt(&i.s, &flipped, i.k) - a).abs() <= 1e-12 * a.max(1.0));
        }
    }
}
