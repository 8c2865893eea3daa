//! Orthonormal Hermite polynomials, Gaussian expansion coefficients of
//! `tanh(y u)` and `sech^2(y u)`, and the expansion constants built on them.
//!
//! All coefficients are taken under the standard normal probability measure,
//! `alpha_l = E[f(u) p_l(u)]` with `E[p_j p_k] = delta_jk`. Under the
//! unnormalised inner product `int f g e^{-u^2/2} du` every coefficient picks
//! up a factor `sqrt(2 pi)`; ratios are unaffected.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::{self, graded_rule, QuadConfig, QuadMethod, Rule, GRADED_LEVELS};

/// Largest supported polynomial degree.
pub const MAX_DEGREE: usize = 1024;
/// Default odd truncation for coefficient series.
pub const DEFAULT_L: usize = 21;
/// Highest order handled by the derivative form of a coefficient.
const MAX_DERIVATIVE_ORDER: usize = 40;

/// `sqrt(2 pi)`, the factor between the two inner-product conventions.
pub fn unnormalized_scale() -> f64 {
    (2.0 * PI).sqrt()
}

/// `p_l(u)`, with `p_{k+1} = (u p_k - sqrt(k) p_{k-1}) / sqrt(k+1)`.
pub fn hermite_eval(l: usize, u: f64) -> Result<f64> {
    if l > MAX_DEGREE {
        return Err(Error::DegreeOverflow(l, MAX_DEGREE));
    }
    Ok(*hermite_values(l, u).last().unwrap())
}

/// `[p_0(u), ..., p_L(u)]`.
pub fn hermite_values(l_max: usize, u: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(l_max + 1);
    out.push(1.0);
    if l_max == 0 {
        return out;
    }
    out.push(u);
    for k in 1..l_max {
        let kf = k as f64;
        let next = (u * out[k] - kf.sqrt() * out[k - 1]) / (kf + 1.0).sqrt();
        out.push(next);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    ProbabilistOrthonormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HermiteBasis {
    pub max_degree: usize,
    pub normalization: Normalization,
}

impl HermiteBasis {
    pub fn new(max_degree: usize) -> Result<Self> {
        if max_degree > MAX_DEGREE {
            return Err(Error::DegreeOverflow(max_degree, MAX_DEGREE));
        }
        Ok(Self { max_degree, normalization: Normalization::ProbabilistOrthonormal })
    }

    pub fn eval(&self, u: f64) -> Vec<f64> {
        hermite_values(self.max_degree, u)
    }

    /// `max_{j,k} |E[p_j p_k] - delta_jk|` under an `nq`-point rule.
    pub fn orthonormality_error(&self, nq: usize) -> Result<f64> {
        let rule = quadrature::gauss_hermite(nq)?;
        let l = self.max_degree;
        let mut gram = vec![0.0; (l + 1) * (l + 1)];
        for (&u, &w) in rule.nodes.iter().zip(&rule.weights) {
            let p = hermite_values(l, u);
            for j in 0..=l {
                for k in 0..=l {
                    gram[j * (l + 1) + k] += w * p[j] * p[k];
                }
            }
        }
        let mut worst = 0.0f64;
        for j in 0..=l {
            for k in 0..=l {
                let d = if j == k { 1.0 } else { 0.0 };
                worst = worst.max((gram[j * (l + 1) + k] - d).abs());
            }
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CoeffKind {
    /// Coefficients `g_l(y)` of `u -> tanh(y u)`.
    ActivationTanh,
    /// Coefficients `tau_l(y^2)` of `u -> sech^2(y u)`.
    DerivativeSech2,
}

impl CoeffKind {
    /// The expanded function at scale `y`.
    pub fn eval(self, y: f64, u: f64) -> f64 {
        match self {
            CoeffKind::ActivationTanh => (y * u).tanh(),
            CoeffKind::DerivativeSech2 => {
                let c = (y * u).cosh();
                if c.is_finite() {
                    1.0 / (c * c)
                } else {
                    0.0
                }
            }
        }
    }

    /// Parity of the expanded function: true when odd.
    pub fn is_odd(self) -> bool {
        matches!(self, CoeffKind::ActivationTanh)
    }

    /// Converts a grid argument to the scale `y`; sech^2 coefficients are
    /// indexed by `y^2`.
    pub fn scale_of(self, arg: f64) -> f64 {
        match self {
            CoeffKind::ActivationTanh => arg,
            CoeffKind::DerivativeSech2 => arg.sqrt(),
        }
    }

    fn derivative_shift(self) -> usize {
        match self {
            CoeffKind::ActivationTanh => 0,
            CoeffKind::DerivativeSech2 => 1,
        }
    }
}

/// Coefficients `alpha_0..alpha_L` of one function at one scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HermiteCoeffs {
    pub kind: CoeffKind,
    pub scale: f64,
    pub coeffs: Vec<f64>,
    /// `E[f^2]`, the total coefficient energy.
    pub energy: f64,
    pub method: QuadMethod,
}

impl HermiteCoeffs {
    /// `E[f^2] - sum_{l<=L} alpha_l^2`, clamped at 0.
    pub fn parseval_gap(&self) -> f64 {
        (self.energy - self.coeffs.iter().map(|c| c * c).sum::<f64>()).max(0.0)
    }
}

fn table_on_rule(kind: CoeffKind, y: f64, l_max: usize, rule: &Rule) -> (Vec<f64>, f64) {
    let mut coeffs = vec![0.0; l_max + 1];
    let mut energy = 0.0;
    for (&u, &w) in rule.nodes.iter().zip(&rule.weights) {
        if w == 0.0 {
            continue;
        }
        let fv = kind.eval(y, u);
        let wf = w * fv;
        energy += wf * fv;
        let p = hermite_values(l_max, u);
        for (c, pv) in coeffs.iter_mut().zip(&p) {
            *c += wf * pv;
        }
    }
    (coeffs, energy)
}

fn tables_agree(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0))
}

/// All coefficients up to degree `l_max` from one quadrature pass per level,
/// escalated until the whole table and `E[f^2]` agree.
pub fn coefficient_table(kind: CoeffKind, y: f64, l_max: usize, cfg: &QuadConfig) -> Result<HermiteCoeffs> {
    if l_max > MAX_DEGREE {
        return Err(Error::DegreeOverflow(l_max, MAX_DEGREE));
    }
    if !(y >= 0.0) || !y.is_finite() {
        return Err(Error::InvalidArgument(format!("scale must be finite and nonnegative, got {y}")));
    }
    let pack = |(mut c, e): (Vec<f64>, f64)| {
        c.push(e);
        c
    };
    // Gauss–Hermite is exact only up to degree 2 nq - 1; skip rules that
    // cannot represent the requested degree.
    let mut nq = cfg.start.max(2);
    while 2 * nq < l_max + 8 && nq < cfg.cap {
        nq *= 2;
    }
    let mut prev = pack(table_on_rule(kind, y, l_max, &*quadrature::gauss_hermite(nq)?));
    while nq < cfg.cap {
        nq *= 2;
        let cur = pack(table_on_rule(kind, y, l_max, &*quadrature::gauss_hermite(nq)?));
        if tables_agree(&cur, &prev, cfg.tol) {
            let energy = cur[l_max + 1];
            return Ok(HermiteCoeffs {
                kind,
                scale: y,
                coeffs: cur[..=l_max].to_vec(),
                energy,
                method: QuadMethod::GaussHermite { nodes: nq },
            });
        }
        prev = cur;
    }
    let width = 1.0 / y.max(1e-12);
    let (c0, r0) = GRADED_LEVELS[0];
    let mut prev = pack(table_on_rule(kind, y, l_max, &graded_rule(&[0.0], width, r0, c0)));
    for &(coarse, refine) in &GRADED_LEVELS[1..] {
        let rule = graded_rule(&[0.0], width, refine, coarse);
        let cur = pack(table_on_rule(kind, y, l_max, &rule));
        if tables_agree(&cur, &prev, cfg.tol) {
            let energy = cur[l_max + 1];
            return Ok(HermiteCoeffs {
                kind,
                scale: y,
                coeffs: cur[..=l_max].to_vec(),
                energy,
                method: QuadMethod::Graded { nodes: rule.len() },
            });
        }
        prev = cur;
    }
    Err(Error::Quadrature(format!("{kind:?} coefficient table at y = {y} did not converge")))
}

/// Coefficients of the polynomial `P_l` with `tanh^{(l)}(x) = P_l(tanh x)`.
fn tanh_derivative_poly(l: usize) -> Vec<f64> {
    let mut p = vec![0.0, 1.0];
    for _ in 0..l {
        // (1 - t^2) P'(t)
        let d: Vec<f64> = p.iter().enumerate().skip(1).map(|(j, c)| j as f64 * c).collect();
        let mut next = vec![0.0; d.len() + 2];
        for (j, c) in d.iter().enumerate() {
            next[j] += c;
            next[j + 2] -= c;
        }
        p = next;
    }
    p
}

fn ln_factorial(l: usize) -> f64 {
    (1..=l).map(|k| (k as f64).ln()).sum()
}

// E|f| to a few digits, enough for a rounding-error bound.
fn rough_magnitude<F: Fn(f64) -> f64>(f: F, y: f64) -> Result<f64> {
    let rule = graded_rule(&[0.0], 1.0 / y.max(1e-12), 4, 0.5);
    rule.expect(|u| f(u).abs())
}

// Value and a rounding-error bound of E[f(u) p_l(u)] by direct quadrature.
fn coeff_direct(kind: CoeffKind, l: usize, y: f64, cfg: &QuadConfig) -> Result<(f64, f64)> {
    let est = quadrature::expectation(|u| kind.eval(y, u) * hermite_eval(l, u).unwrap_or(0.0), y, cfg)?;
    let mag = rough_magnitude(|u| kind.eval(y, u) * hermite_eval(l, u).unwrap_or(0.0), y)?;
    let err = est.error + (l as f64 + 4.0) * f64::EPSILON * mag;
    Ok((est.value, err))
}

// Gaussian integration by parts: E[f(u) p_l(u)] = E[f^{(l)}(u)] / sqrt(l!).
// The l-th derivative of tanh(y u) is y^l P_l(tanh(y u)), and since
// sech^2 = tanh', that of sech^2(y u) is y^l P_{l+1}(tanh(y u)).
// Free of the cancellation that hits the direct form at small y.
fn coeff_derivative(kind: CoeffKind, l: usize, y: f64, cfg: &QuadConfig) -> Result<(f64, f64)> {
    let order = l + kind.derivative_shift();
    let poly = tanh_derivative_poly(order);
    let eval = |t: f64| poly.iter().rev().fold(0.0, |acc, c| acc * t + c);
    let bound = |t: f64| poly.iter().rev().fold(0.0, |acc, c| acc * t.abs() + c.abs());
    let est = quadrature::expectation(|u| eval((y * u).tanh()), y, cfg)?;
    let mag = rough_magnitude(|u| bound((y * u).tanh()), y)?;
    let factor = if y == 0.0 {
        if l == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        (l as f64 * y.ln() - 0.5 * ln_factorial(l)).exp()
    };
    let value = factor * est.value;
    let err = factor * (est.error + (poly.len() as f64 + 4.0) * f64::EPSILON * mag);
    Ok((value, err))
}

fn coeff_accurate(kind: CoeffKind, l: usize, y: f64, cfg: &QuadConfig) -> Result<f64> {
    if l > MAX_DEGREE {
        return Err(Error::DegreeOverflow(l, MAX_DEGREE));
    }
    if !(y > 0.0) || !y.is_finite() {
        return Err(Error::InvalidArgument(format!("scale must be positive and finite, got {y}")));
    }
    let parity_zero = if kind.is_odd() { l % 2 == 0 } else { l % 2 == 1 };
    if parity_zero {
        return Ok(0.0);
    }
    let direct = coeff_direct(kind, l, y, cfg);
    if l + kind.derivative_shift() > MAX_DERIVATIVE_ORDER {
        return direct.map(|d| d.0);
    }
    // either form may fail to converge on its own; keep whichever succeeds
    match (direct, coeff_derivative(kind, l, y, cfg)) {
        (Ok((d, ed)), Ok((v, ev))) => Ok(if ev < ed { v } else { d }),
        (Ok((d, _)), Err(_)) => Ok(d),
        (Err(_), Ok((v, _))) => Ok(v),
        (Err(e), Err(_)) => Err(e),
    }
}

/// `g_l(y) = E[tanh(y u) p_l(u)]`.
pub fn coeff_g(l: usize, y: f64) -> Result<f64> {
    coeff_accurate(CoeffKind::ActivationTanh, l, y, &QuadConfig::default())
}

/// `tau_l(z_sq) = E[sech^2(sqrt(z_sq) u) p_l(u)]`.
pub fn coeff_tau(l: usize, z_sq: f64) -> Result<f64> {
    coeff_accurate(CoeffKind::DerivativeSech2, l, z_sq.sqrt(), &QuadConfig::default())
}

/// `sigma_hat(z_sq) = g_1(sqrt z_sq) / sqrt z_sq`, equal to 1 at 0.
pub fn sigma_hat(z_sq: f64) -> Result<f64> {
    if z_sq < 0.0 || !z_sq.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma_hat argument must be finite and nonnegative, got {z_sq}")));
    }
    if z_sq == 0.0 {
        return Ok(1.0);
    }
    let y = z_sq.sqrt();
    Ok(coeff_g(1, y)? / y)
}

/// `sup sigma_hat`, attained as `z_sq -> 0`.
pub fn sigma_hat_sup() -> f64 {
    1.0
}

/// Odd coefficients `g_{2m+1}` of `sign(u)`, `m = 0..`, up to degree `l_max`.
pub fn sign_coefficients(l_max: usize) -> Vec<f64> {
    // E[sign(u) p_{2m+1}(u)] = 2 phi(0) (-1)^m (2m-1)!! / sqrt((2m+1)!)
    let mut out = vec![0.0; l_max + 1];
    if l_max == 0 {
        return out;
    }
    let mut c = (2.0 / PI).sqrt();
    out[1] = c;
    let mut m = 1;
    while 2 * m + 1 <= l_max {
        let mf = m as f64;
        // ratio of consecutive magnitudes: (2m-1) / sqrt(2m (2m+1))
        c *= -(2.0 * mf - 1.0) / (2.0 * mf * (2.0 * mf + 1.0)).sqrt();
        out[2 * m + 1] = c;
        m += 1;
    }
    out
}

/// `sum_{odd 3 <= l <= L} g_l^2 / g_1^2` for the sign function.
pub fn beta_partial(l_max: usize) -> f64 {
    let c = sign_coefficients(l_max);
    let g1 = c[1] * c[1];
    c.iter().skip(3).step_by(2).map(|v| v * v / g1).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BetaReport {
    pub value: f64,
    /// Explicit partial sum up to `truncation_l`.
    pub partial_sum: f64,
    pub truncation_l: usize,
    /// Asymptotic estimate of the omitted tail, included in `value`.
    pub tail: f64,
    /// Bound on the error of the tail estimate.
    pub residual: f64,
    /// `(1 - 2/pi) / (2/pi)`, total energy of sign minus its first term.
    pub parseval: f64,
}

/// `beta = lim_{y -> inf} sum_{odd l >= 3} g_l(y)^2 / g_1(y)^2`, from the
/// closed-form coefficients of `sign(u)`.
pub fn beta_constant() -> Result<BetaReport> {
    // a_m = g_{2m+1}^2 / g_1^2 = C(2m, m) / (4^m (2m + 1)).
    let terms = 1_000_000usize;
    let mut central = 1.0f64;
    let mut partial = 0.0;
    for m in 1..=terms {
        let mf = m as f64;
        central *= (2.0 * mf - 1.0) / (2.0 * mf);
        partial += central / (2.0 * mf + 1.0);
    }
    // a_m ~ m^{-3/2} (1 - 5/(8m)) / (2 sqrt(pi)); midpoint sums of the tail.
    let x = terms as f64 + 0.5;
    let lead = 2.0 / x.sqrt();
    let next = (5.0 / 8.0) * (2.0 / 3.0) * x.powf(-1.5);
    let tail = (lead - next) / (2.0 * PI.sqrt());
    let residual = 10.0 * next / (2.0 * PI.sqrt());
    let tol = 1e-6;
    if residual > tol {
        return Err(Error::Truncation { residual, tol, l: 2 * terms + 1 });
    }
    Ok(BetaReport {
        value: partial + tail,
        partial_sum: partial,
        truncation_l: 2 * terms + 1,
        tail,
        residual,
        parseval: (1.0 - 2.0 / PI) / (2.0 / PI),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BetaFirstLayerReport {
    pub k: usize,
    pub value: f64,
    /// Even degree at which the series was cut.
    pub truncation_l: usize,
    /// `E[sech^4] / tau_0^2 - 1 - value`, the Parseval gap of the cut series.
    pub residual: f64,
    /// Partial sum at the default truncation `L = 21`.
    pub partial_sum_default_l: f64,
    /// Full-series value from Parseval, `(E[sech^4] - tau_0^2) / tau_0^2`.
    pub parseval: f64,
    pub tau0: f64,
}

/// `beta^(1)(K) = sum_{i>=1} tau_{2i}(K)^2 / tau_0(K)^2`, summed until the
/// Parseval gap falls below `1e-6`.
pub fn beta_first_layer(k: usize) -> Result<BetaFirstLayerReport> {
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    let tol = 1e-6;
    let y = (k as f64).sqrt();
    let l_cap = 600;
    // Dense composite rule: the high-degree polynomials oscillate on a scale
    // of order 1/sqrt(l), so the coarse panels are kept narrow.
    let rule = graded_rule(&[0.0], 1.0 / y, 8, 0.05);
    let (coeffs, energy) = table_on_rule(CoeffKind::DerivativeSech2, y, l_cap, &rule);
    let tau0 = coeffs[0];
    let t0sq = tau0 * tau0;
    let parseval = (energy - t0sq) / t0sq;
    let mut partial = 0.0;
    let mut partial_default = 0.0;
    for (l, c) in coeffs.iter().enumerate().skip(2).step_by(2) {
        partial += c * c / t0sq;
        if l <= DEFAULT_L {
            partial_default = partial;
        }
        let residual = parseval - partial;
        if residual < tol {
            return Ok(BetaFirstLayerReport {
                k,
                value: partial,
                truncation_l: l,
                residual: residual.max(0.0),
                partial_sum_default_l: partial_default,
                parseval,
                tau0,
            });
        }
    }
    Err(Error::Truncation { residual: parseval - partial, tol, l: l_cap })
}

/// `rho = sigma_hat(sum_{k<K} nu^{2k})^2`.
pub fn rho_constant(nu: f64, k: usize) -> Result<f64> {
    let arg: f64 = (0..k).map(|j| nu.powi(2 * j as i32)).sum();
    Ok(sigma_hat(arg)?.powi(2))
}

/// `rho^(1) = tau_0(sum_{k<K} nu^{2k})^2`.
pub fn rho_first_layer(nu: f64, k: usize) -> Result<f64> {
    let arg: f64 = (0..k).map(|j| nu.powi(2 * j as i32)).sum();
    Ok(coeff_tau(0, arg)?.powi(2))
}

/// Constants of the two-layer alignment bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionConstants {
    pub nu: f64,
    pub k: usize,
    pub rho: f64,
    pub beta: f64,
    pub beta_first_layer: f64,
    pub sigma_hat_sup: f64,
    /// `sigma_hat_sup * sqrt(2 pi)`, comparable with the unnormalised
    /// convention's 2.51.
    pub sigma_hat_sup_unnormalized: f64,
    /// `rho (1 + beta / 2)`.
    pub c: f64,
    /// `(beta / 2) (sigma_hat_sup / rho)^2`.
    pub d: f64,
    /// `(z_sq, sigma_hat(z_sq))` on `[0, 2 sum nu^{2k}]`.
    pub sigma_curve: Vec<(f64, f64)>,
}

impl ExpansionConstants {
    pub fn new(nu: f64, k: usize) -> Result<Self> {
        if !(nu > 0.0) || k == 0 {
            return Err(Error::InvalidArgument(format!("need nu > 0 and K >= 1, got nu = {nu}, K = {k}")));
        }
        let rho = rho_constant(nu, k)?;
        let beta = beta_constant()?.value;
        let beta_first_layer = beta_first_layer(k)?.value;
        let sup = sigma_hat_sup();
        let c = rho * (1.0 + beta / 2.0);
        let d = (beta / 2.0) * (sup / rho).powi(2);
        let top: f64 = 2.0 * (0..k).map(|j| nu.powi(2 * j as i32)).sum::<f64>();
        let sigma_curve = (0..=32)
            .map(|i| {
                let z = top * i as f64 / 32.0;
                sigma_hat(z).map(|s| (z, s))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            nu,
            k,
            rho,
            beta,
            beta_first_layer,
            sigma_hat_sup: sup,
            sigma_hat_sup_unnormalized: sup * unnormalized_scale(),
            c,
            d,
            sigma_curve,
        })
    }

    /// `c - d / xi`; the two-layer bound is informative only when positive.
    pub fn bound_factor(&self, xi: f64) -> f64 {
        self.c - self.d / xi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignReport {
    pub kind: CoeffKind,
    pub l: usize,
    /// +1, -1, or 0 when every value vanishes.
    pub sign: i8,
    pub min_abs: f64,
    pub max_abs: f64,
    /// Grid arguments where the sign differs from the first nonzero value.
    pub flips: Vec<f64>,
    pub pass: bool,
}

/// Values below this are treated as exact zeros of parity-vanishing
/// coefficients.
const ZERO_FLOOR: f64 = 1e-300;

fn coeff_at(kind: CoeffKind, l: usize, arg: f64) -> Result<f64> {
    match kind {
        CoeffKind::ActivationTanh => coeff_g(l, arg),
        CoeffKind::DerivativeSech2 => coeff_tau(l, arg),
    }
}

/// Checks that `g_l` (arguments `y`) or `tau_l` (arguments `y^2`) keeps one
/// sign over `grid`.
pub fn verify_sign_constancy(kind: CoeffKind, l: usize, grid: &[f64]) -> Result<SignReport> {
    if grid.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::InvalidArgument("grid values must be positive".into()));
    }
    let vals = grid.iter().map(|&a| coeff_at(kind, l, a)).collect::<Result<Vec<_>>>()?;
    let mut sign = 0i8;
    let mut flips = Vec::new();
    for (&a, &v) in grid.iter().zip(&vals) {
        if v.abs() <= ZERO_FLOOR {
            continue;
        }
        let s = if v > 0.0 { 1 } else { -1 };
        if sign == 0 {
            sign = s;
        } else if s != sign {
            flips.push(a);
        }
    }
    let min_abs = vals.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    let max_abs = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(SignReport { kind, l, sign, min_abs, max_abs, pass: flips.is_empty(), flips })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub kind: CoeffKind,
    /// Ratio `|g_{2i+1}/g_1|` or `|tau_{2i}/tau_0|`.
    pub i: usize,
    /// Largest decrease between consecutive grid points.
    pub worst_drop: f64,
    /// Grid arguments at which a decrease beyond tolerance starts.
    pub violations: Vec<f64>,
    pub pass: bool,
}

/// Per-step tolerance on decreases of the ratio.
pub const MONOTONE_TOL: f64 = 1e-7;

/// Checks that `|g_{2i+1}/g_1|` (resp. `|tau_{2i}/tau_0|`) is non-decreasing
/// over an increasing grid.
pub fn verify_ratio_monotonicity(kind: CoeffKind, i: usize, grid: &[f64]) -> Result<MonotonicityReport> {
    if i == 0 {
        return Err(Error::InvalidArgument("ratio index must be at least 1".into()));
    }
    let (num, den) = match kind {
        CoeffKind::ActivationTanh => (2 * i + 1, 1),
        CoeffKind::DerivativeSech2 => (2 * i, 0),
    };
    let ratios = grid
        .iter()
        .map(|&a| Ok((coeff_at(kind, num, a)? / coeff_at(kind, den, a)?).abs()))
        .collect::<Result<Vec<f64>>>()?;
    let mut worst_drop = 0.0f64;
    let mut violations = Vec::new();
    for (w, a) in ratios.windows(2).zip(grid) {
        let drop = w[0] - w[1];
        worst_drop = worst_drop.max(drop);
        if drop > MONOTONE_TOL {
            violations.push(*a);
        }
    }
    Ok(MonotonicityReport { kind, i, worst_drop, pass: violations.is_empty(), violations })
}

/// Sign constancy and ratio monotonicity for every degree up to `l_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationSuite {
    /// Values of `y`; `tau` coefficients are evaluated at `y^2`.
    pub grid: Vec<f64>,
    pub l_max: usize,
    pub signs: Vec<SignReport>,
    pub monotonicity: Vec<MonotonicityReport>,
    pub pass: bool,
}

/// Runs the sign checks for odd `g_l` and even `tau_l` and the ratio
/// monotonicity checks for `|g_{2i+1}/g_1|` and `|tau_{2i}/tau_0|`.
pub fn verification_suite(l_max: usize, grid: &[f64]) -> Result<VerificationSuite> {
    use rayon::prelude::*;
    let squared: Vec<f64> = grid.iter().map(|y| y * y).collect();
    let sign_jobs: Vec<(CoeffKind, usize)> = (1..=l_max)
        .step_by(2)
        .map(|l| (CoeffKind::ActivationTanh, l))
        .chain((0..=l_max).step_by(2).map(|l| (CoeffKind::DerivativeSech2, l)))
        .collect();
    let signs = sign_jobs
        .par_iter()
        .map(|&(kind, l)| match kind {
            CoeffKind::ActivationTanh => verify_sign_constancy(kind, l, grid),
            CoeffKind::DerivativeSech2 => verify_sign_constancy(kind, l, &squared),
        })
        .collect::<Result<Vec<_>>>()?;
    let mono_jobs: Vec<(CoeffKind, usize)> = (1..=(l_max.saturating_sub(1)) / 2)
        .map(|i| (CoeffKind::ActivationTanh, i))
        .chain((1..=l_max / 2).map(|i| (CoeffKind::DerivativeSech2, i)))
        .collect();
    let monotonicity = mono_jobs
        .par_iter()
        .map(|&(kind, i)| match kind {
            CoeffKind::ActivationTanh => verify_ratio_monotonicity(kind, i, grid),
            CoeffKind::DerivativeSech2 => verify_ratio_monotonicity(kind, i, &squared),
        })
        .collect::<Result<Vec<_>>>()?;
    let pass = signs.iter().all(|r| r.pass) && monotonicity.iter().all(|r| r.pass);
    Ok(VerificationSuite { grid: grid.to_vec(), l_max, signs, monotonicity, pass })
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn linear_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::oracle;
    use proptest::prelude::*;

    #[test]
    fn low_degree_values() {
        assert_eq!(hermite_eval(0, 3.3).unwrap(), 1.0);
        assert!((hermite_eval(1, 0.7).unwrap() - 0.7).abs() < 1e-15);
        assert!(hermite_eval(2, 1.0).unwrap().abs() < 1e-15);
        assert!((hermite_eval(3, 2.0).unwrap() - 2.0 / 6f64.sqrt()).abs() < 1e-14);
        assert!((hermite_eval(3, 2.0).unwrap() - 0.8165).abs() < 1e-4);
        assert!(matches!(hermite_eval(MAX_DEGREE + 1, 0.0), Err(Error::DegreeOverflow(..))));
    }

    #[test]
    fn orthonormal_to_degree_ten() {
        let b = HermiteBasis::new(10).unwrap();
        assert!(b.orthonormality_error(64).unwrap() < 1e-10);
    }

    #[test]
    fn correlated_pair_identity() {
        let cfg = QuadConfig { start: 32, cap: 64, tol: 1e-12 };
        for &rho in &[-0.9, -0.3, 0.0, 0.5, 0.99] {
            for j in 0..=6 {
                for k in 0..=6 {
                    let e = quadrature::pair_expectation(
                        |u| hermite_eval(j, u).unwrap(),
                        1.0,
                        |u| hermite_eval(k, u).unwrap(),
                        1.0,
                        rho,
                        &cfg,
                    )
                    .unwrap()
                    .value;
                    let want = if j == k { rho.powi(j as i32) } else { 0.0 };
                    assert!((e - want).abs() < 1e-6, "rho {rho} j {j} k {k}: {e} vs {want}");
                }
            }
        }
    }

    #[test]
    fn tanh_coefficients_basic() {
        assert!(coeff_g(2, 0.7).unwrap().abs() < 1e-9);
        assert!((coeff_g(1, 0.01).unwrap() - 0.01).abs() < 1e-5);
        // large-y limit of g_1 is E|u| = sqrt(2/pi)
        assert!((coeff_g(1, 200.0).unwrap() - (2.0 / PI).sqrt()).abs() < 1e-2);
        let t = coefficient_table(CoeffKind::ActivationTanh, 1.3, 21, &QuadConfig::default()).unwrap();
        for (l, c) in t.coeffs.iter().enumerate() {
            if l % 2 == 0 {
                assert!(c.abs() < 1e-9, "l = {l}: {c}");
            }
        }
    }

    #[test]
    fn sech_coefficients_basic() {
        assert!(coeff_tau(1, 0.4).unwrap().abs() < 1e-9);
        assert!((coeff_tau(0, 1e-10).unwrap() - 1.0).abs() < 1e-9);
        let want = oracle::gaussian(|u| 1.0 / (3f64.sqrt() * u).cosh().powi(2), 1e-14);
        assert!((coeff_tau(0, 3.0).unwrap() - want).abs() < 1e-8);
    }

    #[test]
    fn derivative_and_direct_forms_agree() {
        let cfg = QuadConfig::default();
        for kind in [CoeffKind::ActivationTanh, CoeffKind::DerivativeSech2] {
            for &y in &[0.3, 1.0] {
                for l in 0..12 {
                    let parity_zero = if kind.is_odd() { l % 2 == 0 } else { l % 2 == 1 };
                    if parity_zero {
                        continue;
                    }
                    let (a, _) = coeff_direct(kind, l, y, &cfg).unwrap();
                    let (b, _) = coeff_derivative(kind, l, y, &cfg).unwrap();
                    assert!((a - b).abs() < 1e-9 * a.abs().max(1e-3), "{kind:?} l {l} y {y}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn accurate_coefficients_match_adaptive_oracle() {
        // at larger scales the derivative form cancels badly; the selection
        // must fall back to the direct form
        for &(l, y) in &[(11usize, 2.5f64), (5, 4.0), (3, 0.7)] {
            let want = oracle::gaussian(|u| (y * u).tanh() * hermite_eval(l, u).unwrap(), 1e-15);
            let got = coeff_g(l, y).unwrap();
            assert!((got - want).abs() < 1e-10, "l {l} y {y}: {got} vs {want}");
        }
    }

    #[test]
    fn small_scale_high_order_matches_leading_taylor_term() {
        // g_l(y) ~ y^l tanh^{(l)}(0) / sqrt(l!) as y -> 0.
        let p = tanh_derivative_poly(21);
        let y: f64 = 0.001;
        let lead = y.powi(21) * p[0] / (ln_factorial(21)).exp().sqrt();
        let got = coeff_g(21, y).unwrap();
        assert!(((got - lead) / lead).abs() < 1e-3, "{got} vs {lead}");
        assert!(got > 0.0);
    }

    #[test]
    fn sigma_hat_values() {
        assert_eq!(sigma_hat(0.0).unwrap(), 1.0);
        assert!((sigma_hat(1e-12).unwrap() - 1.0).abs() < 1e-9);
        let scaled = sigma_hat_sup() * unnormalized_scale();
        assert!((scaled - 2.5066).abs() < 1e-3 && scaled <= 2.51);
        assert!(sigma_hat(1.0).unwrap() > sigma_hat(4.0).unwrap());
        // Stein: g_1(y) / y = E[sech^2(y u)]
        let want = oracle::gaussian(|u| 1.0 / (2f64.sqrt() * u).cosh().powi(2), 1e-14);
        assert!((sigma_hat(2.0).unwrap() - want).abs() < 1e-8);
    }

    #[test]
    fn beta_matches_parseval() {
        let b = beta_constant().unwrap();
        assert!((b.value - (PI - 2.0) / 2.0).abs() < 1e-3);
        assert!((b.value - b.parseval).abs() < 1e-6, "{} vs {}", b.value, b.parseval);
        assert!(b.residual < 1e-6);
        assert!(beta_partial(3) < b.value);
        assert!(beta_partial(3) < beta_partial(5));
    }

    #[test]
    fn sign_coefficients_match_quadrature() {
        let c = sign_coefficients(9);
        for l in [1, 3, 5, 7, 9] {
            let want = 2.0 * oracle::integrate(
                |u| hermite_eval(l, u).unwrap() * (-0.5 * u * u).exp() / (2.0 * PI).sqrt(),
                0.0,
                40.0,
                1e-15,
            );
            assert!((c[l] - want).abs() < 1e-12, "l = {l}: {} vs {want}", c[l]);
        }
    }

    #[test]
    fn beta_first_layer_values() {
        let r3 = beta_first_layer(3).unwrap();
        assert!((r3.value - 0.7320).abs() < 2e-2);
        assert!(r3.residual < 1e-6);
        assert!((r3.value - r3.parseval).abs() < 1e-6);
        let r1 = beta_first_layer(1).unwrap();
        assert!(r1.value < r3.value);
        // common factors cancel: the unnormalised convention scales every
        // coefficient by sqrt(2 pi), leaving the ratio unchanged
        let s = unnormalized_scale();
        let t = coefficient_table(CoeffKind::DerivativeSech2, 3f64.sqrt(), 20, &QuadConfig::default()).unwrap();
        let a: f64 = t.coeffs.iter().skip(2).step_by(2).map(|c| c * c).sum::<f64>() / t.coeffs[0].powi(2);
        let b: f64 = t.coeffs.iter().skip(2).step_by(2).map(|c| (s * c).powi(2)).sum::<f64>() / (s * t.coeffs[0]).powi(2);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn parseval_gap_shrinks() {
        let cfg = QuadConfig::default();
        let mut last = f64::INFINITY;
        for l in [5, 11, 21] {
            let t = coefficient_table(CoeffKind::ActivationTanh, 1.5, l, &cfg).unwrap();
            let gap = t.parseval_gap();
            assert!(gap <= last);
            assert!(t.coeffs.iter().map(|c| c * c).sum::<f64>() <= t.energy + 1e-12);
            last = gap;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn verification_routines() {
        let grid = linear_grid(0.1, 10.0, 12);
        let r = verify_sign_constancy(CoeffKind::ActivationTanh, 1, &grid).unwrap();
        assert!(r.pass && r.sign == 1);
        let r = verify_sign_constancy(CoeffKind::DerivativeSech2, 0, &grid).unwrap();
        assert!(r.pass && r.sign == 1);
        let r = verify_sign_constancy(CoeffKind::ActivationTanh, 2, &grid).unwrap();
        assert!(r.pass && r.sign == 0 && r.max_abs == 0.0);
        assert!(verify_ratio_monotonicity(CoeffKind::ActivationTanh, 1, &grid).unwrap().pass);
        assert!(verify_ratio_monotonicity(CoeffKind::DerivativeSech2, 1, &grid).unwrap().pass);
        assert!(verify_ratio_monotonicity(CoeffKind::ActivationTanh, 1, &[2.0]).unwrap().pass);
    }

    #[test]
    fn verification_suite_small() {
        let v = verification_suite(5, &linear_grid(0.1, 10.0, 8)).unwrap();
        assert_eq!(v.signs.len(), 3 + 3);
        assert_eq!(v.monotonicity.len(), 2 + 2);
        assert!(v.pass);
    }

    #[test]
    fn expansion_constants_construction() {
        let c = ExpansionConstants::new(1.0, 2).unwrap();
        assert!((c.rho - sigma_hat(2.0).unwrap().powi(2)).abs() < 1e-15);
        assert!((c.c - c.rho * (1.0 + c.beta / 2.0)).abs() < 1e-15);
        assert!((c.d - (c.beta / 2.0) * (c.sigma_hat_sup / c.rho).powi(2)).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn sigma_hat_is_stein_expectation(z in 0.01f64..9.0) {
            let want = oracle::gaussian(|u| 1.0 / (z.sqrt() * u).cosh().powi(2), 1e-13);
            prop_assert!((sigma_hat(z).unwrap() - want).abs() < 1e-8);
        }

        #[test]
        fn coefficients_bounded_by_energy(y in 0.05f64..6.0) {
            let t = coefficient_table(CoeffKind::ActivationTanh, y, 21, &QuadConfig::default()).unwrap();
            let s: f64 = t.coeffs.iter().map(|c| c * c).sum();
            prop_assert!(s <= t.energy + 1e-10);
            prop_assert!(t.energy < 1.0);
        }
    }
}
