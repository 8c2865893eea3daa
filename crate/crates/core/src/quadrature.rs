//! Quadrature for expectations under the standard normal measure.
//!
//! Gauss–Hermite rules are used first and escalated by doubling the node
//! count. Integrands like `tanh(y u)` with large `y` have a kink of width
//! `1/y` that Gauss–Hermite resolves poorly, so once the cap is reached the
//! estimate falls back to a composite Gauss–Legendre rule with panels graded
//! towards the kink.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use serde::Serialize;

use crate::error::{Error, Result};

/// Nodes and weights with `E[f(u)] ~ sum_i w_i f(u_i)`, `u ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> Result<f64> {
        let mut acc = 0.0;
        for (&u, &w) in self.nodes.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            let v = f(u);
            if !v.is_finite() {
                return Err(Error::NonFinite(u));
            }
            acc += w * v;
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadConfig {
    pub start: usize,
    pub cap: usize,
    pub tol: f64,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self { start: 64, cap: 512, tol: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum QuadMethod {
    GaussHermite { nodes: usize },
    Graded { nodes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub method: QuadMethod,
    /// Difference between the last two estimates.
    pub error: f64,
}

/// Gauss–Hermite rule for the standard normal measure, cached per size.
pub fn gauss_hermite(nq: usize) -> Result<Arc<Rule>> {
    if nq < 2 {
        return Err(Error::InvalidArgument(format!("Gauss-Hermite needs at least 2 nodes, got {nq}")));
    }
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Rule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().unwrap().get(&nq) {
        return Ok(r.clone());
    }
    let rule = Arc::new(build_gauss_hermite(nq)?);
    cache.lock().unwrap().insert(nq, rule.clone());
    Ok(rule)
}

// Golub–Welsch eigenvalues of the Jacobi matrix give starting points;
// each is then polished by Newton on the orthonormal Hermite polynomial for
// the weight exp(-x^2), whose derivative also yields the weight.
fn build_gauss_hermite(n: usize) -> Result<Rule> {
    let mut jacobi = nalgebra::DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let mut guesses: Vec<f64> = jacobi.symmetric_eigenvalues().iter().cloned().collect();
    guesses.sort_by(f64::total_cmp);
    let pim4 = PI.powf(-0.25);
    let nf = n as f64;
    let mut pairs = Vec::with_capacity(n);
    for &g in &guesses {
        let mut z = g / std::f64::consts::SQRT_2;
        let mut pp = 0.0;
        for _ in 0..20 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let step = p1 / pp;
            if !step.is_finite() {
                break;
            }
            z -= step;
            if step.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        let w = 2.0 / (pp * pp) / PI.sqrt();
        pairs.push((z * std::f64::consts::SQRT_2, if w.is_finite() { w } else { 0.0 }));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pairs.windows(2).any(|w| !(w[0].0 < w[1].0)) {
        return Err(Error::Quadrature(format!("Gauss-Hermite nodes for n = {n} are not distinct")));
    }
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    Ok(Rule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1 / total).collect(),
    })
}

/// Single fixed-size Gauss–Hermite estimate of `E[f(u)]`.
pub fn gauss_hermite_expectation<F: Fn(f64) -> f64>(f: F, nq: usize) -> Result<f64> {
    gauss_hermite(nq)?.expect(f)
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = 1.0;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = ((2.0 * jf + 1.0) * z * p2 - jf * p3) / (jf + 1.0);
            }
            pp = nf * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * pp * pp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

const PANEL_NODES: usize = 16;
/// (coarse panel width, grading depth) per fallback refinement level.
pub const GRADED_LEVELS: [(f64, u32); 4] = [(0.5, 6), (0.25, 10), (0.125, 14), (0.0625, 18)];
const HALF_WIDTH: f64 = 40.0;

fn std_normal_pdf(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

/// Composite Gauss–Legendre rule on `[-40, 40]` carrying the normal density
/// in its weights. Panels have width `coarse` away from the centres and are
/// graded geometrically towards each centre, the finest of width
/// `width / 2^refine`.
pub fn graded_rule(centers: &[f64], width: f64, refine: u32, coarse: f64) -> Rule {
    let mut bps: Vec<f64> = Vec::new();
    let steps = (2.0 * HALF_WIDTH / coarse).round() as usize;
    for i in 0..=steps {
        bps.push(-HALF_WIDTH + i as f64 * coarse);
    }
    let width = width.min(coarse);
    for &c in centers {
        if !(c.abs() < HALF_WIDTH) {
            continue;
        }
        bps.push(c);
        let mut h = width / f64::from(1u32 << refine.min(30));
        while h < 4.0 * coarse {
            bps.push(c - h);
            bps.push(c + h);
            h *= 2.0;
        }
    }
    bps.retain(|b| b.abs() <= HALF_WIDTH);
    bps.sort_by(f64::total_cmp);
    bps.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let (gx, gw) = gauss_legendre(PANEL_NODES);
    let mut nodes = Vec::with_capacity(bps.len() * PANEL_NODES);
    let mut weights = Vec::with_capacity(bps.len() * PANEL_NODES);
    for pair in bps.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (xi, wi) in gx.iter().zip(&gw) {
            let u = mid + half * xi;
            nodes.push(u);
            weights.push(half * wi * std_normal_pdf(u));
        }
    }
    Rule { nodes, weights }
}

fn agree(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// `E[f(u)]` with escalation. `scale` is the reciprocal width of the
/// sharpest feature of `f`, located at `u = 0`.
pub fn expectation<F: Fn(f64) -> f64>(f: F, scale: f64, cfg: &QuadConfig) -> Result<Estimate> {
    let mut nq = cfg.start.max(2);
    let mut prev = gauss_hermite(nq)?.expect(&f)?;
    while nq < cfg.cap {
        nq *= 2;
        let cur = gauss_hermite(nq)?.expect(&f)?;
        if agree(cur, prev, cfg.tol) {
            return Ok(Estimate { value: cur, method: QuadMethod::GaussHermite { nodes: nq }, error: (cur - prev).abs() });
        }
        prev = cur;
    }
    let width = 1.0 / scale.max(1e-12);
    let mut prev = graded_rule(&[0.0], width, GRADED_LEVELS[0].1, GRADED_LEVELS[0].0).expect(&f)?;
    for &(coarse, refine) in &GRADED_LEVELS[1..] {
        let rule = graded_rule(&[0.0], width, refine, coarse);
        let cur = rule.expect(&f)?;
        if agree(cur, prev, cfg.tol) {
            return Ok(Estimate { value: cur, method: QuadMethod::Graded { nodes: rule.len() }, error: (cur - prev).abs() });
        }
        prev = cur;
    }
    Err(Error::Quadrature(format!(
        "no agreement within {:e} after Gauss-Hermite cap {} and graded refinement",
        cfg.tol, cfg.cap
    )))
}

/// `E[f(u) g(u')]` for a standard normal pair with correlation `rho`,
/// written as `u' = rho u + sqrt(1 - rho^2) v` with `u, v` independent.
/// `scale_f`, `scale_g` are the reciprocal kink widths of `f` and `g` at 0.
pub fn pair_expectation<F, G>(f: F, scale_f: f64, g: G, scale_g: f64, rho: f64, cfg: &QuadConfig) -> Result<Estimate>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    let rho = rho.clamp(-1.0, 1.0);
    let s = (1.0 - rho * rho).max(0.0).sqrt();
    if s < 1e-7 {
        // Degenerate pair: u' = sign(rho) u.
        let sign = rho.signum();
        return expectation(|u| f(u) * g(sign * u), scale_f.max(scale_g), cfg);
    }
    let tensor = |rule: &Rule| -> Result<f64> {
        let mut acc = 0.0;
        for (&u, &wu) in rule.nodes.iter().zip(&rule.weights) {
            if wu == 0.0 {
                continue;
            }
            let fu = f(u);
            if !fu.is_finite() {
                return Err(Error::NonFinite(u));
            }
            if fu == 0.0 {
                continue;
            }
            let mut inner = 0.0;
            for (&v, &wv) in rule.nodes.iter().zip(&rule.weights) {
                if wv == 0.0 {
                    continue;
                }
                inner += wv * g(rho * u + s * v);
            }
            if !inner.is_finite() {
                return Err(Error::NonFinite(u));
            }
            acc += wu * fu * inner;
        }
        Ok(acc)
    };
    let mut nq = cfg.start.max(2);
    let mut prev = tensor(&*gauss_hermite(nq)?)?;
    while nq < cfg.cap {
        nq *= 2;
        let cur = tensor(&*gauss_hermite(nq)?)?;
        if agree(cur, prev, cfg.tol) {
            return Ok(Estimate { value: cur, method: QuadMethod::GaussHermite { nodes: nq }, error: (cur - prev).abs() });
        }
        prev = cur;
    }
    // Graded fallback: grade u around 0 and, for each u, grade v around the
    // kink of g at v = -rho u / s.
    let graded = |refine: u32| -> Result<(f64, usize)> {
        let wu = 1.0 / scale_f.max(1e-12);
        let wv = 1.0 / (scale_g * s).max(1e-12);
        let outer = graded_rule(&[0.0], wu, refine, 0.5);
        let mut acc = 0.0;
        let mut count = 0;
        for (&u, &w) in outer.nodes.iter().zip(&outer.weights) {
            if w == 0.0 {
                continue;
            }
            let fu = f(u);
            if fu == 0.0 {
                continue;
            }
            let inner_rule = graded_rule(&[0.0, -rho * u / s], wv, refine, 0.5);
            count = count.max(inner_rule.len());
            let inner = inner_rule.expect(|v| g(rho * u + s * v))?;
            acc += w * fu * inner;
        }
        Ok((acc, outer.len() * count))
    };
    let (mut prev, _) = graded(4)?;
    for refine in [8u32, 12] {
        let (cur, nodes) = graded(refine)?;
        if agree(cur, prev, cfg.tol) {
            return Ok(Estimate { value: cur, method: QuadMethod::Graded { nodes }, error: (cur - prev).abs() });
        }
        prev = cur;
    }
    Err(Error::Quadrature(format!("pair expectation with rho = {rho} did not converge")))
}

/// Independent adaptive Gauss–Kronrod integrator used as a test oracle.
#[cfg(test)]
pub mod oracle {
    const XGK: [f64; 8] = [
        0.991455371120812639206854697526329,
        0.949107912342758524526189684047851,
        0.864864423359769072789712788640926,
        0.741531185599394439863864773280788,
        0.586087235467691130294144845693013,
        0.405845151377397166906606412076961,
        0.207784955007898467600689403773245,
        0.000000000000000000000000000000000,
    ];
    const WGK: [f64; 8] = [
        0.022935322010529224963732008058970,
        0.063092092629978553290700663189204,
        0.104790010322250183839876322541518,
        0.140653259715525918745189590510238,
        0.169004726639267902826583426598550,
        0.190350578064785409913256402421014,
        0.204432940075298892414161999234649,
        0.209482141084727828012999174891714,
    ];
    const WG: [f64; 4] = [
        0.129484966168869693270611432679082,
        0.279705391489276667901467771423780,
        0.381830050505118944950369775488975,
        0.417959183673469387755102040816327,
    ];

    fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let fc = f(c);
        let mut k = WGK[7] * fc;
        let mut g = WG[3] * fc;
        for j in 0..7 {
            let d = h * XGK[j];
            let s = f(c - d) + f(c + d);
            k += WGK[j] * s;
            if j % 2 == 1 {
                g += WG[j / 2] * s;
            }
        }
        (k * h, ((k - g) * h).abs())
    }

    fn adapt<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let (v, e) = gk15(f, a, b);
        if e <= tol || depth == 0 {
            return v;
        }
        let m = 0.5 * (a + b);
        adapt(f, a, m, 0.5 * tol, depth - 1) + adapt(f, m, b, 0.5 * tol, depth - 1)
    }

    /// `int_a^b f`.
    pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
        adapt(&f, a, b, tol, 40)
    }

    /// `E[f(u)]` for `u ~ N(0, 1)`, splitting at 0 where kinks sit.
    pub fn gaussian<F: Fn(f64) -> f64>(f: F, tol: f64) -> f64 {
        let c = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        let g = |u: f64| f(u) * (-0.5 * u * u).exp() * c;
        let mut acc = 0.0;
        let edges = [-40.0, -8.0, -1.0, 0.0, 1.0, 8.0, 40.0];
        for w in edges.windows(2) {
            acc += integrate(g, w[0], w[1], tol / 8.0);
        }
        acc
    }
}
