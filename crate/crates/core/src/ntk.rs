//! Neural tangent kernels: empirical Jacobian products, the analytic graph
//! filter kernel, infinite-width two-layer GNN kernels through the
//! expectation matrices `E` and `E1`, and a Monte-Carlo width-`F` estimator.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{stack, BlockDiagShift, Dataset, NtkMatrix, NtkProvenance};
use crate::error::{Error, Result};
use crate::hermite::{coefficient_table, CoeffKind};
use crate::models::{Activation, LayerSelection, Model};
use crate::quadrature::{pair_expectation, QuadConfig};

/// Rows `z_a = [x~_a, (S~x~)_a, ..., (S~^{K-1}x~)_a]`, stored as `nM x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZVectors {
    pub z: DMatrix<f64>,
    pub n: usize,
    pub m: usize,
}

impl ZVectors {
    pub fn new(s: &DMatrix<f64>, d: &Dataset, k: usize) -> Result<Self> {
        check_shift(s, d)?;
        let st = stack(d);
        let z = BlockDiagShift::new(s, d.m()).krylov(&st.x, k)?;
        Ok(Self { z, n: d.n(), m: d.m() })
    }

    pub fn from_matrix(z: DMatrix<f64>, n: usize, m: usize) -> Result<Self> {
        if z.nrows() != n * m {
            return Err(Error::Dimension(format!("{} rows for n*M = {}", z.nrows(), n * m)));
        }
        Ok(Self { z, n, m })
    }

    pub fn dim(&self) -> usize {
        self.z.nrows()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.z.row_iter().map(|r| r.norm()).collect()
    }

    /// `Z Z^T`.
    pub fn gram(&self) -> DMatrix<f64> {
        &self.z * self.z.transpose()
    }

    /// `<z_a, z_b> / (||z_a|| ||z_b||)` clamped to `[-1, 1]`; 0 when either row vanishes.
    pub fn correlation(&self, gram: &DMatrix<f64>, norms: &[f64], a: usize, b: usize) -> f64 {
        let den = norms[a] * norms[b];
        if den == 0.0 {
            return 0.0;
        }
        (gram[(a, b)] / den).clamp(-1.0, 1.0)
    }
}

fn check_shift(s: &DMatrix<f64>, d: &Dataset) -> Result<()> {
    if !s.is_square() || s.nrows() != d.n() {
        return Err(Error::Dimension(format!("S is {:?} for n = {}", s.shape(), d.n())));
    }
    Ok(())
}

/// `B_lin = sum_k S~^k x~ x~^T S~^k = Z Z^T`.
pub fn b_lin(s: &DMatrix<f64>, d: &Dataset, k: usize) -> Result<DMatrix<f64>> {
    Ok(ZVectors::new(s, d, k)?.gram())
}

/// Analytic graph filter NTK; independent of the filter taps.
pub fn filter_ntk(s: &DMatrix<f64>, d: &Dataset, k: usize) -> Result<NtkMatrix> {
    Ok(NtkMatrix::new(b_lin(s, d, k)?, NtkProvenance::FilterAnalytic, d.n(), d.m()))
}

/// Jacobians of all samples stacked into an `nM x P` matrix.
pub fn stacked_jacobian<M: Model + ?Sized>(model: &M, s: &DMatrix<f64>, params: &[f64], d: &Dataset) -> DMatrix<f64> {
    let n = d.n();
    let p = model.trained().len();
    let blocks: Vec<DMatrix<f64>> =
        (0..d.m()).into_par_iter().map(|i| model.jacobian(s, params, &d.x.column(i).into_owned())).collect();
    let mut j = DMatrix::zeros(n * d.m(), p);
    for (i, b) in blocks.iter().enumerate() {
        j.rows_mut(i * n, n).copy_from(b);
    }
    j
}

/// `Theta~ = J~ J~^T` at the given parameters.
pub fn empirical_ntk<M: Model + ?Sized>(model: &M, s: &DMatrix<f64>, params: &[f64], d: &Dataset) -> Result<NtkMatrix> {
    check_shift(s, d)?;
    if params.len() != model.num_params() {
        return Err(Error::Dimension(format!("{} params for a model with {}", params.len(), model.num_params())));
    }
    let j = stacked_jacobian(model, s, params, d);
    Ok(NtkMatrix::new(&j * j.transpose(), model.provenance(), d.n(), d.m()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum ExpectationMethod {
    Quadrature,
    Series { l: usize },
    MonteCarlo { width: usize },
}

/// `E_ab = E[sigma(||z_a|| u) sigma(||z_b|| u')]` for correlated standard normals.
#[derive(Debug, Clone)]
pub struct ExpectationMatrix {
    pub e: DMatrix<f64>,
    /// `(B, Delta B)` with `E = B + Delta B`, series method only.
    pub decomposition: Option<(DMatrix<f64>, DMatrix<f64>)>,
    pub method: ExpectationMethod,
    /// Rows with `z_a = 0`, where the correlation is undefined.
    pub zero_rows: Vec<usize>,
    /// Largest per-entry error estimate (quadrature disagreement or series tail bound).
    pub residual: f64,
    pub warning: Option<String>,
}

fn upper_pairs(dim: usize) -> Vec<(usize, usize)> {
    (0..dim).flat_map(|a| (a..dim).map(move |b| (a, b))).collect()
}

fn fill_symmetric(dim: usize, pairs: &[(usize, usize)], vals: &[f64]) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(dim, dim);
    for (&(a, b), &v) in pairs.iter().zip(vals) {
        e[(a, b)] = v;
        e[(b, a)] = v;
    }
    e
}

fn correlated_pair_matrix<F>(z: &ZVectors, f: F, cfg: &QuadConfig) -> Result<(DMatrix<f64>, f64)>
where
    F: Fn(f64) -> f64 + Sync,
{
    let norms = z.norms();
    let gram = z.gram();
    let pairs = upper_pairs(z.dim());
    let f0 = f(0.0);
    let results: Vec<Result<(f64, f64)>> = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (ya, yb) = (norms[a], norms[b]);
            match (ya == 0.0, yb == 0.0) {
                (true, true) => Ok((f0 * f0, 0.0)),
                (true, false) | (false, true) => {
                    let y = ya.max(yb);
                    let est = crate::quadrature::expectation(|u| f(y * u), y, cfg)?;
                    Ok((f0 * est.value, f0.abs() * est.error))
                }
                (false, false) => {
                    let rho = z.correlation(&gram, &norms, a, b);
                    let est = pair_expectation(|u| f(ya * u), ya, |v| f(yb * v), yb, rho, cfg)?;
                    Ok((est.value, est.error))
                }
            }
        })
        .collect();
    let mut vals = Vec::with_capacity(pairs.len());
    let mut residual = 0.0f64;
    for r in results {
        let (v, err) = r?;
        vals.push(v);
        residual = residual.max(err);
    }
    Ok((fill_symmetric(z.dim(), &pairs, &vals), residual))
}

fn zero_rows(z: &ZVectors) -> Vec<usize> {
    z.norms().iter().enumerate().filter(|(_, &v)| v == 0.0).map(|(i, _)| i).collect()
}

/// `E` by tensor Gauss–Hermite over each correlated pair. Zero rows use
/// `sigma(0)`, so they vanish for odd activations.
pub fn expectation_e_quadrature(z: &ZVectors, activation: Activation, cfg: &QuadConfig) -> Result<ExpectationMatrix> {
    let zr = zero_rows(z);
    let (e, residual) = if activation == Activation::Identity {
        (z.gram(), 0.0)
    } else {
        correlated_pair_matrix(z, |v| activation.apply(v), cfg)?
    };
    Ok(ExpectationMatrix { e, decomposition: None, method: ExpectationMethod::Quadrature, zero_rows: zr, residual, warning: None })
}

/// `E = B + Delta B` from the odd Hermite coefficients of `tanh` up to degree `l`.
pub fn expectation_e_series(z: &ZVectors, activation: Activation, l: usize, cfg: &QuadConfig) -> Result<ExpectationMatrix> {
    if l < 3 || l % 2 == 0 {
        return Err(Error::InvalidArgument(format!("series truncation must be odd and at least 3, got {l}")));
    }
    let zr = zero_rows(z);
    let dim = z.dim();
    if activation == Activation::Identity {
        let g = z.gram();
        return Ok(ExpectationMatrix {
            e: g.clone(),
            decomposition: Some((g, DMatrix::zeros(dim, dim))),
            method: ExpectationMethod::Series { l },
            zero_rows: zr,
            residual: 0.0,
            warning: None,
        });
    }
    if activation != Activation::Tanh {
        return Err(Error::InvalidArgument(format!("Hermite series is implemented for tanh, not {activation:?}")));
    }
    let norms = z.norms();
    let gram = z.gram();
    let tables: Vec<Result<(Vec<f64>, f64)>> = norms
        .par_iter()
        .map(|&y| {
            if y == 0.0 {
                return Ok((vec![0.0; l + 1], 0.0));
            }
            let t = coefficient_table(CoeffKind::ActivationTanh, y, l, cfg)?;
            let gap = t.parseval_gap();
            Ok((t.coeffs, gap))
        })
        .collect();
    let tables = tables.into_iter().collect::<Result<Vec<_>>>()?;
    let mut b = DMatrix::zeros(dim, dim);
    let mut db = DMatrix::zeros(dim, dim);
    let mut residual = 0.0f64;
    for a in 0..dim {
        for c in a..dim {
            let rho = z.correlation(&gram, &norms, a, c);
            let (ga, gapa) = (&tables[a].0, tables[a].1);
            let (gc, gapc) = (&tables[c].0, tables[c].1);
            let first = ga[1] * gc[1] * rho;
            let mut tail = 0.0;
            let mut rp = rho;
            let r2 = rho * rho;
            for ell in (3..=l).step_by(2) {
                rp *= r2;
                tail += ga[ell] * gc[ell] * rp;
            }
            b[(a, c)] = first;
            b[(c, a)] = first;
            db[(a, c)] = tail;
            db[(c, a)] = tail;
            residual = residual.max(rho.abs().powi(l as i32 + 2) * (gapa * gapc).sqrt());
        }
    }
    let e = &b + &db;
    let emax = e.amax();
    let warning = (residual > 1e-4 * emax)
        .then(|| format!("series truncation residual {residual:.3e} exceeds 1e-4 max|E| = {:.3e}", 1e-4 * emax));
    Ok(ExpectationMatrix {
        e,
        decomposition: Some((b, db)),
        method: ExpectationMethod::Series { l },
        zero_rows: zr,
        residual,
        warning,
    })
}

/// `E1_ab = E[sigma'(||z_a|| u) sigma'(||z_b|| u')] <z_a, z_b>`.
pub fn expectation_e_first_layer(z: &ZVectors, activation: Activation, cfg: &QuadConfig) -> Result<DMatrix<f64>> {
    let gram = z.gram();
    if activation == Activation::Identity {
        return Ok(gram);
    }
    let (mut e, _) = correlated_pair_matrix(z, |v| activation.deriv(v), cfg)?;
    e.component_mul_assign(&gram);
    Ok(e)
}

fn provenance_of(method: ExpectationMethod) -> NtkProvenance {
    match method {
        ExpectationMethod::Quadrature => NtkProvenance::GnnInfiniteQuadrature,
        ExpectationMethod::Series { l } => NtkProvenance::GnnInfiniteSeries { l },
        ExpectationMethod::MonteCarlo { width } => NtkProvenance::GnnMonteCarlo { width },
    }
}

/// Second-layer infinite-width NTK `sum_k S~^k E S~^k`.
pub fn gnn_infinite_ntk_second_layer(s: &DMatrix<f64>, m: usize, k: usize, e: &ExpectationMatrix) -> NtkMatrix {
    let theta = BlockDiagShift::new(s, m).power_sandwich(&e.e, k);
    NtkMatrix::new(theta, provenance_of(e.method), s.nrows(), m)
}

/// First-layer infinite-width NTK `sum_k S~^k E1 S~^k`.
pub fn gnn_infinite_ntk_first_layer(s: &DMatrix<f64>, m: usize, k: usize, e1: &DMatrix<f64>) -> NtkMatrix {
    let theta = BlockDiagShift::new(s, m).power_sandwich(e1, k);
    NtkMatrix::new(theta, NtkProvenance::GnnInfiniteQuadrature, s.nrows(), m)
}

/// Infinite-width NTK of the selected layer(s) by quadrature.
pub fn gnn_infinite_ntk(
    s: &DMatrix<f64>,
    d: &Dataset,
    k: usize,
    activation: Activation,
    which: LayerSelection,
    cfg: &QuadConfig,
) -> Result<NtkMatrix> {
    let z = ZVectors::new(s, d, k)?;
    let mut theta = DMatrix::zeros(z.dim(), z.dim());
    if which != LayerSelection::First {
        let e = expectation_e_quadrature(&z, activation, cfg)?;
        theta += gnn_infinite_ntk_second_layer(s, d.m(), k, &e).theta;
    }
    if which != LayerSelection::Second {
        let e1 = expectation_e_first_layer(&z, activation, cfg)?;
        theta += gnn_infinite_ntk_first_layer(s, d.m(), k, &e1).theta;
    }
    Ok(NtkMatrix::new(theta, NtkProvenance::GnnInfiniteQuadrature, d.n(), d.m()))
}

fn shift_stacked(s: &DMatrix<f64>, v: &DVector<f64>, n: usize, m: usize) -> DVector<f64> {
    let out = s * DMatrix::from_column_slice(n, m, v.as_slice());
    DVector::from_column_slice(out.as_slice())
}

/// Width-`F_mc` estimate with `g_f, h_f ~ N(0, I_K)`, feature `f` drawn from
/// stream `f` of the seeded generator.
pub fn gnn_monte_carlo_ntk(
    s: &DMatrix<f64>,
    d: &Dataset,
    k: usize,
    f_mc: usize,
    seed: u64,
    which: LayerSelection,
    activation: Activation,
) -> Result<NtkMatrix> {
    if f_mc == 0 {
        return Err(Error::InvalidArgument("Monte-Carlo width must be at least 1".into()));
    }
    let z = ZVectors::new(s, d, k)?;
    let (n, m) = (d.n(), d.m());
    let dim = z.dim();
    let per_f = match which {
        LayerSelection::Both => 2 * k,
        _ => k,
    };
    let scale = 1.0 / (f_mc as f64).sqrt();
    let blocks: Vec<DMatrix<f64>> = (0..f_mc)
        .into_par_iter()
        .map(|f| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(f as u64);
            let g = DVector::from_iterator(k, (0..k).map(|_| StandardNormal.sample(&mut rng)));
            let h: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
            let u = &z.z * &g;
            let mut block = DMatrix::zeros(dim, per_f);
            let mut col = 0;
            if which != LayerSelection::First {
                let mut cur = u.map(|v| activation.apply(v));
                for j in 0..k {
                    if j > 0 {
                        cur = shift_stacked(s, &cur, n, m);
                    }
                    block.set_column(col, &(&cur * scale));
                    col += 1;
                }
            }
            if which != LayerSelection::Second {
                let dv = u.map(|v| activation.deriv(v));
                for j in 0..k {
                    let base = dv.component_mul(&z.z.column(j));
                    let mut acc = DVector::zeros(dim);
                    let mut cur = base;
                    for (t, &hk) in h.iter().enumerate() {
                        if t > 0 {
                            cur = shift_stacked(s, &cur, n, m);
                        }
                        acc.axpy(hk, &cur, 1.0);
                    }
                    block.set_column(col, &(acc * scale));
                    col += 1;
                }
            }
            block
        })
        .collect();
    let mut j = DMatrix::zeros(dim, per_f * f_mc);
    for (f, b) in blocks.iter().enumerate() {
        j.columns_mut(f * per_f, per_f).copy_from(b);
    }
    Ok(NtkMatrix::new(&j * j.transpose(), NtkProvenance::GnnMonteCarlo { width: f_mc }, n, m))
}

/// Relative NTK change `max_t ||Theta(h_t) - Theta(h_0)||_F / ||Theta(h_0)||_F`
/// over checkpoints every `every` epochs (and the last epoch).
pub fn model_ntk_drift<M: Model + ?Sized>(
    model: &M,
    s: &DMatrix<f64>,
    d: &Dataset,
    cfg: &crate::training::TrainConfig,
    every: usize,
) -> Result<crate::training::TrainRun> {
    check_shift(s, d)?;
    let every = every.max(1);
    let mut theta0: Option<DMatrix<f64>> = None;
    let mut samples = Vec::new();
    let last = cfg.epochs;
    let mut run = crate::training::train_observed(model, s, d, None, cfg, None, &mut |epoch, params| {
        if epoch != 0 && epoch % every != 0 && epoch != last {
            return Ok(());
        }
        let j = stacked_jacobian(model, s, params, d);
        let theta = &j * j.transpose();
        match &theta0 {
            None => {
                samples.push((0, 0.0));
                theta0 = Some(theta);
            }
            Some(t0) => samples.push((epoch, crate::linalg::rel_frobenius(&theta, t0))),
        }
        Ok(())
    })?;
    run.trace.ntk_drift = samples;
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftPoint {
    pub width: usize,
    pub drift: f64,
    pub samples: Vec<(usize, f64)>,
}

/// NTK drift of two-layer GNNs (both layers trained) for each width.
pub fn ntk_drift(
    s: &DMatrix<f64>,
    d: &Dataset,
    k: usize,
    activation: Activation,
    cfg: &crate::training::TrainConfig,
    widths: &[usize],
    every: usize,
) -> Result<Vec<DriftPoint>> {
    widths
        .iter()
        .map(|&width| {
            let model = crate::models::TwoLayerGnn { width, k, activation, train: LayerSelection::Both };
            let run = model_ntk_drift(&model, s, d, cfg, every)?;
            let drift = run.trace.ntk_drift.iter().map(|x| x.1).fold(0.0, f64::max);
            Ok(DriftPoint { width, drift, samples: run.trace.ntk_drift })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::models::{GraphFilter, InitConfig, TwoLayerGnn};
    use crate::quadrature::oracle;
    use proptest::prelude::*;
    use rand::Rng;

    fn rand_sym(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let s = linalg::symmetrize(&a);
        &s / s.norm()
    }

    fn rand_data(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Dataset {
        let x = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        let y = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        Dataset::new(x, y).unwrap().normalize_global().0
    }

    /// Dense `I_M (x) S`.
    fn kron_shift(s: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
        let n = s.nrows();
        let mut out = DMatrix::zeros(n * m, n * m);
        for i in 0..m {
            out.view_mut((i * n, i * n), (n, n)).copy_from(s);
        }
        out
    }

    fn dense_sandwich(s: &DMatrix<f64>, m: usize, e: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        let big = kron_shift(s, m);
        let mut acc = DMatrix::zeros(e.nrows(), e.ncols());
        for j in 0..k {
            let p = big.pow(j as u32);
            acc += &p * e * &p;
        }
        acc
    }

    #[test]
    fn filter_ntk_scalar_case() {
        let s = DMatrix::from_element(1, 1, 0.6);
        let d = Dataset::new(DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 0.1)).unwrap();
        let t = filter_ntk(&s, &d, 2).unwrap();
        assert!((t.theta[(0, 0)] - 0.25 * (1.0 + 0.36)).abs() < 1e-15);
    }

    #[test]
    fn filter_ntk_rank_and_gram_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let (n, m, k) = (5, 4, 3);
            let s = rand_sym(n, &mut r);
            let d = rand_data(n, m, &mut r);
            let t = filter_ntk(&s, &d, k).unwrap();
            let rank = linalg::sym_eigenvalues(&t.theta).iter().filter(|&&v| v > 1e-10).count();
            assert!(rank <= k);
            let big = kron_shift(&s, m);
            let xt = stack(&d).x;
            let mut want = DMatrix::zeros(n * m, n * m);
            for j in 0..k {
                let v = big.pow(j as u32) * &xt;
                want += &v * v.transpose();
            }
            assert!(linalg::rel_frobenius(&t.theta, &want) < 1e-12);
            let z = ZVectors::new(&s, &d, k).unwrap();
            for (a, nz) in z.norms().iter().enumerate() {
                assert!((t.theta[(a, a)] - nz * nz).abs() < 1e-14);
            }
            t.check_invariants().unwrap();
        }
    }

    #[test]
    fn empirical_filter_ntk_matches_analytic() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let n = r.gen_range(1..=8);
            let m = r.gen_range(1..=6);
            let k = r.gen_range(1..=4);
            let s = rand_sym(n, &mut r);
            let d = rand_data(n, m, &mut r);
            let model = GraphFilter { k };
            let p = model.init(&InitConfig { kappa: 1.0, seed: r.gen() }).unwrap();
            let emp = empirical_ntk(&model, &s, &p, &d).unwrap();
            let ana = filter_ntk(&s, &d, k).unwrap();
            assert!(linalg::rel_frobenius(&emp.theta, &ana.theta) < 1e-10);
        }
    }

    #[test]
    fn empirical_ntk_small_cases() {
        let x = DVector::from_vec(vec![0.3, -0.4, 0.5]);
        let d = Dataset::new(DMatrix::from_column_slice(3, 1, x.as_slice()), DMatrix::zeros(3, 1)).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let s = rand_sym(3, &mut r);
        let t = empirical_ntk(&GraphFilter { k: 1 }, &s, &[0.7], &d).unwrap();
        assert!((t.theta - &x * x.transpose()).norm() < 1e-15);
        let m = TwoLayerGnn { width: 4, k: 2, activation: Activation::Tanh, train: LayerSelection::Second };
        let mut p = m.init(&InitConfig { kappa: 1.0, seed: 1 }).unwrap();
        for v in &mut p[8..] {
            *v = 0.0;
        }
        assert!(empirical_ntk(&m, &s, &p, &d).unwrap().theta.norm() > 1e-3);
    }

    #[test]
    fn quadrature_e_elementary_cases() {
        let cfg = QuadConfig::default();
        // orthogonal rows -> rho = 0 -> E_ab = 0; diagonal reduces to 1D
        let z = ZVectors::from_matrix(DMatrix::from_row_slice(2, 2, &[0.8, 0.0, 0.0, 1.3]), 2, 1).unwrap();
        let e = expectation_e_quadrature(&z, Activation::Tanh, &cfg).unwrap();
        assert!(e.e[(0, 1)].abs() < 1e-14);
        let want = oracle::gaussian(|u| (0.8 * u).tanh().powi(2), 1e-12);
        assert!((e.e[(0, 0)] - want).abs() < 1e-9);
        assert!(e.e[(1, 1)] > 0.0 && e.e[(1, 1)] < 1.0);
        // zero row
        let z0 = ZVectors::from_matrix(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.5, 0.2]), 2, 1).unwrap();
        let e0 = expectation_e_quadrature(&z0, Activation::Tanh, &cfg).unwrap();
        assert_eq!(e0.zero_rows, vec![0]);
        assert_eq!(e0.e[(0, 1)], 0.0);
        assert_eq!(e0.e[(0, 0)], 0.0);
    }

    #[test]
    fn quadrature_e_matches_monte_carlo() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let z = ZVectors::from_matrix(DMatrix::from_fn(4, 2, |_, _| r.gen_range(-1.0..1.0)), 4, 1).unwrap();
        let e = expectation_e_quadrature(&z, Activation::Tanh, &QuadConfig::default()).unwrap();
        let e1 = expectation_e_first_layer(&z, Activation::Tanh, &QuadConfig::default()).unwrap();
        let gram = z.gram();
        let samples = 1_000_000;
        let mut sum = DMatrix::zeros(4, 4);
        let mut sq = DMatrix::zeros(4, 4);
        let mut sum1 = DMatrix::zeros(4, 4);
        let mut sq1 = DMatrix::zeros(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..samples {
            let g = DVector::from_iterator(2, (0..2).map(|_| StandardNormal.sample(&mut rng)));
            let u = &z.z * g;
            let q = u.map(f64::tanh);
            let dq = u.map(|v| Activation::Tanh.deriv(v));
            for a in 0..4 {
                for b in 0..4 {
                    let v = q[a] * q[b];
                    sum[(a, b)] += v;
                    sq[(a, b)] += v * v;
                    let w = dq[a] * dq[b] * gram[(a, b)];
                    sum1[(a, b)] += w;
                    sq1[(a, b)] += w * w;
                }
            }
        }
        let nf = samples as f64;
        for a in 0..4 {
            for b in 0..4 {
                let cases: [(&DMatrix<f64>, &DMatrix<f64>, f64); 2] = [(&sum, &sq, e.e[(a, b)]), (&sum1, &sq1, e1[(a, b)])];
                for (s, q2, target) in cases {
                    let mean: f64 = s[(a, b)] / nf;
                    let se: f64 = ((q2[(a, b)] / nf - mean * mean).max(0.0) / nf).sqrt();
                    assert!((mean - target).abs() <= 3.0 * se + 1e-12, "({a},{b}) {mean} vs {target} se {se}");
                }
            }
        }
    }

    #[test]
    fn series_matches_quadrature() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let cfg = QuadConfig::default();
        for _ in 0..3 {
            let s = rand_sym(4, &mut r);
            let d = rand_data(4, 5, &mut r);
            let z = ZVectors::new(&s, &d, 2).unwrap();
            let q = expectation_e_quadrature(&z, Activation::Tanh, &cfg).unwrap();
            let ser = expectation_e_series(&z, Activation::Tanh, 21, &cfg).unwrap();
            let diff = (&q.e - &ser.e).amax();
            assert!(diff <= 1e-6f64.max(ser.residual + q.residual), "{diff} vs {}", ser.residual);
            let (b, db) = ser.decomposition.as_ref().unwrap();
            assert!((b + db - &ser.e).amax() < 1e-15);
        }
        let z = ZVectors::from_matrix(DMatrix::from_row_slice(2, 2, &[0.8, 0.0, 0.0, 1.3]), 2, 1).unwrap();
        let ser = expectation_e_series(&z, Activation::Tanh, 9, &cfg).unwrap();
        let (b, db) = ser.decomposition.unwrap();
        assert_eq!(b[(0, 1)], 0.0);
        assert_eq!(db[(0, 1)], 0.0);
        assert!(expectation_e_series(&z, Activation::Tanh, 4, &cfg).is_err());
    }

    #[test]
    fn identity_paths_reduce_to_b_lin() {
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let cfg = QuadConfig::default();
        let (n, m, k) = (3, 4, 3);
        let s = rand_sym(n, &mut r);
        let d = rand_data(n, m, &mut r);
        let z = ZVectors::new(&s, &d, k).unwrap();
        let bl = b_lin(&s, &d, k).unwrap();
        let ser = expectation_e_series(&z, Activation::Identity, 5, &cfg).unwrap();
        assert_eq!(ser.e, bl);
        assert_eq!(ser.decomposition.unwrap().1.norm(), 0.0);
        assert_eq!(expectation_e_first_layer(&z, Activation::Identity, &cfg).unwrap(), bl);
        let e = expectation_e_quadrature(&z, Activation::Identity, &cfg).unwrap();
        let t = gnn_infinite_ntk_second_layer(&s, m, k, &e);
        assert!(linalg::rel_frobenius(&t.theta, &dense_sandwich(&s, m, &bl, k)) < 1e-12);
        let zs = DMatrix::zeros(n, n);
        let t0 = gnn_infinite_ntk_second_layer(&zs, m, k, &e);
        assert_eq!(t0.theta, e.e);
    }

    #[test]
    fn first_layer_diagonal() {
        let z = ZVectors::from_matrix(DMatrix::from_row_slice(2, 2, &[0.6, 0.3, -0.2, 0.9]), 2, 1).unwrap();
        let e1 = expectation_e_first_layer(&z, Activation::Tanh, &QuadConfig::default()).unwrap();
        for a in 0..2 {
            let y = z.z.row(a).norm();
            let want = oracle::gaussian(|u| (y * u).cosh().powi(-4), 1e-12) * y * y;
            assert!((e1[(a, a)] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn monte_carlo_ntk_behaviour() {
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let (n, m, k) = (5, 10, 2);
        let s = rand_sym(n, &mut r);
        let d = rand_data(n, m, &mut r);
        let a = gnn_monte_carlo_ntk(&s, &d, k, 64, 3, LayerSelection::Both, Activation::Tanh).unwrap();
        let b = gnn_monte_carlo_ntk(&s, &d, k, 64, 3, LayerSelection::Both, Activation::Tanh).unwrap();
        assert_eq!(a.theta, b.theta);
        a.check_invariants().unwrap();
        let exact = gnn_infinite_ntk(&s, &d, k, Activation::Tanh, LayerSelection::Both, &QuadConfig::default()).unwrap();
        let small = gnn_monte_carlo_ntk(&s, &d, k, 128, 1, LayerSelection::Both, Activation::Tanh).unwrap();
        let large = gnn_monte_carlo_ntk(&s, &d, k, 4096, 1, LayerSelection::Both, Activation::Tanh).unwrap();
        let es = linalg::rel_frobenius(&small.theta, &exact.theta);
        let el = linalg::rel_frobenius(&large.theta, &exact.theta);
        assert!(el < es && el < 0.05, "{el} vs {es}");
    }

    #[test]
    fn monte_carlo_agrees_with_empirical_gnn_ntk() {
        // the MC estimator is the empirical NTK of a unit-variance GNN
        let mut r = ChaCha8Rng::seed_from_u64(8);
        let s = rand_sym(3, &mut r);
        let d = rand_data(3, 2, &mut r);
        let mc = gnn_monte_carlo_ntk(&s, &d, 2, 1, 11, LayerSelection::Both, Activation::Tanh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        rng.set_stream(0);
        let v: Vec<f64> = (0..4).map(|_| StandardNormal.sample(&mut rng)).collect();
        let m = TwoLayerGnn { width: 1, k: 2, activation: Activation::Tanh, train: LayerSelection::Both };
        let emp = empirical_ntk(&m, &s, &v, &d).unwrap();
        assert!(linalg::rel_frobenius(&mc.theta, &emp.theta) < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn e_matrix_invariants(seed in 0u64..1000) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let s = rand_sym(3, &mut r);
            let d = rand_data(3, 3, &mut r);
            let z = ZVectors::new(&s, &d, 2).unwrap();
            let e = expectation_e_quadrature(&z, Activation::Tanh, &QuadConfig::default()).unwrap();
            for a in 0..9 {
                prop_assert!(e.e[(a, a)] < 1.0);
                for b in 0..9 {
                    prop_assert!(e.e[(a, b)].abs() <= 1.0);
                    prop_assert!(e.e[(a, b)].abs() <= (e.e[(a, a)] * e.e[(b, b)]).sqrt() + 1e-12);
                }
            }
            let t = gnn_infinite_ntk_second_layer(&s, 3, 2, &e);
            prop_assert!(t.check_invariants().is_ok());
        }
    }

    #[test]
    fn drift_cases() {
        let inst = crate::alignment::random_instance(41, &crate::alignment::InstanceRanges::default());
        let cfg = crate::training::TrainConfig { eta: 0.05, epochs: 20, ..Default::default() };
        let f = crate::models::GraphFilter { k: 3 };
        let run = model_ntk_drift(&f, &inst.s, &inst.data, &cfg, 5).unwrap();
        assert!(run.trace.ntk_drift.iter().all(|x| x.1 == 0.0));
        assert_eq!(run.trace.ntk_drift.len(), 5);
        let zero = crate::training::TrainConfig { epochs: 0, ..cfg };
        let p = ntk_drift(&inst.s, &inst.data, 2, Activation::Tanh, &zero, &[8], 1).unwrap();
        assert_eq!(p[0].drift, 0.0);
        let p = ntk_drift(&inst.s, &inst.data, 2, Activation::Tanh, &cfg, &[8], 5).unwrap();
        assert!(p[0].drift > 0.0);
    }
}
