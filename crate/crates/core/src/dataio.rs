//! Synthetic VAR(1) time series, input/target pair extraction and CSV I/O.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Steps simulated and discarded before the first recorded sample.
pub const BURN_IN: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct VarProcessConfig {
    pub n: usize,
    pub t_len: usize,
    /// Transition matrix; spectral radius must be below 1.
    pub a: DMatrix<f64>,
    pub noise_scale: f64,
    pub seed: u64,
    /// Unit direction along which the lag-one cross-covariance is planted.
    pub planted: Option<DVector<f64>>,
}

impl VarProcessConfig {
    pub fn new(a: DMatrix<f64>, t_len: usize, noise_scale: f64, seed: u64) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::Dimension(format!("transition matrix must be square and nonempty, got {:?}", a.shape())));
        }
        if !(noise_scale > 0.0) {
            return Err(Error::InvalidArgument(format!("noise_scale must be positive, got {noise_scale}")));
        }
        let cfg = Self { n: a.nrows(), t_len, a, noise_scale, seed, planted: None };
        cfg.check_stationary()?;
        Ok(cfg)
    }

    /// `A = a (u u^T - v v^T)` with random orthonormal `u`, `v` drawn from
    /// `seed` and `0 < a < 1`. The covariance `I + a^2/(1-a^2) (u u^T + v v^T)`
    /// cannot tell `u` from `v`, while the lag-one cross-covariance
    /// `A/(1-a^2)` carries the sign; its top eigenvector `u` is recorded as
    /// the planted direction.
    pub fn planted(n: usize, t_len: usize, strength: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("planted coupling needs n >= 2, got {n}")));
        }
        if !(strength > 0.0 && strength < 1.0) {
            return Err(Error::InvalidArgument(format!("planted strength must lie in (0, 1), got {strength}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(7);
        let mut draw = || DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let u = draw().normalize();
        let mut v = draw();
        v -= &u * u.dot(&v);
        let v = v.normalize();
        let a = (&u * u.transpose() - &v * v.transpose()) * strength;
        let mut cfg = Self::new(a, t_len, 1.0, seed)?;
        cfg.planted = Some(u);
        Ok(cfg)
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    pub fn check_stationary(&self) -> Result<()> {
        let r = self.spectral_radius();
        if r >= 1.0 - 1e-12 {
            return Err(Error::NonStationary(r));
        }
        Ok(())
    }
}

/// Largest eigenvalue modulus. Falls back to `||A^(2^j)||^(2^-j)` when the
/// Schur iteration stalls, which it can on defective matrices.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if let Some(schur) = nalgebra::linalg::Schur::try_new(a.clone(), 1e-14, 10_000) {
        return schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    }
    // p = A^(2^j) / exp(log_scale)
    let mut p = a.clone();
    let mut log_scale = 0.0;
    let mut est = p.norm();
    for j in 1..=30 {
        p = &p * &p;
        let nrm = p.norm();
        if nrm == 0.0 {
            return 0.0;
        }
        log_scale = 2.0 * log_scale + nrm.ln();
        p /= nrm;
        est = (log_scale / f64::powi(2.0, j)).exp();
    }
    est
}

/// `z_{t+1} = A z_t + noise_scale w_t`, returned as `n x t_len`.
pub fn generate_var(cfg: &VarProcessConfig) -> Result<DMatrix<f64>> {
    cfg.check_stationary()?;
    if cfg.t_len == 0 {
        return Err(Error::EmptyInput);
    }
    let n = cfg.n;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut z = DVector::<f64>::zeros(n);
    let mut out = DMatrix::zeros(n, cfg.t_len);
    for t in 0..BURN_IN + cfg.t_len {
        let w = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        z = &cfg.a * &z + w * cfg.noise_scale;
        if t >= BURN_IN {
            out.set_column(t - BURN_IN, &z);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PairExtractionConfig {
    pub dt: usize,
    pub m_train: usize,
    pub m_test: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PairSplit {
    pub train: Dataset,
    pub test: Dataset,
    /// Factor applied to every sample of both splits.
    pub scale: f64,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Samples disjoint start times, pairs `x = z_t` with `y = z_{t+dt}` and
/// rescales both splits by the one factor that brings the largest training
/// column of X or Y to unit norm.
pub fn extract_pairs(series: &DMatrix<f64>, cfg: &PairExtractionConfig) -> Result<PairSplit> {
    let len = series.ncols();
    let need = cfg.m_train + cfg.m_test;
    if cfg.m_train == 0 {
        return Err(Error::InvalidArgument("need at least one training pair".into()));
    }
    if len < cfg.dt || need > len - cfg.dt {
        return Err(Error::InsufficientLength { have: len, need: need + cfg.dt });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let idx = index::sample(&mut rng, len - cfg.dt, need).into_vec();
    let (train_idx, test_idx) = (idx[..cfg.m_train].to_vec(), idx[cfg.m_train..].to_vec());
    let take = |ids: &[usize], shift: usize| {
        let cols: Vec<usize> = ids.iter().map(|t| t + shift).collect();
        series.select_columns(&cols)
    };
    let raw = Dataset::new(take(&train_idx, 0), take(&train_idx, cfg.dt))?;
    let (train, scale) = raw.normalize_global();
    let test = if test_idx.is_empty() {
        Dataset { x: DMatrix::zeros(series.nrows(), 0), y: DMatrix::zeros(series.nrows(), 0), normalized: true }
    } else {
        let t = Dataset::new(take(&test_idx, 0) * scale, take(&test_idx, cfg.dt) * scale)?;
        Dataset { normalized: true, ..t }
    };
    Ok(PairSplit { train, test, scale, train_idx, test_idx })
}

/// Reads a rectangular numeric CSV. A first row with no numeric cell is
/// taken as a header and skipped.
pub fn load_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_path(path).map_err(csv_err)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        let parsed: Vec<std::result::Result<f64, _>> = rec.iter().map(|c| c.parse::<f64>()).collect();
        if r == 0 && parsed.iter().all(|p| p.is_err()) {
            continue;
        }
        let mut row = Vec::with_capacity(parsed.len());
        for (c, p) in parsed.into_iter().enumerate() {
            match p {
                Ok(v) => row.push(v),
                Err(_) => {
                    return Err(Error::Csv { row: r + 1, col: c + 1, msg: format!("not a number: '{}'", &rec[c]) })
                }
            }
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Csv { row: r + 1, col: row.len().min(w) + 1, msg: format!("expected {w} columns, found {}", row.len()) })
            }
            _ => {}
        }
        rows.push(row);
    }
    let w = width.ok_or(Error::EmptyInput)?;
    Ok(DMatrix::from_fn(rows.len(), w, |i, j| rows[i][j]))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Csv { row: 0, col: 0, msg: format!("{other:?}") },
    }
}

/// Writes one matrix row per line with 17 significant digits.
pub fn save_csv(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_path(path).map_err(csv_err)?;
    for r in m.row_iter() {
        w.write_record(r.iter().map(|v| format!("{v:.16e}"))).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads `X` and `Y` (rows = nodes, columns = samples).
pub fn load_dataset(x_path: &Path, y_path: &Path) -> Result<Dataset> {
    Dataset::new(load_csv(x_path)?, load_csv(y_path)?)
}

pub fn save_dataset(d: &Dataset, x_path: &Path, y_path: &Path) -> Result<()> {
    save_csv(&d.x, x_path)?;
    save_csv(&d.y, y_path)
}

/// `sum_t x_t y_t^T / T` over the columns of two equally long blocks.
pub fn empirical_cross(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    x * y.transpose() / x.ncols() as f64
}
