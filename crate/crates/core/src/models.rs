//! Predictors: polynomial graph filter, two-layer GNN and the multi-layer
//! MIMO GNN, with forward passes, analytic Jacobians and Gaussian init.
//!
//! Parameters are flat vectors ordered by (layer, feature f, tap k).

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::NtkProvenance;
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
    Sigmoid,
    Relu,
    LeakyRelu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
        }
    }

    /// Derivative; the kinks of relu and leaky relu take the left slope.
    pub fn deriv(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let c = x.cosh();
                if c.is_finite() {
                    1.0 / (c * c)
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => {
                let s = self.apply(x);
                s * (1.0 - s)
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }

    /// Whether the infinite-width kernels have an analytic path.
    pub fn has_analytic_ntk(self) -> bool {
        matches!(self, Activation::Tanh | Activation::Identity)
    }

    pub fn is_smooth(self) -> bool {
        matches!(self, Activation::Tanh | Activation::Identity | Activation::Sigmoid)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "tanh" => Ok(Activation::Tanh),
            "identity" | "linear" => Ok(Activation::Identity),
            "sigmoid" => Ok(Activation::Sigmoid),
            "relu" => Ok(Activation::Relu),
            "leaky_relu" | "leakyrelu" => Ok(Activation::LeakyRelu),
            other => Err(Error::InvalidArgument(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerSelection {
    First,
    Second,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub kappa: f64,
    pub seed: u64,
}

/// `count` i.i.d. `N(0, kappa^2)` draws.
pub fn init_params(count: usize, cfg: &InitConfig) -> Result<Vec<f64>> {
    if !(cfg.kappa > 0.0) {
        return Err(Error::InvalidArgument(format!("kappa must be positive, got {}", cfg.kappa)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.kappa).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((0..count).map(|_| normal.sample(&mut rng)).collect())
}

/// `[x, S x, ..., S^{K-1} x]` as an `n x K` matrix.
pub fn filter_jacobian(s: &DMatrix<f64>, x: &DVector<f64>, k: usize) -> DMatrix<f64> {
    let n = x.len();
    let mut out = DMatrix::zeros(n, k);
    let mut cur = x.clone();
    for j in 0..k {
        if j > 0 {
            cur = s * &cur;
        }
        out.set_column(j, &cur);
    }
    out
}

/// `sum_k h_k S^k x`.
pub fn filter_forward(s: &DMatrix<f64>, h: &[f64], x: &DVector<f64>) -> Result<DVector<f64>> {
    if s.nrows() != x.len() || !s.is_square() {
        return Err(Error::Dimension(format!("S is {:?}, x has length {}", s.shape(), x.len())));
    }
    let mut acc = DVector::zeros(x.len());
    let mut cur = x.clone();
    for (j, &hk) in h.iter().enumerate() {
        if j > 0 {
            cur = s * &cur;
        }
        acc.axpy(hk, &cur, 1.0);
    }
    Ok(acc)
}

/// `[X, S X, ..., S^{K-1} X]` for a batch of columns.
pub fn batch_powers(s: &DMatrix<f64>, x: &DMatrix<f64>, k: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(k);
    let mut cur = x.clone();
    for j in 0..k {
        if j > 0 {
            cur = s * &cur;
        }
        out.push(cur.clone());
    }
    out
}

/// A predictor differentiable in its trainable parameters.
pub trait Model: Send + Sync {
    fn num_params(&self) -> usize;
    /// Indices of the parameters updated by training, in Jacobian column order.
    fn trained(&self) -> Vec<usize>;
    fn forward(&self, s: &DMatrix<f64>, params: &[f64], x: &DVector<f64>) -> DVector<f64>;
    /// Jacobian wrt the trained parameters, `n x trained().len()`.
    fn jacobian(&self, s: &DMatrix<f64>, params: &[f64], x: &DVector<f64>) -> DMatrix<f64>;

    /// Outputs for every column of `x`.
    fn forward_batch(&self, s: &DMatrix<f64>, params: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for (i, c) in x.column_iter().enumerate() {
            out.set_column(i, &self.forward(s, params, &c.into_owned()));
        }
        out
    }

    /// `sum_i J_i^T r_i` over columns `r_i` of `residual`, the gradient of
    /// `1/2 sum_i ||f(x_i) - y_i||^2` when `residual = F - Y`.
    fn gradient(&self, s: &DMatrix<f64>, params: &[f64], x: &DMatrix<f64>, residual: &DMatrix<f64>) -> DVector<f64> {
        let p = self.trained().len();
        let mut g = DVector::zeros(p);
        for i in 0..x.ncols() {
            let j = self.jacobian(s, params, &x.column(i).into_owned());
            g += j.transpose() * residual.column(i);
        }
        g
    }

    fn init(&self, cfg: &InitConfig) -> Result<Vec<f64>> {
        init_params(self.num_params(), cfg)
    }

    /// Whether the NTK is independent of the parameters.
    fn is_linear(&self) -> bool {
        false
    }

    fn provenance(&self) -> NtkProvenance;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphFilter {
    pub k: usize,
}

impl Model for GraphFilter {
    fn num_params(&self) -> usize {
        self.k
    }

    fn trained(&self) -> Vec<usize> {
        (0..self.k).collect()
    }

    fn forward(&self, s: &DMatrix<f64>, params: &[f64], x: &DVector<f64>) -> DVector<f64> {
        filter_forward(s, params, x).expect("shape checked by caller")
    }

    fn jacobian(&self, s: &DMatrix<f64>, _params: &[f64], x: &DVector<f64>) -> DMatrix<f64> {
        filter_jacobian(s, x, self.k)
    }

    fn forward_batch(&self, s: &DMatrix<f64>, params: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut acc = DMatrix::zeros(x.nrows(), x.ncols());
        for (p, &h) in batch_powers(s, x, self.k).iter().zip(params) {
            acc += p * h;
        }
        acc
    }

    fn gradient(&self, s: &DMatrix<f64>, _params: &[f64], x: &DMatrix<f64>, residual: &DMatrix<f64>) -> DVector<f64> {
        let pw = batch_powers(s, x, self.k);
        DVector::from_iterator(self.k, pw.iter().map(|p| p.dot(residual)))
    }

    fn is_linear(&self) -> bool {
        true
    }

    fn provenance(&self) -> NtkProvenance {
        NtkProvenance::FilterEmpirical
    }
}

/// Two-layer GNN `f(x) = F^{-1/2} sum_f H_f(S) sigma(G_f(S) x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoLayerGnn {
    pub width: usize,
    pub k: usize,
    pub activation: Activation,
    pub train: LayerSelection,
}

/// Views of the flat GNN parameter vector: first-layer taps `g` then
/// second-layer taps `h`, each `F x K` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerGnnParams {
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub activation: Activation,
}

impl TwoLayerGnn {
    pub fn unpack(&self, params: &[f64]) -> TwoLayerGnnParams {
        let fk = self.width * self.k;
        TwoLayerGnnParams {
            g: DMatrix::from_row_slice(self.width, self.k, &params[..fk]),
            h: DMatrix::from_row_slice(self.width, self.k, &params[fk..2 * fk]),
            activation: self.activation,
        }
    }

    pub fn pack(&self, p: &TwoLayerGnnParams) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.width * self.k);
        for m in [&p.g, &p.h] {
            for f in 0..self.width {
                for k in 0..self.k {
                    out.push(m[(f, k)]);
                }
            }
        }
        out
    }

    fn idx(&self, layer: usize, f: usize, k: usize) -> usize {
        layer * self.width * self.k + f * self.k + k
    }
}

/// Two-layer GNN forward pass.
pub fn gnn2_forward(s: &DMatrix<f64>, p: &TwoLayerGnnParams, x: &DVector<f64>) -> Result<DVector<f64>> {
    if p.g.shape() != p.h.shape() {
        return Err(Error::Dimension(format!("g is {:?} but h is {:?}", p.g.shape(), p.h.shape())));
    }
    if s.nrows() != x.len() {
        return Err(Error::Dimension(format!("S is {:?}, x has length {}", s.shape(), x.len())));
    }
    let (width, k) = p.g.shape();
    let model = TwoLayerGnn { width, k, activation: p.activation, train: LayerSelection::Both };
    Ok(model.forward(s, &model.pack(p), x))
}

/// Two-layer GNN Jacobian for the selected layer(s).
pub fn gnn2_jacobian(s: &DMatrix<f64>, p: &TwoLayerGnnParams, x: &DVector<f64>, which: LayerSelection) -> DMatrix<f64> {
    let (width, k) = p.g.shape();
    let model = TwoLayerGnn { width, k, activation: p.activation, train: which };
    model.jacobian(s, &model.pack(p), x)
}

impl Model for TwoLayerGnn {
    fn provenance(&self) -> NtkProvenance {
        NtkProvenance::GnnEmpirical { width: self.width }
    }

    fn num_params(&self) -> usize {
        2 * self.width * self.k
    }

    fn trained(&self) -> Vec<usize> {
        let fk = self.width * self.k;
        match self.train {
            LayerSelection::First => (0..fk).collect(),
            LayerSelection::Second => (fk..2 * fk).collect(),
            LayerSelection::Both => (0..2 * fk).collect(),
        }
    }

    fn forward(&self, s: &DMatrix<f64>, params: &[f64], x: &DVector<f64>) -> DVector<f64> {
        let xm = DMatrix::from_column_slice(x.len(), 1, x.as_slice());
        let out = self.forward_batch(s, params, &xm);
        DVector::from_column_slice(out.as_slice())
    }

    fn forward_batch(&self, s: &DMatrix<f64>, params: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
        let pw = batch_powers(s, x, self.k);
        let (n, m) = x.shape();
        let mut w: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, m); self.k];
        for f in 0..self.width {
            let mut u = DMatrix::zeros(n, m);
            for (j, p) in pw.iter().enumerate() {
                u += p * params[self.idx(0, f, j)];
            }
            let q = u.map(|v| self.activation.apply(v));
            for (j, wj) in w.iter_mut().enumerate() {
                *wj += &q * params[self.idx(1, f, j)];
            }
        }
        // Horner: W_0 + S (W_1 + S (W_2 + ...))
        let mut acc = DMatrix::zeros(n, m);
        for j in (0..self.k).rev() {
            acc = if j + 1 == self.k { w[j].clone() } else { &w[j] + s * &acc };
        }
        acc / (self.width as f64).sqrt()
    }

    fn jacobian(&self, s: &DMatrix<f64>, params: &[f64], x: &DVector<f64>) -> DMatrix<f64> {
        let n = x.len();
        let k = self.k;
        let scale = 1.0 / (self.width as f64).sqrt();
        let xm = DMatrix::from_column_slice(n, 1, x.as_slice());
        let pw = batch_powers(s, &xm, k);
        let trained = self.trained();
        let mut col_of = vec![usize::MAX; self.num_params()];
        for (c, &i) in trained.iter().enumerate() {
            col_of[i] = c;
        }
        let mut jac = DMatrix::zeros(n, trained.len());
        for f in 0..self.width {
            let mut u = DMatrix::zeros(n, 1);
            for (j, p) in pw.iter().enumerate() {
                u += p * params[self.idx(0, f, j)];
            }
            if self.train != LayerSelection::First {
                let q = u.map(|v| self.activation.apply(v));
                let mut cur = q;
                for j in 0..k {
                    if j > 0 {
                        cur = s * &cur;
                    }
                    let c = col_of[self.idx(1, f, j)];
                    jac.column_mut(c).copy_from(&(cur.column(0) * scale));
                }
            }
            if self.train != LayerSelection::Second {
                let d = u.map(|v| self.activation.deriv(v));
                let hf: Vec<f64> = (0..k).map(|j| params[self.idx(1, f, j)]).collect();
                for (j, p) in pw.iter().enumerate() {
                    let v = DVector::from_iterator(n, d.iter().zip(p.iter()).map(|(a, b)| a * b));
                    let col = filter_forward(s, &hf, &v).expect("square shift") * scale;
                    let c = col_of[self.idx(0, f, j)];
                    jac.column_mut(c).copy_from(&col);
                }
            }
        }
        jac
    }

    fn gradient(&self, s: &DMatrix<f64>, params: &[f64], x: &DMatrix<f64>, residual: &DMatrix<f64>) -> DVector<f64> {
        let k = self.k;
        let scale = 1.0 / (self.width as f64).sqrt();
        let pw = batch_powers(s, x, k);
        // T_j = (S^T)^j R
        let st = s.transpose();
        let t = batch_powers(&st, residual, k);
        let trained = self.trained();
        let mut full = vec![0.0; self.num_params()];
        let (n, m) = x.shape();
        for f in 0..self.width {
            let mut u = DMatrix::zeros(n, m);
            for (j, p) in pw.iter().enumerate() {
                u += p * params[self.idx(0, f, j)];
            }
            if self.train != LayerSelection::First {
                let q = u.map(|v| self.activation.apply(v));
                for (j, tj) in t.iter().enumerate() {
                    full[self.idx(1, f, j)] = scale * q.dot(tj);
                }
            }
            if self.train != LayerSelection::Second {
                let mut v = DMatrix::zeros(n, m);
                for (j, tj) in t.iter().enumerate() {
                    v += tj * params[self.idx(1, f, j)];
                }
                let dv = u.zip_map(&v, |a, b| self.activation.deriv(a) * b);
                for (j, p) in pw.iter().enumerate() {
                    full[self.idx(0, f, j)] = scale * dv.dot(p);
                }
            }
        }
        DVector::from_iterator(trained.len(), trained.iter().map(|&i| full[i]))
    }
}

/// One MIMO layer: taps indexed `(f_out, f_in, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MimoLayer {
    pub f_in: usize,
    pub f_out: usize,
    pub k: usize,
    pub taps: Vec<f64>,
}

impl MimoLayer {
    pub fn tap(&self, f: usize, g: usize, k: usize) -> f64 {
        self.taps[(f * self.f_in + g) * self.k + k]
    }
}

/// Multi-layer GNN with filter banks; the last layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MimoGnnParams {
    pub layers: Vec<MimoLayer>,
    pub activation: Activation,
}

impl MimoGnnParams {
    /// The two-layer GNN as a MIMO network; the `F^{-1/2}` output scale is
    /// folded into the last layer.
    pub fn from_gnn2(p: &TwoLayerGnnParams) -> Self {
        let (width, k) = p.g.shape();
        let mut first = Vec::with_capacity(width * k);
        let mut second = Vec::with_capacity(width * k);
        let scale = 1.0 / (width as f64).sqrt();
        for f in 0..width {
            for j in 0..k {
                first.push(p.g[(f, j)]);
                second.push(p.h[(f, j)] * scale);
            }
        }
        Self {
            layers: vec![
                MimoLayer { f_in: 1, f_out: width, k, taps: first },
                MimoLayer { f_in: width, f_out: 1, k, taps: second },
            ],
            activation: p.activation,
        }
    }
}

pub fn mimo_forward(s: &DMatrix<f64>, p: &MimoGnnParams, x: &DVector<f64>) -> Result<DVector<f64>> {
    let first = p.layers.first().ok_or_else(|| Error::InvalidArgument("MIMO network has no layers".into()))?;
    if first.f_in != 1 {
        return Err(Error::Dimension(format!("first layer takes {} input features, expected 1", first.f_in)));
    }
    if s.nrows() != x.len() {
        return Err(Error::Dimension(format!("S is {:?}, x has length {}", s.shape(), x.len())));
    }
    let mut q: Vec<DVector<f64>> = vec![x.clone()];
    let depth = p.layers.len();
    for (li, layer) in p.layers.iter().enumerate() {
        if layer.f_in != q.len() || layer.taps.len() != layer.f_in * layer.f_out * layer.k {
            return Err(Error::Dimension(format!("layer {li} shape does not match its input")));
        }
        let mut next = Vec::with_capacity(layer.f_out);
        for f in 0..layer.f_out {
            let mut u = DVector::zeros(x.len());
            for (g, qg) in q.iter().enumerate() {
                let taps: Vec<f64> = (0..layer.k).map(|j| layer.tap(f, g, j)).collect();
                u += filter_forward(s, &taps, qg)?;
            }
            if li + 1 < depth {
                u.apply(|v| *v = p.activation.apply(*v));
            }
            next.push(u);
        }
        q = next;
    }
    if q.len() != 1 {
        return Err(Error::Dimension(format!("last layer has {} output features, expected 1", q.len())));
    }
    Ok(q.pop().unwrap())
}

/// Shape header stored with a parameter file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "model")]
pub enum ParamShape {
    Filter { k: usize },
    Gnn2 { width: usize, k: usize, activation: Activation },
}

impl ParamShape {
    pub fn len(&self) -> usize {
        match *self {
            ParamShape::Filter { k } => k,
            ParamShape::Gnn2 { width, k, .. } => 2 * width * k,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Writes `# {json shape}` followed by one value per line.
pub fn save_params(path: &std::path::Path, shape: &ParamShape, values: &[f64]) -> Result<()> {
    if values.len() != shape.len() {
        return Err(Error::Dimension(format!("{} values for a shape of {}", values.len(), shape.len())));
    }
    let mut out = format!("# {}\n", serde_json::to_string(shape)?);
    for v in values {
        out.push_str(&format!("{v:.16e}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn load_params(path: &std::path::Path) -> Result<(ParamShape, Vec<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::EmptyInput)?;
    let json = header
        .strip_prefix('#')
        .ok_or_else(|| Error::Csv { row: 1, col: 1, msg: "missing '# {shape}' header".into() })?;
    let shape: ParamShape = serde_json::from_str(json.trim())?;
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        values.push(t.parse::<f64>().map_err(|e| Error::Csv { row: i + 2, col: 1, msg: e.to_string() })?);
    }
    if values.len() != shape.len() {
        return Err(Error::Dimension(format!("{} values for a shape of {}", values.len(), shape.len())));
    }
    Ok((shape, values))
}
