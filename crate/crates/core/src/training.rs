//! Gradient-descent training, linearized NTK dynamics and the training and
//! generalization bounds for graph filters.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{stack, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{self, PinvQuadratic};
use crate::models::{Activation, GraphFilter, InitConfig, LayerSelection, Model, TwoLayerGnn};
use crate::ntk;

/// Loss growth factor over the initial loss that counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Gd,
    Adam,
}

impl Optimizer {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gd" | "sgd" => Ok(Self::Gd),
            "adam" => Ok(Self::Adam),
            other => Err(Error::InvalidArgument(format!("unknown optimizer '{other}' (expected gd or adam)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub epochs: usize,
    /// Minibatch size in samples; 0 means full batch.
    pub batch_size: usize,
    pub optimizer: Optimizer,
    /// Standard deviation of the initial parameters.
    pub kappa: f64,
    pub seed: u64,
    pub eps_budget: f64,
    pub delta_budget: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.0125,
            epochs: 100,
            batch_size: 0,
            optimizer: Optimizer::Gd,
            kappa: 1.0,
            seed: 0,
            eps_budget: 1e-3,
            delta_budget: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidArgument(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::InvalidArgument(format!("kappa must be positive, got {}", self.kappa)));
        }
        Ok(())
    }

    /// Initialization scale `eps * sqrt(delta / (n M))`.
    pub fn bound_kappa(eps: f64, delta: f64, n: usize, m: usize) -> f64 {
        eps * (delta / (n * m) as f64).sqrt()
    }
}

/// Per-epoch record of one run; every vector has `epochs + 1` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub train_loss: Vec<f64>,
    pub test_loss: Option<Vec<f64>>,
    /// `||h_t - h_0||` over the trained parameters.
    pub param_movement: Vec<f64>,
    /// `(epoch, relative NTK change)` samples, when recorded.
    pub ntk_drift: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub trace: TrainTrace,
    pub init: Vec<f64>,
    pub params: Vec<f64>,
}

/// `1/2 sum_i ||y_i - f(x_i)||^2`.
pub fn loss<M: Model + ?Sized>(model: &M, s: &DMatrix<f64>, params: &[f64], d: &Dataset) -> f64 {
    let f = model.forward_batch(s, params, &d.x);
    0.5 * (f - &d.y).norm_squared()
}

fn check_shapes(s: &DMatrix<f64>, d: &Dataset) -> Result<()> {
    if s.nrows() != d.n() || s.ncols() != d.n() {
        return Err(Error::Dimension(format!("shift is {:?} but data has n = {}", s.shape(), d.n())));
    }
    Ok(())
}

pub fn train<M: Model + ?Sized>(model: &M, s: &DMatrix<f64>, data: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig) -> Result<TrainRun> {
    train_observed(model, s, data, test, cfg, None, &mut |_, _| Ok(()))
}

/// Training loop. `observer` is called with `(epoch, params)` after the
/// initial state and after every epoch.
pub fn train_observed<M: Model + ?Sized>(
    model: &M,
    s: &DMatrix<f64>,
    data: &Dataset,
    test: Option<&Dataset>,
    cfg: &TrainConfig,
    init: Option<Vec<f64>>,
    observer: &mut dyn FnMut(usize, &[f64]) -> Result<()>,
) -> Result<TrainRun> {
    cfg.validate()?;
    check_shapes(s, data)?;
    if let Some(t) = test {
        check_shapes(s, t)?;
    }
    let init = match init {
        Some(p) if p.len() == model.num_params() => p,
        Some(p) => {
            return Err(Error::Dimension(format!("{} initial parameters for a model with {}", p.len(), model.num_params())))
        }
        None => model.init(&InitConfig { kappa: cfg.kappa, seed: cfg.seed })?,
    };
    let trained = model.trained();
    let mut params = init.clone();
    let movement = |p: &[f64]| trained.iter().map(|&i| (p[i] - init[i]).powi(2)).sum::<f64>().sqrt();

    let l0 = loss(model, s, &params, data);
    let limit = DIVERGENCE_FACTOR * l0.max(f64::MIN_POSITIVE);
    let mut trace = TrainTrace {
        train_loss: vec![l0],
        test_loss: test.map(|t| vec![loss(model, s, &params, t)]),
        param_movement: vec![0.0],
        ntk_drift: Vec::new(),
    };
    observer(0, &params)?;

    let m = data.m();
    let batch = if cfg.batch_size == 0 || cfg.batch_size >= m { m } else { cfg.batch_size };
    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let p = trained.len();
    let (mut m1, mut m2) = (DVector::<f64>::zeros(p), DVector::<f64>::zeros(p));
    let (b1, b2, adam_eps) = (0.9, 0.999, 1e-8);
    let mut step = 0i32;

    for epoch in 1..=cfg.epochs {
        if batch < m {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            let (xb, yb) = if batch == m {
                (data.x.clone(), data.y.clone())
            } else {
                (data.x.select_columns(chunk), data.y.select_columns(chunk))
            };
            let residual = model.forward_batch(s, &params, &xb) - yb;
            let g = model.gradient(s, &params, &xb, &residual);
            step += 1;
            match cfg.optimizer {
                Optimizer::Gd => {
                    for (j, &i) in trained.iter().enumerate() {
                        params[i] -= cfg.eta * g[j];
                    }
                }
                Optimizer::Adam => {
                    m1 = &m1 * b1 + &g * (1.0 - b1);
                    m2 = &m2 * b2 + g.component_mul(&g) * (1.0 - b2);
                    let c1 = 1.0 - f64::powi(b1, step);
                    let c2 = 1.0 - f64::powi(b2, step);
                    for (j, &i) in trained.iter().enumerate() {
                        params[i] -= cfg.eta * (m1[j] / c1) / ((m2[j] / c2).sqrt() + adam_eps);
                    }
                }
            }
        }
        let l = loss(model, s, &params, data);
        if !l.is_finite() || l > limit {
            return Err(Error::Divergence(epoch));
        }
        trace.train_loss.push(l);
        if let (Some(t), Some(v)) = (test, trace.test_loss.as_mut()) {
            v.push(loss(model, s, &params, t));
        }
        trace.param_movement.push(movement(&params));
        observer(epoch, &params)?;
    }
    Ok(TrainRun { trace, init, params })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearizedTrace {
    /// `||(I - eta Theta)^t (f_0 - y)||^2` for `t = 0..=T`.
    pub residual_sq: Vec<f64>,
    pub eta_lambda_max: f64,
    /// False when `eta * lambda_max > 1`.
    pub in_regime: bool,
}

/// Closed-form kernel gradient descent residuals.
pub fn linearized_dynamics(theta: &DMatrix<f64>, y: &DVector<f64>, f0: &DVector<f64>, eta: f64, epochs: usize) -> Result<LinearizedTrace> {
    if theta.nrows() != y.len() || f0.len() != y.len() {
        return Err(Error::Dimension(format!("Theta {:?}, y {}, f0 {}", theta.shape(), y.len(), f0.len())));
    }
    let (vals, vecs) = linalg::sym_eigen(theta);
    let coords = vecs.transpose() * (f0 - y);
    let lambda_max = vals.iter().cloned().fold(0.0, f64::max);
    let factors: Vec<f64> = vals.iter().map(|l| (1.0 - eta * l).powi(2)).collect();
    let mut cur: Vec<f64> = coords.iter().map(|c| c * c).collect();
    let mut residual_sq = Vec::with_capacity(epochs + 1);
    residual_sq.push(cur.iter().sum());
    for _ in 0..epochs {
        for (c, f) in cur.iter_mut().zip(&factors) {
            *c *= f;
        }
        residual_sq.push(cur.iter().sum());
    }
    let eta_lambda_max = eta * lambda_max;
    Ok(LinearizedTrace { residual_sq, eta_lambda_max, in_regime: eta_lambda_max <= 1.0 + 1e-12 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichConfig {
    /// Step size; `None` picks `1 / lambda_max`.
    pub eta: Option<f64>,
    pub epochs: usize,
    pub eps: f64,
    pub delta: f64,
    pub c_slack: f64,
    pub seed: u64,
}

impl Default for SandwichConfig {
    fn default() -> Self {
        Self { eta: None, epochs: 200, eps: 1e-3, delta: 0.05, c_slack: 10.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochBound {
    pub epoch: usize,
    pub lower: f64,
    pub observed: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    pub epochs: Vec<EpochBound>,
    pub slack: f64,
    pub kappa: f64,
    pub eta: f64,
    pub lambda_max: f64,
    pub violations: Vec<usize>,
    /// Epochs whose lower bound is negative and therefore says nothing.
    pub vacuous_lower: usize,
}

impl BoundCheck {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Trains a graph filter from a small random start with full-batch GD and
/// compares `||f_t - y||^2` against
/// `y^T (I - 2 t eta Theta) y - slack <= . <= y^T (I - eta Theta) y + slack`.
pub fn check_training_error_sandwich(s: &DMatrix<f64>, d: &Dataset, k: usize, cfg: &SandwichConfig) -> Result<BoundCheck> {
    let theta = ntk::filter_ntk(s, d, k)?.theta;
    let y = stack(d).y;
    let lambda_max = linalg::sym_op_norm(&theta);
    let eta = match cfg.eta {
        Some(e) => e,
        None if lambda_max > 0.0 => 1.0 / lambda_max,
        None => 1.0,
    };
    if eta * lambda_max > 1.0 + 1e-12 {
        return Err(Error::Regime(eta * lambda_max));
    }
    let (n, m) = (d.n(), d.m());
    let kappa = TrainConfig::bound_kappa(cfg.eps, cfg.delta, n, m);
    let slack = cfg.c_slack * kappa * ((n * m) as f64 / cfg.delta).sqrt();
    let tc = TrainConfig {
        eta,
        epochs: cfg.epochs,
        batch_size: 0,
        optimizer: Optimizer::Gd,
        kappa,
        seed: cfg.seed,
        eps_budget: cfg.eps,
        delta_budget: cfg.delta,
    };
    let run = train(&GraphFilter { k }, s, d, None, &tc)?;
    let yy = y.norm_squared();
    let yty = linalg::quad_form(&theta, &y);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut violations = Vec::new();
    let mut vacuous_lower = 0;
    for t in 1..=cfg.epochs {
        let observed = 2.0 * run.trace.train_loss[t];
        let lower = yy - 2.0 * t as f64 * eta * yty;
        let upper = yy - eta * yty;
        if lower < 0.0 {
            vacuous_lower += 1;
        }
        if observed < lower - slack || observed > upper + slack {
            violations.push(t);
        }
        epochs.push(EpochBound { epoch: t, lower, observed, upper });
    }
    Ok(BoundCheck { epochs, slack, kappa, eta, lambda_max, violations, vacuous_lower })
}

/// `sqrt(y^T Theta^+ y)`.
pub fn predicted_param_movement(theta: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    linalg::pinv_quadratic(theta, y).value.max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovementConfig {
    pub eps: f64,
    pub delta: f64,
    pub c_slack: f64,
    /// Relative tolerance on the movement.
    pub rel_tol: f64,
    /// Target contraction of the slowest mode; sets the number of steps.
    pub contraction: f64,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for MovementConfig {
    fn default() -> Self {
        Self { eps: 1e-3, delta: 0.05, c_slack: 10.0, rel_tol: 0.05, contraction: 1e-8, max_steps: 200_000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MovementCheck {
    pub predicted: f64,
    pub observed: f64,
    pub slack: f64,
    pub steps: usize,
    /// `lambda_max / lambda_min+` of the NTK.
    pub condition: f64,
    /// Whether the step budget covered the slowest mode.
    pub converged: bool,
    pub pass: bool,
}

/// Trains a graph filter with `eta = 1 / lambda_max` until the slowest
/// nonzero mode has contracted by `cfg.contraction` and compares
/// `||h_T - h_0||` with `sqrt(y^T Theta^+ y)`.
pub fn check_param_movement(s: &DMatrix<f64>, d: &Dataset, k: usize, cfg: &MovementConfig) -> Result<MovementCheck> {
    let theta = ntk::filter_ntk(s, d, k)?.theta;
    let y = stack(d).y;
    let pq = linalg::pinv_quadratic(&theta, &y);
    let predicted = pq.value.max(0.0).sqrt();
    if pq.rank == 0 {
        return Ok(MovementCheck { predicted, observed: 0.0, slack: 0.0, steps: 0, condition: 1.0, converged: true, pass: true });
    }
    let condition = pq.lambda_max / pq.lambda_min_pos;
    let per_step = -(1.0 - 1.0 / condition).ln();
    let needed = if per_step > 0.0 { (-cfg.contraction.ln() / per_step).ceil() } else { f64::INFINITY };
    let steps = if needed.is_finite() { (needed as usize).clamp(1, cfg.max_steps) } else { cfg.max_steps };
    let (n, m) = (d.n(), d.m());
    let kappa = TrainConfig::bound_kappa(cfg.eps, cfg.delta, n, m);
    let slack = cfg.c_slack * kappa * ((n * m) as f64 / cfg.delta).sqrt();
    let tc = TrainConfig {
        eta: 1.0 / pq.lambda_max,
        epochs: steps,
        batch_size: 0,
        optimizer: Optimizer::Gd,
        kappa,
        seed: cfg.seed,
        eps_budget: cfg.eps,
        delta_budget: cfg.delta,
    };
    let run = train(&GraphFilter { k }, s, d, None, &tc)?;
    let observed = *run.trace.param_movement.last().unwrap();
    let pass = (observed - predicted).abs() <= cfg.rel_tol * predicted + slack;
    Ok(MovementCheck { predicted, observed, slack, steps, condition, converged: needed <= steps as f64, pass })
}

/// The two-sided relation between `y^T Theta^+ y` and the alignment.
///
/// `lower`/`upper` use `||P y||^4 / A` with `P` the projector onto the range
/// of `Theta`; this is what Cauchy–Schwarz gives and holds for every `y`.
/// `literal_*` use `y^T y / A`, which agrees with the projected form only
/// when `y` lies in the range and has unit norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GenSandwich {
    pub pinv: PinvQuadratic,
    pub alignment: f64,
    pub y_sq: f64,
    pub lower: f64,
    pub upper: f64,
    pub holds: bool,
    pub literal_lower: f64,
    pub literal_upper: f64,
    pub literal_holds: bool,
}

/// Relative tolerance used by the sandwich checks.
pub const SANDWICH_TOL: f64 = 1e-9;

pub fn gen_sandwich(theta: &DMatrix<f64>, y: &DVector<f64>) -> Result<GenSandwich> {
    if theta.nrows() != y.len() {
        return Err(Error::Dimension(format!("Theta {:?} vs y {}", theta.shape(), y.len())));
    }
    let pinv = linalg::pinv_quadratic(theta, y);
    let alignment = linalg::quad_form(theta, y);
    if !(alignment > 0.0) {
        return Err(Error::ZeroAlignment);
    }
    let ratio = pinv.lambda_max / pinv.lambda_min_pos;
    let y_sq = y.norm_squared();
    let lower = pinv.projected_sq * pinv.projected_sq / alignment;
    let upper = ratio * lower;
    let literal_lower = y_sq / alignment;
    let literal_upper = ratio * literal_lower;
    let within = |lo: f64, hi: f64| {
        let v = pinv.value;
        lo <= v + SANDWICH_TOL * v.abs().max(lo.abs()) && v <= hi + SANDWICH_TOL * v.abs().max(hi.abs())
    };
    Ok(GenSandwich {
        pinv,
        alignment,
        y_sq,
        lower,
        upper,
        holds: within(lower, upper),
        literal_lower,
        literal_upper,
        literal_holds: within(literal_lower, literal_upper),
    })
}

/// `max_{k<K, i} ||S^k x_i||^2`.
pub fn max_shifted_norm_sq(s: &DMatrix<f64>, d: &Dataset, k: usize) -> f64 {
    crate::models::batch_powers(s, &d.x, k)
        .iter()
        .flat_map(|p| p.column_iter().map(|c| c.norm_squared()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

/// `B rho sqrt(2 K max_{k,i} ||S^k x_i||^2 / M)`.
pub fn rademacher_bound_value(s: &DMatrix<f64>, d: &Dataset, k: usize, b: f64, rho: f64) -> Result<f64> {
    check_shapes(s, d)?;
    if b < 0.0 {
        return Err(Error::InvalidArgument(format!("B must be nonnegative, got {b}")));
    }
    Ok(b * rho * (2.0 * k as f64 * max_shifted_norm_sq(s, d, k) / d.m() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneralizationBound {
    pub value: f64,
    pub complexity_term: f64,
    pub confidence_term: f64,
    pub rho: f64,
    pub max_shifted_norm_sq: f64,
    pub sandwich: GenSandwich,
}

/// Largest per-sample residual norm `max_i ||f(x_i) - y_i||` of a filter.
pub fn measured_rho(s: &DMatrix<f64>, h: &[f64], d: &Dataset) -> f64 {
    let f = GraphFilter { k: h.len() }.forward_batch(s, h, &d.x);
    crate::data::max_column_norm(&(f - &d.y))
}

/// `2 rho sqrt(2 K max||S^k x_i||^2 (y^T Theta^+ y) / M) + 4 rho^2 sqrt(2 ln(4/delta2) / M)`.
pub fn generalization_bound(s: &DMatrix<f64>, d: &Dataset, k: usize, rho: f64, delta2: f64) -> Result<GeneralizationBound> {
    if !(delta2 > 0.0 && delta2 < 1.0) {
        return Err(Error::InvalidArgument(format!("delta2 must lie in (0, 1), got {delta2}")));
    }
    let theta = ntk::filter_ntk(s, d, k)?.theta;
    let y = stack(d).y;
    let sandwich = gen_sandwich(&theta, &y)?;
    let m = d.m() as f64;
    let msn = max_shifted_norm_sq(s, d, k);
    let complexity_term = 2.0 * rho * (2.0 * k as f64 * msn * sandwich.pinv.value / m).sqrt();
    let confidence_term = 4.0 * rho * rho * (2.0 * (4.0 / delta2).ln() / m).sqrt();
    Ok(GeneralizationBound {
        value: complexity_term + confidence_term,
        complexity_term,
        confidence_term,
        rho,
        max_shifted_norm_sq: msn,
        sandwich,
    })
}

/// Architecture trained by [`compare_gso`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    Filter { k: usize },
    Gnn { width: usize, k: usize, activation: Activation },
}

impl ModelSpec {
    pub fn build(&self) -> Box<dyn Model> {
        match *self {
            Self::Filter { k } => Box::new(GraphFilter { k }),
            Self::Gnn { width, k, activation } => Box::new(TwoLayerGnn { width, k, activation, train: LayerSelection::Both }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmReport {
    pub name: String,
    pub mean_train_loss: Vec<f64>,
    pub mean_test_loss: Vec<f64>,
    pub final_train: Vec<f64>,
    pub final_test: Vec<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub arms: Vec<ArmReport>,
    /// `mean final test loss(arm i) - mean final test loss(arm 0)`.
    pub final_test_gaps: Vec<f64>,
}

fn test_of(tr: &TrainTrace) -> &Vec<f64> {
    tr.test_loss.as_ref().expect("test set supplied")
}

/// Trains the same architecture on every shift operator with matched seeds.
/// Repetition `r` uses seed `cfg.train.seed + r` in every arm.
pub fn compare_gso(train_set: &Dataset, test_set: &Dataset, gsos: &[(String, DMatrix<f64>)], cfg: &CompareConfig) -> Result<CompareReport> {
    if gsos.is_empty() || cfg.reps == 0 {
        return Err(Error::InvalidArgument("need at least one shift operator and one repetition".into()));
    }
    let model = cfg.model.build();
    let jobs: Vec<(usize, usize)> = (0..gsos.len()).flat_map(|a| (0..cfg.reps).map(move |r| (a, r))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(a, r)| {
            let tc = TrainConfig { seed: cfg.train.seed + r as u64, ..cfg.train };
            train(model.as_ref(), &gsos[a].1, train_set, Some(test_set), &tc).map(|run| (a, r, run.trace))
        })
        .collect::<Result<Vec<_>>>()?;
    let t = cfg.train.epochs + 1;
    let mut arms = Vec::with_capacity(gsos.len());
    for (a, (name, _)) in gsos.iter().enumerate() {
        let mut traces: Vec<(usize, &TrainTrace)> = runs.iter().filter(|x| x.0 == a).map(|x| (x.1, &x.2)).collect();
        traces.sort_by_key(|x| x.0);
        let reps = traces.len() as f64;
        let mean = |pick: &dyn Fn(&TrainTrace) -> &Vec<f64>| {
            (0..t).map(|e| traces.iter().map(|(_, tr)| pick(tr)[e]).sum::<f64>() / reps).collect::<Vec<f64>>()
        };
        arms.push(ArmReport {
            name: name.clone(),
            mean_train_loss: mean(&|tr| &tr.train_loss),
            mean_test_loss: mean(&|tr| test_of(tr)),
            final_train: traces.iter().map(|(_, tr)| tr.train_loss[t - 1]).collect(),
            final_test: traces.iter().map(|(_, tr)| test_of(tr)[t - 1]).collect(),
            seeds: traces.iter().map(|(r, _)| cfg.train.seed + *r as u64).collect(),
        });
    }
    let base = arms[0].mean_test_loss[t - 1];
    let final_test_gaps = arms.iter().map(|a| a.mean_test_loss[t - 1] - base).collect();
    Ok(CompareReport { arms, final_test_gaps })
}
