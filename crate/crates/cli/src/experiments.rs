//! Experiment protocols shared by the subcommands and the acceptance run.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use xcov_core::alignment::{random_instance, InstanceRanges};
use xcov_core::data::stack;
use xcov_core::dataio::{self, PairExtractionConfig, PairSplit, VarProcessConfig};
use xcov_core::models::Activation;
use xcov_core::shiftops::{self, CrossMode, GsoSolveConfig, MuMode};
use xcov_core::training::{self, CompareConfig, ModelSpec, MovementCheck, MovementConfig, Optimizer, SandwichConfig, TrainConfig};
use xcov_core::{ntk, Dataset, Result, ShiftOperator};

/// Planted VAR(1) data parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlantedParams {
    pub n: usize,
    pub len: usize,
    pub dt: usize,
    pub anisotropy: f64,
    pub m_train: usize,
    pub m_test: usize,
}

impl Default for PlantedParams {
    fn default() -> Self {
        Self { n: 20, len: 1000, dt: 1, anisotropy: 0.9, m_train: 200, m_test: 20 }
    }
}

pub struct PlantedData {
    pub var: VarProcessConfig,
    pub series: DMatrix<f64>,
    pub split: PairSplit,
}

/// Series and pair split; the transition uses `seed`, the noise and the
/// pair sampling use streams derived from it.
pub fn planted_data(p: &PlantedParams, seed: u64) -> Result<PlantedData> {
    let var = VarProcessConfig::planted(p.n, p.len, p.anisotropy, seed)?;
    let series = dataio::generate_var(&var)?;
    let split = dataio::extract_pairs(
        &series,
        &PairExtractionConfig { dt: p.dt, m_train: p.m_train, m_test: p.m_test, seed: seed.wrapping_add(1) },
    )?;
    Ok(PlantedData { var, series, split })
}

/// Defaults for the optimal-operator budget when it is used as a shift.
pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BUDGET_ETA: f64 = 0.0125;

/// Resolves `cxy`, `cxx`, `opt`, `identity` or a CSV path into a shift
/// operator for the training set `d`.
pub fn resolve_gso(name: &str, d: &Dataset, k: usize, alpha: f64, eta: f64) -> anyhow::Result<ShiftOperator> {
    let n = d.n();
    Ok(match name {
        "cxy" => shiftops::cross_covariance(d, CrossMode::Symmetrized)?.to_shift()?,
        "cxx" => shiftops::covariance(d)?,
        "identity" => ShiftOperator::new(DMatrix::identity(n, n))?,
        "opt" => {
            let c = shiftops::cross_covariance(d, CrossMode::Symmetrized)?;
            let cfg = GsoSolveConfig { k: k.max(2), alpha, eta, m: d.m(), mu_mode: MuMode::UnitFrobenius };
            shiftops::solve_optimal_gso(&c, &cfg)?.shift
        }
        path => {
            let p = std::path::Path::new(path);
            if !p.exists() {
                return Err(crate::UsageError(format!(
                    "unknown shift operator '{path}' (expected cxy, cxx, opt, identity or an existing CSV file)"
                ))
                .into());
            }
            let s = ShiftOperator::new(dataio::load_csv(p)?)?;
            if s.n() != n {
                return Err(xcov_core::Error::Dimension(format!("shift operator is {0}x{0}, data has {n} nodes", s.n())).into());
            }
            s
        }
    })
}

/// Learning rate of the comparison protocol for each architecture.
pub fn protocol_eta(model: &ModelSpec) -> f64 {
    match model {
        ModelSpec::Filter { .. } => 0.625,
        ModelSpec::Gnn { .. } => 0.0125,
    }
}

/// Adam, minibatches of 32, 100 epochs, `kappa = 0.1`.
pub fn protocol_train(model: &ModelSpec, seed: u64) -> TrainConfig {
    TrainConfig {
        eta: protocol_eta(model),
        epochs: 100,
        batch_size: 32,
        optimizer: Optimizer::Adam,
        kappa: 0.1,
        seed,
        ..Default::default()
    }
}

pub fn filter_spec(k: usize) -> ModelSpec {
    ModelSpec::Filter { k }
}

pub fn gnn_spec(width: usize, k: usize) -> ModelSpec {
    ModelSpec::Gnn { width, k, activation: Activation::Tanh }
}

/// Outcome of one planted-data comparison of the first arm against the second.
#[derive(Debug, Clone, Serialize)]
pub struct PairOutcome {
    pub seed: u64,
    /// First arm has the lower training loss at every epoch `1..=T`.
    pub train_lower_every_epoch: bool,
    pub test_lower: bool,
    pub final_train: (f64, f64),
    pub final_test: (f64, f64),
}

impl PairOutcome {
    pub fn win(&self) -> bool {
        self.train_lower_every_epoch && self.test_lower
    }
}

pub fn pair_outcome(seed: u64, report: &training::CompareReport) -> PairOutcome {
    let (a, b) = (&report.arms[0], &report.arms[1]);
    let t = a.mean_train_loss.len() - 1;
    PairOutcome {
        seed,
        train_lower_every_epoch: (1..=t).all(|e| a.mean_train_loss[e] < b.mean_train_loss[e]),
        test_lower: a.mean_test_loss[t] < b.mean_test_loss[t],
        final_train: (a.mean_train_loss[t], b.mean_train_loss[t]),
        final_test: (a.mean_test_loss[t], b.mean_test_loss[t]),
    }
}

/// One seed of the cross-covariance against covariance experiment: fresh
/// planted data, one training run per arm from matched initialisations.
pub fn cxy_vs_cxx(model: &ModelSpec, params: &PlantedParams, seed: u64) -> anyhow::Result<PairOutcome> {
    let data = planted_data(params, seed)?;
    let tr = &data.split.train;
    let gsos = vec![
        ("cxy".to_string(), resolve_gso("cxy", tr, 2, DEFAULT_ALPHA, DEFAULT_BUDGET_ETA)?.into_matrix()),
        ("cxx".to_string(), resolve_gso("cxx", tr, 2, DEFAULT_ALPHA, DEFAULT_BUDGET_ETA)?.into_matrix()),
    ];
    let cfg = CompareConfig { model: *model, train: protocol_train(model, seed), reps: 1 };
    let report = training::compare_gso(tr, &data.split.test, &gsos, &cfg)?;
    Ok(pair_outcome(seed, &report))
}

/// Summary of a batch of bound checks over random instances.
#[derive(Debug, Clone, Serialize)]
pub struct BatchSummary {
    pub name: String,
    pub instances: usize,
    pub violations: usize,
    pub violating_seeds: Vec<u64>,
    pub note: String,
}

impl BatchSummary {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

/// Training-error sandwich on `count` random graph-filter instances.
pub fn training_error_sweep(count: usize, seed0: u64) -> Result<BatchSummary> {
    let results: Vec<(u64, training::BoundCheck)> = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let seed = seed0 + i;
            let inst = random_instance(seed, &InstanceRanges::default());
            training::check_training_error_sandwich(&inst.s, &inst.data, inst.k, &SandwichConfig { seed, ..Default::default() }).map(|c| (seed, c))
        })
        .collect::<Result<_>>()?;
    let bad: Vec<u64> = results.iter().filter(|(_, c)| !c.pass()).map(|(s, _)| *s).collect();
    let vacuous: usize = results.iter().map(|(_, c)| c.vacuous_lower).sum();
    Ok(BatchSummary {
        name: "training_error_sandwich".into(),
        instances: count,
        violations: bad.len(),
        violating_seeds: bad,
        note: format!("{vacuous} epoch-instances with a vacuous (negative) lower bound"),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MovementSummary {
    pub summary: BatchSummary,
    pub rejected_unconverged: usize,
    pub checks: Vec<(u64, MovementCheck)>,
}

/// Parameter movement on the first `accept` random instances (from `seed0`)
/// whose condition number allows convergence within the step cap.
pub fn movement_sweep(accept: usize, seed0: u64) -> Result<MovementSummary> {
    let mut checks = Vec::new();
    let mut rejected = 0;
    let mut seed = seed0;
    while checks.len() < accept {
        let batch: Vec<u64> = (seed..seed + (accept - checks.len()) as u64).collect();
        seed += batch.len() as u64;
        let res: Vec<(u64, MovementCheck)> = batch
            .par_iter()
            .map(|&sd| {
                let inst = random_instance(sd, &InstanceRanges::default());
                training::check_param_movement(&inst.s, &inst.data, inst.k, &MovementConfig { seed: sd, ..Default::default() })
                    .map(|c| (sd, c))
            })
            .collect::<Result<_>>()?;
        for (sd, c) in res {
            if c.converged {
                checks.push((sd, c));
            } else {
                rejected += 1;
            }
        }
    }
    let bad: Vec<u64> = checks.iter().filter(|(_, c)| !c.pass).map(|(s, _)| *s).collect();
    Ok(MovementSummary {
        summary: BatchSummary {
            name: "parameter_movement".into(),
            instances: checks.len(),
            violations: bad.len(),
            violating_seeds: bad,
            note: format!("{rejected} instances skipped as not converged within the step cap"),
        },
        rejected_unconverged: rejected,
        checks,
    })
}

/// Both forms of the pseudo-inverse sandwich on random filter NTKs.
pub fn sandwich_sweep(count: usize, seed0: u64) -> Result<(BatchSummary, BatchSummary)> {
    let res: Vec<(u64, training::GenSandwich)> = (0..count as u64)
        .into_par_iter()
        .map(|i| {
            let seed = seed0 + i;
            let inst = random_instance(seed, &InstanceRanges::default());
            let theta = ntk::filter_ntk(&inst.s, &inst.data, inst.k)?.theta;
            training::gen_sandwich(&theta, &stack(&inst.data).y).map(|g| (seed, g))
        })
        .collect::<Result<_>>()?;
    let mk = |name: &str, ok: &dyn Fn(&training::GenSandwich) -> bool, note: &str| {
        let bad: Vec<u64> = res.iter().filter(|(_, g)| !ok(g)).map(|(s, _)| *s).collect();
        BatchSummary {
            name: name.into(),
            instances: count,
            violations: bad.len(),
            violating_seeds: bad.into_iter().take(20).collect(),
            note: note.into(),
        }
    };
    Ok((
        mk("pinv_sandwich_literal", &|g| g.literal_holds, "bounds y^T y / A and (lmax/lmin+) y^T y / A"),
        mk("pinv_sandwich_projected", &|g| g.holds, "bounds ||P y||^4 / A and (lmax/lmin+) ||P y||^4 / A"),
    ))
}

/// Instance sizes of the NTK drift and Monte-Carlo experiments.
pub const SMALL_GNN: InstanceRanges = InstanceRanges { n: (5, 5), m: (10, 10), k: (2, 2) };

/// Full-batch GD on both layers, `eta = 0.05`, 100 epochs, `kappa = 1`.
pub fn drift_train(seed: u64) -> TrainConfig {
    TrainConfig { eta: 0.05, epochs: 100, kappa: 1.0, seed, ..Default::default() }
}
