//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::Context;
use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};

use xcov_core::alignment::{self, random_instance, InstanceRanges, ReportOptions};
use xcov_core::data::stack;
use xcov_core::hermite::{self, ExpansionConstants};
use xcov_core::models::{Activation, InitConfig, LayerSelection, Model, ParamShape, TwoLayerGnn};
use xcov_core::ntk::{self, ZVectors};
use xcov_core::quadrature::QuadConfig;
use xcov_core::shiftops::{self, CrossMode, GsoSolveConfig, MuMode};
use xcov_core::training::{self, CompareConfig, ModelSpec, Optimizer, TrainConfig};
use xcov_core::{dataio, linalg, Dataset, NtkMatrix};

use crate::config::{pick, FileConfig};
use crate::experiments::{self, PlantedParams, DEFAULT_ALPHA, DEFAULT_BUDGET_ETA};
use crate::output::Output;
use crate::{Cli, Command, DataArgs, GenArgs, ModelArgs, TrainArgs, UsageError};

struct Ctx {
    file: FileConfig,
    seed: u64,
    json: bool,
}

/// What a command hands back: the report body, a short human summary and
/// whether it found property violations.
struct Outcome {
    body: Value,
    summary: String,
    findings: bool,
}

/// Runs the parsed command; `Ok(true)` means the run completed with findings.
pub fn execute(cli: &Cli) -> anyhow::Result<bool> {
    let file = match &cli.common.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    if let Some(t) = cli.common.threads.or(file.threads) {
        if t == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        // a second build in the same process (tests) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let seed = pick(&cli.common.seed, &file.seed, 0);
    let out_dir = pick(&cli.common.out_dir, &file.out_dir, PathBuf::from("out"));
    let ctx = Ctx { file, seed, json: cli.common.json };
    let mut out = Output::new(&out_dir, cli.command.name())?;
    out.add_seeds([seed]);
    let outcome = match &cli.command {
        Command::GenData { gen } => gen_data(&ctx, &mut out, gen)?,
        Command::Ntk { data, model, method, layer, save_matrix } => {
            ntk_cmd(&ctx, &mut out, data, model, method, layer, *save_matrix)?
        }
        Command::Align { data, k, alpha, eta, nu } => align(&ctx, &mut out, data, *k, *alpha, *eta, *nu)?,
        Command::OptimizeGso { data_dir, k, alpha, eta, model, mu_mode } => {
            optimize_gso(&ctx, &mut out, data_dir, *k, *alpha, *eta, model, mu_mode)?
        }
        Command::Train { data, model, train } => train_cmd(&ctx, &mut out, data, model, train)?,
        Command::Compare { data, model, train, gen, reps } => compare(&ctx, &mut out, data, model, train, gen, *reps)?,
        Command::VerifyBounds { count, alpha, eta, nu, xi } => verify_bounds(&ctx, &mut out, *count, *alpha, *eta, *nu, *xi)?,
        Command::VerifyHermite { k, l_max, grid } => verify_hermite(&ctx, &mut out, *k, *l_max, *grid)?,
    };
    let report = out.report(&outcome.body)?;
    out.finish()?;
    if ctx.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        println!("{}", outcome.summary.trim_end());
        println!("outputs written to {}", out_dir.display());
    }
    Ok(outcome.findings)
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_activation(s: &str) -> anyhow::Result<Activation> {
    Activation::parse(s).map_err(|e| usage(e.to_string()))
}

fn parse_layer(s: &str) -> anyhow::Result<LayerSelection> {
    match s {
        "first" => Ok(LayerSelection::First),
        "second" => Ok(LayerSelection::Second),
        "both" => Ok(LayerSelection::Both),
        o => Err(usage(format!("unknown layer '{o}' (expected first, second or both)"))),
    }
}

fn parse_optimizer(s: &str) -> anyhow::Result<Optimizer> {
    Optimizer::parse(s).map_err(|e| usage(e.to_string()))
}

fn read_dataset(dir: &Path, split: &str) -> anyhow::Result<Option<Dataset>> {
    let (x, y) = (dir.join(format!("X_{split}.csv")), dir.join(format!("Y_{split}.csv")));
    match (x.exists(), y.exists()) {
        (false, false) => Ok(None),
        (true, true) => Ok(Some(
            dataio::load_dataset(&x, &y).with_context(|| format!("reading {} and {}", x.display(), y.display()))?,
        )),
        _ => Err(usage(format!("{} needs both X_{split}.csv and Y_{split}.csv", dir.display()))),
    }
}

/// Training set and optional test set from `--data-dir`.
fn load_data(ctx: &Ctx, flag: &Option<PathBuf>) -> anyhow::Result<(PathBuf, Dataset, Option<Dataset>)> {
    let dir = flag
        .clone()
        .or_else(|| ctx.file.data_dir.clone())
        .ok_or_else(|| usage("--data-dir is required (a directory with X_train.csv and Y_train.csv)"))?;
    if !dir.is_dir() {
        return Err(usage(format!("data directory {} does not exist", dir.display())));
    }
    let train = read_dataset(&dir, "train")?.ok_or_else(|| usage(format!("{} has no X_train.csv / Y_train.csv", dir.display())))?;
    let test = read_dataset(&dir, "test")?;
    if let Some(t) = &test {
        if t.n() != train.n() {
            return Err(usage(format!("test data has {} nodes, training data {}", t.n(), train.n())));
        }
    }
    Ok((dir, train, test))
}

#[derive(Serialize)]
struct SpectrumSummary {
    dim: usize,
    frobenius: f64,
    trace: f64,
    lambda_max: f64,
    lambda_min_pos: f64,
    rank: usize,
    /// Largest eigenvalues, descending.
    eigenvalues_head: Vec<f64>,
    alignment: f64,
}

fn spectrum(theta: &NtkMatrix, y: &DVector<f64>) -> anyhow::Result<SpectrumSummary> {
    let mut vals = linalg::sym_eigenvalues(&theta.theta);
    vals.reverse();
    let lmax = vals.first().cloned().unwrap_or(0.0).max(0.0);
    let pos: Vec<f64> = vals.iter().cloned().filter(|&v| v > linalg::PINV_CUTOFF * lmax && v > 0.0).collect();
    Ok(SpectrumSummary {
        dim: vals.len(),
        frobenius: theta.theta.norm(),
        trace: theta.theta.trace(),
        lambda_max: lmax,
        lambda_min_pos: pos.last().cloned().unwrap_or(0.0),
        rank: pos.len(),
        eigenvalues_head: vals.iter().take(10).cloned().collect(),
        alignment: alignment::alignment(theta, y)?,
    })
}

fn gen_params(ctx: &Ctx, g: &GenArgs) -> PlantedParams {
    let d = PlantedParams::default();
    let f = &ctx.file;
    PlantedParams {
        n: pick(&g.n, &f.n, d.n),
        len: pick(&g.len, &f.len, d.len),
        dt: pick(&g.dt, &f.dt, d.dt),
        anisotropy: pick(&g.anisotropy, &f.anisotropy, d.anisotropy),
        m_train: pick(&g.m_train, &f.m_train, d.m_train),
        m_test: pick(&g.m_test, &f.m_test, d.m_test),
    }
}

fn gen_data(ctx: &Ctx, out: &mut Output, g: &GenArgs) -> anyhow::Result<Outcome> {
    let p = gen_params(ctx, g);
    out.set_config(&json!({ "seed": ctx.seed, "planted": p }))?;
    let data = experiments::planted_data(&p, ctx.seed)?;
    out.matrix("series.csv", &data.series)?;
    out.matrix("A.csv", &data.var.a)?;
    let split = &data.split;
    out.matrix("X_train.csv", &split.train.x)?;
    out.matrix("Y_train.csv", &split.train.y)?;
    if p.m_test > 0 {
        out.matrix("X_test.csv", &split.test.x)?;
        out.matrix("Y_test.csv", &split.test.y)?;
    }
    // how well the symmetrized cross-covariance exposes the planted direction
    let c = shiftops::cross_covariance(&split.train, CrossMode::Symmetrized)?;
    let (vals, vecs) = linalg::sym_eigen(&c.c);
    let top = vecs.column(vals.len() - 1).into_owned();
    let u = data.var.planted.clone().unwrap_or_else(|| DVector::zeros(p.n));
    let cosine = top.dot(&u).abs();
    let body = json!({
        "params": p,
        "spectral_radius": data.var.spectral_radius(),
        "scale": split.scale,
        "planted_direction": u.as_slice(),
        "cxy_top_eigenvector_cosine": cosine,
        "train_idx": split.train_idx,
        "test_idx": split.test_idx,
    });
    let summary = format!(
        "planted VAR(1): n = {}, {} steps, spectral radius {:.4}\n{} train / {} test pairs at dt = {}\n|cos(top eigenvector of C_XY, planted)| = {:.4}",
        p.n,
        p.len,
        data.var.spectral_radius(),
        p.m_train,
        p.m_test,
        p.dt,
        cosine
    );
    Ok(Outcome { body, summary, findings: false })
}

fn ntk_cmd(
    ctx: &Ctx,
    out: &mut Output,
    data: &DataArgs,
    model: &ModelArgs,
    method: &Option<String>,
    layer: &Option<String>,
    save_matrix: bool,
) -> anyhow::Result<Outcome> {
    let f = &ctx.file;
    let (dir, train, _) = load_data(ctx, &data.data_dir)?;
    let k = pick(&model.k, &f.k, 2);
    let gso_name = pick(&data.gso, &f.gso, "cxy".into());
    let model_name = pick(&model.model, &f.model, "filter".into());
    let width = pick(&model.width, &f.width, 50);
    let act = parse_activation(&pick(&model.activation, &f.activation, "tanh".into()))?;
    let method = pick(method, &f.method, "quadrature".into());
    let layer = parse_layer(&pick(layer, &f.layer, "both".into()))?;
    out.set_config(&json!({
        "data_dir": dir, "gso": gso_name, "model": model_name, "k": k, "width": width,
        "activation": act, "method": method, "layer": layer, "seed": ctx.seed,
    }))?;
    let s = experiments::resolve_gso(&gso_name, &train, k, DEFAULT_ALPHA, DEFAULT_BUDGET_ETA)?;
    let sm = s.matrix();
    let theta = match model_name.as_str() {
        "filter" => ntk::filter_ntk(sm, &train, k)?,
        "gnn" => match method.as_str() {
            "quadrature" => ntk::gnn_infinite_ntk(sm, &train, k, act, layer, &QuadConfig::default())?,
            "series" => {
                if layer != LayerSelection::Second {
                    return Err(usage("--method series covers the second layer only; pass --layer second"));
                }
                let z = ZVectors::new(sm, &train, k)?;
                let e = ntk::expectation_e_series(&z, act, hermite::DEFAULT_L, &QuadConfig::default())?;
                ntk::gnn_infinite_ntk_second_layer(sm, train.m(), k, &e)
            }
            "mc" => ntk::gnn_monte_carlo_ntk(sm, &train, k, width, ctx.seed, layer, act)?,
            "empirical" => {
                let gnn = TwoLayerGnn { width, k, activation: act, train: layer };
                let p = gnn.init(&InitConfig { kappa: 1.0, seed: ctx.seed })?;
                ntk::empirical_ntk(&gnn, sm, &p, &train)?
            }
            o => return Err(usage(format!("unknown method '{o}' (expected quadrature, series, mc or empirical)"))),
        },
        o => return Err(usage(format!("unknown model '{o}' (expected filter or gnn)"))),
    };
    out.matrix("gso.csv", sm)?;
    if save_matrix {
        out.matrix("ntk.csv", &theta.theta)?;
    }
    let y = stack(&train).y;
    let spec = spectrum(&theta, &y)?;
    let summary = format!(
        "{} NTK ({:?}): dim {}, rank {}, lambda_max {:.6e}, alignment {:.6e}",
        model_name, theta.provenance, spec.dim, spec.rank, spec.lambda_max, spec.alignment
    );
    let body = json!({ "provenance": theta.provenance, "spectrum": spec });
    Ok(Outcome { body, summary, findings: false })
}

fn align(
    ctx: &Ctx,
    out: &mut Output,
    data: &DataArgs,
    k: Option<usize>,
    alpha: Option<f64>,
    eta: Option<f64>,
    nu: Option<f64>,
) -> anyhow::Result<Outcome> {
    let f = &ctx.file;
    let (dir, train, _) = load_data(ctx, &data.data_dir)?;
    let k = pick(&k, &f.k, 2);
    let alpha = pick(&alpha, &f.alpha, DEFAULT_ALPHA);
    let eta = pick(&eta, &f.eta, DEFAULT_BUDGET_ETA);
    let nu = nu.or(f.nu);
    let gso_name = pick(&data.gso, &f.gso, "cxy".into());
    out.set_config(&json!({ "data_dir": dir, "gso": gso_name, "k": k, "alpha": alpha, "eta": eta, "nu": nu }))?;
    let s = experiments::resolve_gso(&gso_name, &train, k, alpha, eta)?;
    let r = alignment::alignment_report(&s, &train, k, &ReportOptions { alpha, eta, with_gnn: nu })?;
    let mut summary = format!(
        "A_filt {:.6e}  A_L {:.6e}\nA_lin {:.6e}  A_L' {:.6e}  (1/K form {:.6e})\n||sum S^k||_F {:.6e}  budget {:.6e}  xi {:.4}",
        r.a_filt, r.a_l, r.a_lin, r.a_l_prime, r.a_l_prime_cauchy_schwarz, r.constraint_lhs, r.budget, r.xi_observed
    );
    if let Some(a) = r.a {
        summary.push_str(&format!("\nA (tanh GNN) {a:.6e}"));
    }
    let body = json!({
        "report": r,
        "filter_lower_bound_holds": r.a_filt >= r.a_l - alignment::CHECK_SLACK * r.a_l.abs().max(1.0),
    });
    Ok(Outcome { body, summary, findings: false })
}

#[allow(clippy::too_many_arguments)]
fn optimize_gso(
    ctx: &Ctx,
    out: &mut Output,
    data_dir: &Option<PathBuf>,
    k: Option<usize>,
    alpha: Option<f64>,
    eta: Option<f64>,
    model: &Option<String>,
    mu_mode: &Option<String>,
) -> anyhow::Result<Outcome> {
    let f = &ctx.file;
    let (dir, train, _) = load_data(ctx, data_dir)?;
    let k = pick(&k, &f.k, 2);
    let alpha = pick(&alpha, &f.alpha, DEFAULT_ALPHA);
    let eta = pick(&eta, &f.eta, DEFAULT_BUDGET_ETA);
    let model = pick(model, &f.model, "filter".into());
    let mu_mode = match pick(mu_mode, &f.mu_mode, "exact".into()).as_str() {
        "exact" => MuMode::Exact,
        "unit-frobenius" | "unit_frobenius" => MuMode::UnitFrobenius,
        o => return Err(usage(format!("unknown mu mode '{o}' (expected exact or unit-frobenius)"))),
    };
    out.set_config(&json!({ "data_dir": dir, "k": k, "alpha": alpha, "eta": eta, "model": model, "mu_mode": mu_mode }))?;
    let c = shiftops::cross_covariance(&train, CrossMode::Symmetrized)?;
    let cfg = GsoSolveConfig { k, alpha, eta, m: train.m(), mu_mode };
    let sol = match model.as_str() {
        "filter" => shiftops::solve_optimal_gso(&c, &cfg)?,
        "linear-gnn" | "linear_gnn" => alignment::solve_optimal_gso_linear_gnn(&c, &cfg)?,
        o => return Err(usage(format!("unknown model '{o}' (expected filter or linear-gnn)"))),
    };
    out.matrix("gso_opt.csv", sol.shift.matrix())?;
    let sm = sol.shift.matrix();
    let body = json!({
        "mu": sol.mu,
        "residual": sol.residual,
        "gamma": sol.gamma,
        "roots": sol.roots,
        "constraint_lhs": shiftops::constraint_lhs(&sol.shift, k),
        "budget": shiftops::budget(alpha, eta, train.m()),
        "a_l": alignment::alignment_lower_bound(sm, &train, k).0,
        "a_filt": alignment::alignment_filt(sm, &train, k),
    });
    let summary = format!(
        "optimal shift operator ({model}, K = {k}): mu {:.6e}, residual {:.3e}, written to gso_opt.csv",
        sol.mu, sol.residual
    );
    Ok(Outcome { body, summary, findings: false })
}

fn model_spec(ctx: &Ctx, name: &str, m: &ModelArgs) -> anyhow::Result<ModelSpec> {
    let f = &ctx.file;
    let k = pick(&m.k, &f.k, 2);
    if k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    Ok(match name {
        "filter" => ModelSpec::Filter { k },
        "gnn" => ModelSpec::Gnn {
            width: pick(&m.width, &f.width, 50),
            k,
            activation: parse_activation(&pick(&m.activation, &f.activation, "tanh".into()))?,
        },
        o => return Err(usage(format!("unknown model '{o}' (expected filter or gnn)"))),
    })
}

/// Training settings: flags, then config file, then the comparison protocol.
fn train_config(ctx: &Ctx, spec: &ModelSpec, t: &TrainArgs) -> anyhow::Result<TrainConfig> {
    let f = &ctx.file;
    let base = experiments::protocol_train(spec, ctx.seed);
    let optimizer = match t.optimizer.as_ref().or(f.optimizer.as_ref()) {
        Some(o) => parse_optimizer(o)?,
        None => base.optimizer,
    };
    let cfg = TrainConfig {
        eta: pick(&t.eta, &f.eta, base.eta),
        epochs: pick(&t.epochs, &f.epochs, base.epochs),
        batch_size: pick(&t.batch_size, &f.batch_size, base.batch_size),
        kappa: pick(&t.kappa, &f.kappa, base.kappa),
        optimizer,
        ..base
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn param_shape(spec: &ModelSpec) -> ParamShape {
    match *spec {
        ModelSpec::Filter { k } => ParamShape::Filter { k },
        ModelSpec::Gnn { width, k, activation } => ParamShape::Gnn2 { width, k, activation },
    }
}

fn train_cmd(ctx: &Ctx, out: &mut Output, data: &DataArgs, m: &ModelArgs, t: &TrainArgs) -> anyhow::Result<Outcome> {
    let f = &ctx.file;
    let (dir, train, test) = load_data(ctx, &data.data_dir)?;
    let name = pick(&m.model, &f.model, "filter".into());
    let spec = model_spec(ctx, &name, m)?;
    let cfg = train_config(ctx, &spec, t)?;
    let gso_name = pick(&data.gso, &f.gso, "cxy".into());
    let k = match spec {
        ModelSpec::Filter { k } | ModelSpec::Gnn { k, .. } => k,
    };
    out.set_config(&json!({ "data_dir": dir, "gso": gso_name, "model": spec, "train": cfg }))?;
    let s = experiments::resolve_gso(&gso_name, &train, k, DEFAULT_ALPHA, DEFAULT_BUDGET_ETA)?;
    let model = spec.build();
    let run = training::train(model.as_ref(), s.matrix(), &train, test.as_ref(), &cfg)?;
    let tr = &run.trace;
    let rows: Vec<Vec<f64>> = (0..tr.train_loss.len())
        .map(|e| {
            vec![
                e as f64,
                tr.train_loss[e],
                tr.test_loss.as_ref().map_or(f64::NAN, |v| v[e]),
                tr.param_movement[e],
            ]
        })
        .collect();
    let header: Vec<String> = ["epoch", "train_loss", "test_loss", "param_movement"].iter().map(|s| s.to_string()).collect();
    out.table("trace.csv", &header, &rows)?;
    out.params("params.txt", &param_shape(&spec), &run.params)?;
    out.matrix("gso.csv", s.matrix())?;
    let last = tr.train_loss.len() - 1;
    let final_test = tr.test_loss.as_ref().map(|v| v[last]);
    let body = json!({
        "initial_train_loss": tr.train_loss[0],
        "final_train_loss": tr.train_loss[last],
        "final_test_loss": final_test,
        "final_param_movement": tr.param_movement[last],
    });
    let mut summary = format!("{} epochs: train loss {:.6e} -> {:.6e}", cfg.epochs, tr.train_loss[0], tr.train_loss[last]);
    if let Some(v) = final_test {
        summary.push_str(&format!(", test loss {v:.6e}"));
    }
    Ok(Outcome { body, summary, findings: false })
}

fn compare(
    ctx: &Ctx,
    out: &mut Output,
    data: &DataArgs,
    m: &ModelArgs,
    t: &TrainArgs,
    g: &GenArgs,
    reps: Option<usize>,
) -> anyhow::Result<Outcome> {
    let f = &ctx.file;
    let reps = pick(&reps, &f.reps, 5);
    let gsos_arg = pick(&data.gso, &f.gso, "cxy,cxx".into());
    let names: Vec<String> = gsos_arg.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    if names.is_empty() {
        return Err(usage("--gso needs at least one shift operator"));
    }
    let (source, train, test) = if data.data_dir.is_some() || f.data_dir.is_some() {
        let (dir, tr, te) = load_data(ctx, &data.data_dir)?;
        let te = te.ok_or_else(|| usage(format!("compare needs X_test.csv and Y_test.csv in {}", dir.display())))?;
        (json!({ "data_dir": dir }), tr, te)
    } else {
        let p = gen_params(ctx, g);
        let d = experiments::planted_data(&p, ctx.seed)?;
        if p.m_test == 0 {
            return Err(usage("compare needs --m-test of at least 1"));
        }
        (json!({ "planted": p }), d.split.train, d.split.test)
    };
    let model_names: Vec<String> = match pick(&m.model, &f.model, "both".into()).as_str() {
        "both" => vec!["filter".into(), "gnn".into()],
        o => vec![o.to_string()],
    };
    let mut results = Vec::new();
    let mut configs = Vec::new();
    let mut summary = String::new();
    for name in &model_names {
        let spec = model_spec(ctx, name, m)?;
        let k = match spec {
            ModelSpec::Filter { k } | ModelSpec::Gnn { k, .. } => k,
        };
        let gsos = names
            .iter()
            .map(|n| Ok((n.clone(), experiments::resolve_gso(n, &train, k, DEFAULT_ALPHA, DEFAULT_BUDGET_ETA)?.into_matrix())))
            .collect::<anyhow::Result<Vec<_>>>()?;
        let cfg = CompareConfig { model: spec, train: train_config(ctx, &spec, t)?, reps };
        let report = training::compare_gso(&train, &test, &gsos, &cfg)?;
        let epochs = cfg.train.epochs + 1;
        let mut header = vec!["epoch".to_string()];
        for a in &report.arms {
            header.push(format!("{}_train_mean", a.name));
            header.push(format!("{}_test_mean", a.name));
        }
        let rows: Vec<Vec<f64>> = (0..epochs)
            .map(|e| {
                let mut r = vec![e as f64];
                for a in &report.arms {
                    r.push(a.mean_train_loss[e]);
                    r.push(a.mean_test_loss[e]);
                }
                r
            })
            .collect();
        out.table(&format!("compare_{name}.csv"), &header, &rows)?;
        summary.push_str(&format!("{name}:\n"));
        for a in &report.arms {
            summary.push_str(&format!(
                "  {:<10} final train {:.6e}  final test {:.6e}\n",
                a.name,
                a.mean_train_loss[epochs - 1],
                a.mean_test_loss[epochs - 1]
            ));
        }
        if report.arms.len() >= 2 {
            let o = experiments::pair_outcome(ctx.seed, &report);
            summary.push_str(&format!(
                "  {} vs {}: lower train loss at every epoch: {}, lower final test loss: {}\n",
                report.arms[0].name, report.arms[1].name, o.train_lower_every_epoch, o.test_lower
            ));
        }
        configs.push(json!({ "model": name, "config": cfg }));
        results.push(json!({ "model": name, "report": report }));
    }
    out.set_config(&json!({ "data": source, "gso": names, "reps": reps, "runs": configs }))?;
    out.add_seeds((1..reps as u64).map(|r| ctx.seed + r));
    Ok(Outcome { body: json!({ "results": results }), summary, findings: false })
}

#[derive(Serialize)]
struct GnnBoundSummary {
    instances: usize,
    vacuous: usize,
    holds: usize,
    violated: usize,
    assumption_unmet: usize,
    instance_bound_violations: usize,
    first_term_violations: usize,
    tail_violations: usize,
}

fn tally(reports: &[&alignment::GnnBoundReport]) -> (usize, usize, usize, usize, usize) {
    use alignment::BoundStatus as B;
    let c = |st: B| reports.iter().filter(|r| r.status == st).count();
    let inst = reports.iter().filter(|r| r.instance_status == B::Violated).count();
    (c(B::Vacuous), c(B::Holds), c(B::Violated), c(B::AssumptionUnmet), inst)
}

fn verify_bounds(
    ctx: &Ctx,
    out: &mut Output,
    count: Option<usize>,
    alpha: Option<f64>,
    eta: Option<f64>,
    nu: Option<f64>,
    xi: Option<f64>,
) -> anyhow::Result<Outcome> {
    let f = &ctx.file;
    let count = pick(&count, &f.count, 500);
    if count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let alpha = pick(&alpha, &f.alpha, 1.0);
    let eta = pick(&eta, &f.eta, 0.1);
    let nu = pick(&nu, &f.nu, 1.0);
    let xi = xi.or(f.xi);
    out.set_config(&json!({ "count": count, "alpha": alpha, "eta": eta, "nu": nu, "xi": xi, "seed": ctx.seed }))?;
    let seed = ctx.seed;
    let beta = hermite::beta_constant()?.value;

    let sweeps = alignment::standard_sweeps(count, seed, beta)?;

    let opt_inst = random_instance(seed, &InstanceRanges { n: (5, 5), m: (4, 4), k: (2, 2) });
    let optimality = alignment::optimality_sweep(&opt_inst.data, alpha, eta, 2 * count, seed)?;

    let sandwich = experiments::training_error_sweep((count / 5).max(1), seed + 2000)?;
    let movement = experiments::movement_sweep((count / 25).max(1), seed + 1000)?;
    let (sand_lit, sand_proj) = experiments::sandwich_sweep((2 * count / 5).max(1), seed)?;

    let small = InstanceRanges { n: (2, 5), m: (1, 4), k: (1, 3) };
    let gnn_count = (count / 25).max(1);
    let mut beta1 = std::collections::BTreeMap::new();
    for k in small.k.0..=small.k.1 {
        beta1.insert(k, hermite::beta_first_layer(k)?.value);
    }
    let mut second = Vec::new();
    let mut first = Vec::new();
    for i in 0..gnn_count as u64 {
        let inst = random_instance(seed + 3000 + i, &small);
        let c = ExpansionConstants::new(nu, inst.k)?;
        second.push(alignment::check_gnn_alignment_bound(&inst.s, &inst.data, inst.k, nu, xi, &c)?);
        first.push(alignment::check_first_layer_alignment_bound(&inst.s, &inst.data, inst.k, nu, beta1[&inst.k], xi)?);
    }
    let (v2, h2, x2, u2, i2) = tally(&second.iter().collect::<Vec<_>>());
    let gnn_second = GnnBoundSummary {
        instances: gnn_count,
        vacuous: v2,
        holds: h2,
        violated: x2,
        assumption_unmet: u2,
        instance_bound_violations: i2,
        first_term_violations: 0,
        tail_violations: 0,
    };
    let (v1, h1, x1, u1, i1) = tally(&first.iter().map(|r| &r.bound).collect::<Vec<_>>());
    let gnn_first = GnnBoundSummary {
        instances: gnn_count,
        vacuous: v1,
        holds: h1,
        violated: x1,
        assumption_unmet: u1,
        instance_bound_violations: i1,
        first_term_violations: first.iter().filter(|r| !r.first_term.pass).count(),
        tail_violations: first.iter().filter(|r| !r.tail.pass).count(),
    };

    let mut lines = Vec::new();
    let mut findings = false;
    let mut line = |name: &str, n: usize, bad: usize| {
        findings |= bad > 0;
        lines.push(format!("{:<36} {:>5} instances  {:>4} violations  {}", name, n, bad, if bad == 0 { "PASS" } else { "FAIL" }));
    };
    for s in &sweeps {
        line(&s.name, s.instances, s.violations);
    }
    line("optimality_sweep", optimality.samples, optimality.violations);
    line(&sandwich.name, sandwich.instances, sandwich.violations);
    line(&movement.summary.name, movement.summary.instances, movement.summary.violations);
    line(&sand_lit.name, sand_lit.instances, sand_lit.violations);
    line(&sand_proj.name, sand_proj.instances, sand_proj.violations);
    line("gnn_alignment_bound", gnn_count, gnn_second.violated + gnn_second.instance_bound_violations);
    line(
        "first_layer_alignment_bound",
        gnn_count,
        gnn_first.violated + gnn_first.instance_bound_violations + gnn_first.tail_violations,
    );
    line("first_layer_first_term_bound", gnn_count, gnn_first.first_term_violations);
    let summary = lines.join("\n");
    let body = json!({
        "beta": beta,
        "sweeps": sweeps,
        "optimality": optimality,
        "training_error_sandwich": sandwich,
        "parameter_movement": movement,
        "pinv_sandwich_literal": sand_lit,
        "pinv_sandwich_projected": sand_proj,
        "gnn_alignment_bound": gnn_second,
        "first_layer_alignment_bound": gnn_first,
        "first_layer_reports": first,
        "gnn_reports": second,
    });
    Ok(Outcome { body, summary, findings })
}

fn verify_hermite(ctx: &Ctx, out: &mut Output, k: Option<usize>, l_max: Option<usize>, grid: Option<usize>) -> anyhow::Result<Outcome> {
    let f = &ctx.file;
    let k = pick(&k, &f.k, 3);
    let l_max = l_max.unwrap_or(hermite::DEFAULT_L);
    let grid_n = grid.unwrap_or(100);
    if grid_n < 2 || k == 0 {
        return Err(usage("--grid needs at least 2 points and --k at least 1"));
    }
    out.set_config(&json!({ "k": k, "l_max": l_max, "grid": grid_n, "range": [0.1, 10.0] }))?;
    let beta = hermite::beta_constant()?;
    let beta1 = hermite::beta_first_layer(k)?;
    let sup = hermite::sigma_hat_sup();
    let sup_scaled = sup * hermite::unnormalized_scale();
    let suite = hermite::verification_suite(l_max, &hermite::linear_grid(0.1, 10.0, grid_n))?;
    let beta_exact = (std::f64::consts::PI - 2.0) / 2.0;
    let sign_fail = suite.signs.iter().filter(|r| !r.pass).count();
    let mono_fail = suite.monotonicity.iter().filter(|r| !r.pass).count();
    let summary = format!(
        "beta = {:.8} (closed form (pi-2)/2 = {:.8})\nbeta1(K = {k}) = {:.6}\nsigma_hat(0+) = {:.6}, times sqrt(2 pi) = {:.6}\nsign constancy: {} checks, {} failures\nratio monotonicity: {} checks, {} failures",
        beta.value,
        beta_exact,
        beta1.value,
        sup,
        sup_scaled,
        suite.signs.len(),
        sign_fail,
        suite.monotonicity.len(),
        mono_fail
    );
    let body = json!({
        "beta": beta.value,
        "beta_report": beta,
        "beta_closed_form": beta_exact,
        "beta_first_layer": beta1.value,
        "beta_first_layer_report": beta1,
        "sigma_hat_sup": sup,
        "sigma_hat_sup_scaled": sup_scaled,
        "suite": suite,
    });
    Ok(Outcome { body, summary, findings: !suite.pass })
}
