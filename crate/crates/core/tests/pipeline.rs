use xcov_core::alignment::{alignment, alignment_lower_bound};
use xcov_core::data::stack;
use xcov_core::dataio::{extract_pairs, generate_var, PairExtractionConfig, VarProcessConfig};
use xcov_core::linalg;
use xcov_core::ntk::filter_ntk;
use xcov_core::shiftops::{covariance, cross_covariance, solve_optimal_gso, CrossMode, GsoSolveConfig, MuMode};
use xcov_core::training::{train, ModelSpec, Optimizer, TrainConfig};

fn planted(seed: u64, t_len: usize) -> (VarProcessConfig, xcov_core::dataio::PairSplit) {
    let var = VarProcessConfig::planted(12, t_len, 0.9, seed).unwrap();
    let series = generate_var(&var).unwrap();
    let m = t_len - 10;
    let split = extract_pairs(&series, &PairExtractionConfig { dt: 1, m_train: m, m_test: 0, seed }).unwrap();
    (var, split)
}

#[test]
fn cross_covariance_recovers_planted_direction() {
    for seed in 0..3 {
        let (var, split) = planted(seed, 5000);
        let c = cross_covariance(&split.train, CrossMode::Symmetrized).unwrap();
        let (vals, vecs) = linalg::sym_eigen(&c.c);
        let top = vecs.column(vals.len() - 1).into_owned();
        let cos = top.dot(var.planted.as_ref().unwrap()).abs();
        assert!(cos > 0.9, "seed {seed}: |cos| = {cos}");
    }
}

#[test]
fn normalization_preserves_covariance_directions() {
    let (_, split) = planted(5, 600);
    let (scaled, _) = xcov_core::Dataset::new(&split.train.x * 7.5, &split.train.y * 7.5).unwrap().normalize_global();
    let a = cross_covariance(&split.train, CrossMode::Symmetrized).unwrap().c;
    let b = cross_covariance(&scaled, CrossMode::Symmetrized).unwrap().c;
    assert!(linalg::rel_frobenius(&a, &b) < 1e-12);
    let a = covariance(&split.train).unwrap().into_matrix();
    let b = covariance(&scaled).unwrap().into_matrix();
    assert!(linalg::rel_frobenius(&a, &b) < 1e-12);
}

#[test]
fn optimal_operator_beats_covariance_on_lower_bound_and_training() {
    let (_, split) = planted(9, 800);
    let d = &split.train;
    let c = cross_covariance(d, CrossMode::Symmetrized).unwrap();
    let cfg = GsoSolveConfig { k: 2, alpha: 1.0, eta: 0.0125, m: d.m(), mu_mode: MuMode::UnitFrobenius };
    let opt = solve_optimal_gso(&c, &cfg).unwrap().shift.into_matrix();
    let cxx = covariance(d).unwrap().into_matrix();
    assert!(alignment_lower_bound(&opt, d, 2).0 > alignment_lower_bound(&cxx, d, 2).0);

    // alignment of the filter NTK is at least its lower bound on both
    let y = stack(d).y;
    for s in [&opt, &cxx] {
        let a = alignment(&filter_ntk(s, d, 2).unwrap(), &y).unwrap();
        assert!(a >= alignment_lower_bound(s, d, 2).0 * (1.0 - 1e-9));
    }

    let model = ModelSpec::Filter { k: 2 }.build();
    let tc = TrainConfig { eta: 0.5, epochs: 40, batch_size: 32, optimizer: Optimizer::Adam, kappa: 0.1, seed: 1, ..Default::default() };
    let lo = train(model.as_ref(), &opt, d, None, &tc).unwrap().trace.train_loss;
    let hi = train(model.as_ref(), &cxx, d, None, &tc).unwrap().trace.train_loss;
    assert!(lo.last().unwrap() < hi.last().unwrap(), "{} vs {}", lo.last().unwrap(), hi.last().unwrap());
}
