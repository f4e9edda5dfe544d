use std::sync::Arc;

use bspde::analysis::{
    check_representation_identity, compare_algorithms, convergence_study, discrete_error, increment_regularity,
    refinement_ladder, representation_check, solve_malliavin, AnalysisError, Reference,
};
use bspde::grid::{build_partition, BoundaryRule, Partition};
use bspde::model::{builtin_problem, BuiltinParams, ProblemSpec};
use bspde::solver::{solve_with_paths, Algorithm, SolverConfig};
use bspde::stochastics::{BrownianPaths, EstimatorSpec};

fn config(algorithm: Algorithm, samples: usize) -> SolverConfig {
    SolverConfig {
        algorithm,
        samples,
        estimator: EstimatorSpec::analytic(3),
        seed: 11,
        ..SolverConfig::default()
    }
}

fn line(n0: usize, n1: usize) -> Partition {
    build_partition(1.0, n0, &[1.0], &[n1]).unwrap()
}

fn builtin(name: &str) -> ProblemSpec {
    builtin_problem(name, &BuiltinParams::new()).unwrap()
}

#[test]
fn lattice_against_itself_is_zero() {
    let spec = builtin("linear_scalar");
    let p = line(4, 2);
    let cfg = config(Algorithm::One, 200);
    let paths = BrownianPaths::simulate(&p, 1, 200, 1).unwrap();
    let lattice = solve_with_paths(&spec, &p, &cfg, &paths).unwrap();
    let report = discrete_error(&lattice, &Reference::Lattice(&lattice)).unwrap();
    assert_eq!(report.total(), 0.0);
    assert_eq!(report.stderr_total(), 0.0);
}

#[test]
fn lattice_criterion_is_symmetric() {
    let spec = builtin("linear_scalar");
    let p = line(4, 2);
    let paths = BrownianPaths::simulate(&p, 1, 300, 2).unwrap();
    let a = solve_with_paths(&spec, &p, &config(Algorithm::One, 300), &paths).unwrap();
    let b = solve_with_paths(&spec, &p, &config(Algorithm::Two, 300), &paths).unwrap();
    let ab = discrete_error(&a, &Reference::Lattice(&b)).unwrap();
    let ba = discrete_error(&b, &Reference::Lattice(&a)).unwrap();
    assert!(ab.total() > 0.0);
    assert_eq!(ab.total(), ba.total());
}

#[test]
fn zero_problem_has_zero_error() {
    let spec = builtin_problem("zero", &[("slope".to_string(), 2.0)].into_iter().collect()).unwrap();
    let p = line(4, 3);
    let paths = BrownianPaths::simulate(&p, 1, 50, 3).unwrap();
    let lattice = solve_with_paths(&spec, &p, &config(Algorithm::One, 50), &paths).unwrap();
    let solution = spec.reference.as_deref().unwrap();
    let report = discrete_error(&lattice, &Reference::Analytic { solution, paths: &paths }).unwrap();
    assert_eq!(report.total(), 0.0);
    assert_eq!(compare_algorithms(&spec, &p, &config(Algorithm::One, 50)).unwrap().total(), 0.0);
}

#[test]
fn martingale_error_is_the_piecewise_constant_gap() {
    // V = x W(t) exactly at grid times; between them the gap is x^2 dt at x = 1
    let spec = builtin("martingale");
    let p = line(4, 2);
    let s = 20_000;
    let paths = BrownianPaths::simulate(&p, 1, s, 4).unwrap();
    let lattice = solve_with_paths(&spec, &p, &config(Algorithm::One, s), &paths).unwrap();
    let solution = spec.reference.as_deref().unwrap();
    let report = discrete_error(&lattice, &Reference::Analytic { solution, paths: &paths }).unwrap();
    assert!(report.err_vbar() < 1e-20);
    assert!((report.err_v() - 0.25).abs() < 4.0 * report.v_stderr[0], "{report:?}");
}

#[test]
fn finer_lattice_reference() {
    let spec = builtin("linear_scalar");
    let coarse = line(4, 2);
    let fine = line(8, 4);
    let fine_paths = BrownianPaths::simulate(&fine, 1, 500, 5).unwrap();
    let coarse_paths = fine_paths.coarsen(2).unwrap();
    let cfg = config(Algorithm::One, 500);
    let a = solve_with_paths(&spec, &coarse, &cfg, &coarse_paths).unwrap();
    let b = solve_with_paths(&spec, &fine, &cfg, &fine_paths).unwrap();
    let report = discrete_error(&a, &Reference::Lattice(&b)).unwrap();
    assert!(report.total() > 0.0 && report.total() < 1.0);
    assert!(matches!(
        discrete_error(&b, &Reference::Lattice(&a)),
        Err(AnalysisError::ShapeMismatch(_))
    ));
}

#[test]
fn convergence_study_requirements() {
    let p = line(2, 2);
    let ladder = refinement_ladder(&p, 3).unwrap();
    let cfg = config(Algorithm::One, 64);
    let zero = convergence_study(&builtin("zero"), &ladder, &cfg).unwrap();
    assert!(zero.fit.degenerate);
    assert_eq!(zero.fit.slope, None);
    assert_eq!(
        convergence_study(&builtin("zero"), &ladder[..2], &cfg),
        Err(AnalysisError::TooFewLevels(2))
    );
    let mut no_reference = builtin("zero");
    no_reference.reference = None;
    assert!(matches!(
        convergence_study(&no_reference, &ladder, &cfg),
        Err(AnalysisError::MissingReference(_))
    ));
    let reversed: Vec<Partition> = ladder.iter().rev().cloned().collect();
    assert!(matches!(
        convergence_study(&builtin("zero"), &reversed, &cfg),
        Err(AnalysisError::InvalidLadder(_))
    ));
}

#[test]
fn convergence_csv_layout() {
    let ladder = refinement_ladder(&line(2, 2), 3).unwrap();
    let cfg = config(Algorithm::One, 200);
    let study = convergence_study(&builtin("linear_scalar"), &ladder, &cfg).unwrap();
    let mut out = Vec::new();
    study.write_csv(&mut out, cfg.seed, &cfg.algorithm.to_string()).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("mesh_size,err_V_sq,err_Vbar_sq,total,stderr_total,samples,seed,algorithm")
    );
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "5e-1");
    assert_eq!(&first[5..], ["200", "11", "one"]);
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn malliavin_zero_block_and_martingale_derivative() {
    let spec = builtin("martingale");
    let p = line(6, 2);
    let cfg = config(Algorithm::One, 100);
    let paths = BrownianPaths::simulate(&p, 1, 100, 6).unwrap();
    let base = solve_with_paths(&spec, &p, &cfg, &paths).unwrap();
    let theta = 3;
    let m = solve_malliavin(&spec, &base, &paths, &cfg, theta).unwrap();
    assert_eq!(m.slices().len(), 7);
    for slice in m.slices() {
        for s in 0..100 {
            for pt in 0..3 {
                let x = p.coordinates(pt)[0];
                let dv = slice.v(s, pt, 0)[0];
                if slice.index < theta {
                    assert_eq!(dv, 0.0);
                    assert_eq!(slice.vbar(s, pt, 0)[0], 0.0);
                } else {
                    assert!((dv - x).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn linear_derivative_follows_the_discrete_exponential() {
    let spec = builtin("linear_scalar");
    let p = line(8, 2);
    let cfg = config(Algorithm::One, 200);
    let paths = BrownianPaths::simulate(&p, 1, 200, 7).unwrap();
    let base = solve_with_paths(&spec, &p, &cfg, &paths).unwrap();
    let m = solve_malliavin(&spec, &base, &paths, &cfg, 0).unwrap();
    for slice in m.slices() {
        let growth = (1.0 + 0.125f64).powi(8 - slice.index as i32);
        for s in [0, 99, 199] {
            assert!((slice.v(s, 2, 0)[0] - growth).abs() < 1e-9);
        }
        // and approaches e^{T-t} x
        let exact = (1.0 - slice.time).exp();
        assert!((growth - exact).abs() < 0.2 * exact);
    }
}

#[test]
fn representation_identity_on_martingale_and_linear() {
    for name in ["martingale", "linear_scalar"] {
        let report = representation_check(&builtin(name), &line(8, 2), &config(Algorithm::One, 500)).unwrap();
        assert_eq!(report.rows.len(), 8 * 3);
        assert_eq!(report.max_abs_z(), 0.0, "{name}");
    }
}

#[test]
fn representation_identity_with_diffusion_equal_to_value() {
    // J = V, L = 0, H = 1 + x: V = 1 + x, V̄ = J = V, D V = 0
    let terminal = Arc::new(|x: &[f64], _: &[f64], out: &mut [f64]| out[0] = 1.0 + x[0]);
    let diffusion = Arc::new(|args: &bspde::model::OperatorArguments<'_>, out: &mut [f64]| out[0] = args.value()[0]);
    let spec = ProblemSpec::new("j_equals_v", 1, 1, 1, 1.0, terminal).with_diffusion(diffusion);
    let p = line(4, 2);
    let cfg = config(Algorithm::One, 100);
    let paths = BrownianPaths::simulate(&p, 1, 100, 8).unwrap();
    let base = solve_with_paths(&spec, &p, &cfg, &paths).unwrap();
    let m = solve_malliavin(&spec, &base, &paths, &cfg, 0).unwrap();
    assert!(m.slices().iter().all(|s| s.v.iter().all(|v| *v == 0.0)));
    let report = check_representation_identity(&spec, &base, &m, BoundaryRule::Backward).unwrap();
    assert_eq!(report.max_abs_z(), 0.0);
    assert!(report.rows.iter().all(|r| r.mean_lhs == r.mean_rhs && r.var_lhs == 0.0));

    let partial = solve_malliavin(&spec, &base, &paths, &cfg, 2).unwrap();
    assert!(matches!(
        check_representation_identity(&spec, &base, &partial, BoundaryRule::Backward),
        Err(AnalysisError::ThetaMismatch(_))
    ));
}

#[test]
fn malliavin_csv_layout() {
    let report = representation_check(&builtin("martingale"), &line(2, 1), &config(Algorithm::One, 50)).unwrap();
    let mut out = Vec::new();
    report.write_csv(&mut out, 1).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("t,x1,c,key,component,mean_lhs,mean_rhs,var_lhs,var_rhs,zscore\n0,0,0,0,0,"));
    assert_eq!(text.lines().count(), 1 + 2 * 2);
}

#[test]
fn increment_regularity_on_martingale() {
    // E|x W(t) - x W(s)|^2 = x^2 (t - s): slope exactly 1 in expectation
    let spec = builtin("martingale");
    let p = line(8, 1);
    let s = 20_000;
    let paths = BrownianPaths::simulate(&p, 1, s, 9).unwrap();
    let lattice = solve_with_paths(&spec, &p, &config(Algorithm::One, s), &paths).unwrap();
    let report = increment_regularity(&lattice).unwrap();
    assert_eq!(report.lags.len(), 8);
    let slope = report.fit.slope.unwrap();
    assert!((slope - 1.0).abs() < 0.05, "{slope}");
}
