use bspde::grid::{build_partition, Partition};
use bspde::model::{builtin_problem, BuiltinParams};
use bspde::solver::{solve, solve_with_paths, terminal_stage, Algorithm, SolverConfig, SolverError};
use bspde::stochastics::{BrownianPaths, EstimatorSpec};

fn params(pairs: &[(&str, f64)]) -> BuiltinParams {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn config(algorithm: Algorithm, samples: usize, estimator: EstimatorSpec) -> SolverConfig {
    SolverConfig {
        algorithm,
        samples,
        estimator,
        seed: 17,
        ..SolverConfig::default()
    }
}

fn line(n0: usize, n1: usize) -> Partition {
    build_partition(1.0, n0, &[1.0], &[n1]).unwrap()
}

#[test]
fn zero_problem_is_reproduced_exactly() {
    let spec = builtin_problem("zero", &params(&[("value", 7.0), ("slope", 0.5)])).unwrap();
    let p = line(5, 4);
    for algorithm in [Algorithm::One, Algorithm::Two] {
        let lattice = solve(&spec, &p, &config(algorithm, 50, EstimatorSpec::analytic(3))).unwrap();
        for slice in lattice.slices() {
            for s in 0..50 {
                for pt in 0..5 {
                    let x = p.coordinates(pt)[0];
                    assert_eq!(slice.v(s, pt, 0)[0], 7.0 + 0.5 * x);
                    assert_eq!(slice.vbar(s, pt, 0)[0], 0.0);
                }
            }
            if algorithm == Algorithm::Two && slice.index < 5 {
                assert_eq!(slice.fp_iterations, Some(1));
            }
        }
    }
}

#[test]
fn martingale_has_no_discretization_error() {
    let spec = builtin_problem("martingale", &BuiltinParams::new()).unwrap();
    let p = line(4, 2);
    let cfg = config(Algorithm::One, 200, EstimatorSpec::analytic(3));
    let paths = BrownianPaths::simulate(&p, 1, 200, cfg.seed).unwrap();
    let lattice = solve_with_paths(&spec, &p, &cfg, &paths).unwrap();
    for slice in lattice.slices() {
        for s in 0..200 {
            let w = paths.position(s, slice.index)[0];
            for pt in 0..3 {
                let x = p.coordinates(pt)[0];
                assert!((slice.v(s, pt, 0)[0] - x * w).abs() < 1e-10);
                if slice.index < 4 {
                    assert!((slice.vbar(s, pt, 0)[0] - x).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn implicit_linear_contraction_ratio() {
    let spec = builtin_problem("linear_scalar", &BuiltinParams::new()).unwrap();
    let p = line(4, 2);
    let lattice = solve(&spec, &p, &config(Algorithm::Two, 100, EstimatorSpec::analytic(3))).unwrap();
    // residual shrinks by 0.25 per iteration from roughly 0.25 |a|; at t_0
    // the conditional mean is already 0
    for slice in &lattice.slices()[1..4] {
        let it = slice.fp_iterations.unwrap();
        assert!((14..=22).contains(&it), "{it} iterations");
    }
    // the converged value solves v = a + v dt, i.e. v = a / (1 - dt)
    let a_ratio = 1.0 / 0.75;
    let top = lattice.slice(3).v(0, 2, 0)[0];
    let next = lattice.slice(4).v(0, 2, 0)[0];
    let paths = BrownianPaths::simulate(&p, 1, 100, 17).unwrap();
    let ratio_w = paths.position(0, 3)[0] / paths.position(0, 4)[0];
    assert!((top / (next * ratio_w) - a_ratio).abs() < 1e-8);
}

#[test]
fn implicit_step_too_large_fails() {
    // dt = 2: the implicit map v -> a + 2v expands
    let spec = builtin_problem("linear_scalar", &params(&[("T", 4.0)])).unwrap();
    let p = build_partition(4.0, 2, &[1.0], &[2]).unwrap();
    let err = solve(&spec, &p, &config(Algorithm::Two, 100, EstimatorSpec::analytic(3))).unwrap_err();
    assert!(matches!(err, SolverError::NonConvergence { step: 2, .. }), "{err}");
    assert!(err.is_numerical());
    assert!(err.to_string().contains("j0 = 2"));
}

#[test]
fn deterministic_problems_have_no_sample_spread() {
    let p = build_partition(1.0, 32, &[1.0], &[8]).unwrap();
    for name in ["zero", "heat"] {
        let spec = builtin_problem(name, &BuiltinParams::new()).unwrap();
        for algorithm in [Algorithm::One, Algorithm::Two] {
            let cfg = config(algorithm, 100, EstimatorSpec::regression(3));
            match solve(&spec, &p, &cfg) {
                Ok(lattice) => assert_eq!(lattice.sample_spread(), 0.0, "{name}"),
                Err(e) => assert!(e.is_numerical(), "{name}: {e}"),
            }
        }
    }
}

#[test]
fn terminal_slice_matches_terminal_stage() {
    let spec = builtin_problem("heat", &BuiltinParams::new()).unwrap();
    let p = line(3, 4);
    let cfg = config(Algorithm::One, 20, EstimatorSpec::analytic(3));
    let paths = BrownianPaths::simulate(&p, 1, 20, 3).unwrap();
    let lattice = solve_with_paths(&spec, &p, &cfg, &paths).unwrap();
    let term = terminal_stage(&spec, &p, &paths).unwrap();
    assert_eq!(lattice.terminal_slice(), &term);
    assert!(term.vbar.iter().all(|v| *v == 0.0));
}

#[test]
fn martingale_terminal_field() {
    let spec = builtin_problem("martingale", &BuiltinParams::new()).unwrap();
    let p = line(1, 2);
    let paths = BrownianPaths::from_increments(1, 1, 1, 0, vec![-0.7]).unwrap();
    let term = terminal_stage(&spec, &p, &paths).unwrap();
    assert_eq!(term.v(0, 0, 0)[0], 0.0);
    assert_eq!(term.v(0, 1, 0)[0], -0.35);
    assert_eq!(term.v(0, 2, 0)[0], -0.7);
}

#[test]
fn future_increments_do_not_leak_backwards() {
    let spec = builtin_problem("linear_scalar", &BuiltinParams::new()).unwrap();
    let p = line(6, 2);
    let cfg = config(Algorithm::One, 300, EstimatorSpec::analytic(3));
    let paths = BrownianPaths::simulate(&p, 1, 300, 5).unwrap();
    let cut = 3;
    let mut inc = paths.increments().to_vec();
    let fresh = BrownianPaths::simulate(&p, 1, 300, 99).unwrap();
    for s in 0..300 {
        for j in cut..6 {
            inc[s * 6 + j] = fresh.increments()[s * 6 + j];
        }
    }
    let other = BrownianPaths::from_increments(300, 6, 1, 5, inc).unwrap();
    let a = solve_with_paths(&spec, &p, &cfg, &paths).unwrap();
    let b = solve_with_paths(&spec, &p, &cfg, &other).unwrap();
    for j in 0..=cut {
        for (x, y) in a.slice(j).v.iter().zip(&b.slice(j).v) {
            assert!((x - y).abs() < 1e-10, "j = {j}");
        }
    }
    assert_ne!(a.slice(cut + 1).v, b.slice(cut + 1).v);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let spec = builtin_problem("linear_scalar", &BuiltinParams::new()).unwrap();
    let p = line(4, 2);
    let run = |workers: usize, estimator: EstimatorSpec| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
        pool.install(|| solve(&spec, &p, &config(Algorithm::One, 5000, estimator)).unwrap())
    };
    for estimator in [
        EstimatorSpec::analytic(3),
        EstimatorSpec::regression(3),
        EstimatorSpec::nested(3, 8),
    ] {
        assert_eq!(run(1, estimator.clone()), run(6, estimator));
    }
}

#[test]
fn mismatched_horizon_is_rejected() {
    let spec = builtin_problem("zero", &params(&[("T", 2.0)])).unwrap();
    let err = solve(&spec, &line(2, 2), &SolverConfig::default()).unwrap_err();
    assert!(matches!(err, SolverError::InvalidConfig(_)));
}

#[test]
fn csv_export_layout() {
    let spec = builtin_problem("zero", &params(&[("value", 7.0)])).unwrap();
    let p = line(1, 1);
    let lattice = solve(&spec, &p, &config(Algorithm::One, 4, EstimatorSpec::analytic(3))).unwrap();
    let (mut v, mut b) = (Vec::new(), Vec::new());
    lattice.write_csv(&mut v, &mut b).unwrap();
    let v = String::from_utf8(v).unwrap();
    let b = String::from_utf8(b).unwrap();
    assert!(v.starts_with("sample,j,t,x1,c,key,component,value\n0,0,0,0,0,0,0,7e0\n"));
    assert!(b.starts_with("sample,j,t,x1,c,key,component,noise,value\n"));
    assert_eq!(v.lines().count(), 1 + 4 * 2 * 2);
}
