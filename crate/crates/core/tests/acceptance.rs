//! Acceptance criteria, one line each. Exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use bspde::analysis::{
    algorithm_agreement, convergence_study, increment_regularity, refinement_ladder, representation_check,
    solve_malliavin,
};
use bspde::grid::{
    build_derivative_stack, build_partition, enumerate_multi_indices, ordering_key, GridField, NormWeights, Partition,
    StackLayout,
};
use bspde::model::{builtin_problem, BuiltinParams, ProblemSpec};
use bspde::solver::{solve, solve_with_paths, terminal_stage, Algorithm, SolverConfig};
use bspde::stochastics::{condexp_nested, condexp_regression, BrownianPaths, EstimatorSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;

fn builtin(name: &str) -> ProblemSpec {
    builtin_problem(name, &BuiltinParams::new()).expect("builtin exists")
}

fn config(algorithm: Algorithm, samples: usize, estimator: EstimatorSpec, seed: u64) -> SolverConfig {
    SolverConfig {
        algorithm,
        samples,
        estimator,
        seed,
        ..SolverConfig::default()
    }
}

/// n0 in {4, 8, 16, 32} on [0, 1], space refined alongside time.
fn ladder() -> Vec<Partition> {
    let base = build_partition(1.0, 4, &[1.0], &[4]).unwrap();
    refinement_ladder(&base, 4).unwrap()
}

fn convergence_rate() -> Outcome {
    let cfg = config(Algorithm::One, 100_000, EstimatorSpec::analytic(3), 2024);
    let study = convergence_study(&builtin("linear_scalar"), &ladder(), &cfg).map_err(|e| e.to_string())?;
    let slope = study.fit.slope.ok_or("degenerate fit")?;
    let totals: Vec<String> = study.reports.iter().map(|r| format!("{:.4e}", r.total())).collect();
    Ok((
        (0.7..=1.3).contains(&slope),
        format!("slope {slope:.3} in [0.7, 1.3]; totals {}", totals.join(", ")),
    ))
}

fn martingale_exactness() -> Outcome {
    let spec = builtin("martingale");
    let p = build_partition(1.0, 16, &[1.0], &[4]).unwrap();
    let cfg = config(Algorithm::One, 2_000, EstimatorSpec::analytic(3), 7);
    let paths = BrownianPaths::simulate(&p, 1, cfg.samples, cfg.seed).map_err(|e| e.to_string())?;
    let lattice = solve_with_paths(&spec, &p, &cfg, &paths).map_err(|e| e.to_string())?;
    let (mut dv, mut dvbar): (f64, f64) = (0.0, 0.0);
    for slice in lattice.slices() {
        for s in 0..cfg.samples {
            let w = paths.position(s, slice.index)[0];
            for pt in 0..p.point_count() {
                let x = p.coordinates(pt)[0];
                dv = dv.max((slice.v(s, pt, 0)[0] - x * w).abs());
                if slice.index < p.time_steps() {
                    dvbar = dvbar.max((slice.vbar(s, pt, 0)[0] - x).abs());
                }
            }
        }
    }
    Ok((
        dv < 1e-10 && dvbar < 1e-10,
        format!("max |V - xW| = {dv:.2e}, max |V̄ - x| = {dvbar:.2e} (< 1e-10)"),
    ))
}

fn deterministic_spread() -> Outcome {
    let p = build_partition(1.0, 32, &[1.0], &[8]).unwrap();
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    for name in ["zero", "heat"] {
        for algorithm in [Algorithm::One, Algorithm::Two] {
            let cfg = config(algorithm, 100, EstimatorSpec::regression(3), 3);
            match solve(&builtin(name), &p, &cfg) {
                Ok(lattice) => worst = worst.max(lattice.sample_spread()),
                Err(e) if e.is_numerical() => notes.push(format!("{name}/{algorithm}: {e}")),
                Err(e) => return Err(e.to_string()),
            }
        }
    }
    let mut msg = format!("max sample spread {worst:e} (= 0)");
    if !notes.is_empty() {
        msg.push_str(&format!("; solves failing numerically: {}", notes.join("; ")));
    }
    Ok((worst == 0.0, msg))
}

fn heat_accuracy() -> Outcome {
    let p = build_partition(1.0, 32, &[1.0], &[8]).unwrap();
    let exact = 0.5f64.exp();
    let cfg = config(Algorithm::One, 100, EstimatorSpec::analytic(3), 3);
    match solve(&builtin("heat"), &p, &cfg) {
        Ok(lattice) => {
            let v = lattice.slice(0).v(0, 0, 0)[0];
            let rel = (v / exact - 1.0).abs();
            Ok((rel < 0.05, format!("V(0, 0) = {v:.6e} vs e^0.5 = {exact:.4}, relative error {rel:.3e} (< 0.05)")))
        }
        Err(e) if e.is_numerical() => Ok((false, format!("solve failed: {e}"))),
        Err(e) => Err(e.to_string()),
    }
}

fn oracle_equivalence() -> Outcome {
    let p = build_partition(1.0, 2, &[1.0], &[1]).unwrap();
    let paths = BrownianPaths::simulate(&p, 1, 100_000, 404).map_err(|e| e.to_string())?;
    let state = paths.positions_at(1);
    let terminal = paths.positions_at(2);
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let a: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let f = move |w: f64| a[0] + a[1] * w + a[2] * w * w + a[3] * w * w * w;
        let targets: Vec<f64> = terminal.iter().map(|&w| f(w)).collect();
        let fit = condexp_regression(&targets, &state, 1, &EstimatorSpec::regression(3)).map_err(|e| e.to_string())?;
        let s = rng.random_range(0..paths.samples());
        let outer = BrownianPaths::from_increments(1, 2, 1, 0, vec![paths.increment(s, 1)[0], 0.0])
            .map_err(|e| e.to_string())?;
        let nested = condexp_nested(&outer, &p, 1, 10_000, 1000 + k, |traj| f(traj[2])).map_err(|e| e.to_string())?;
        let se = fit.standard_errors[s].hypot(nested.standard_errors[0]);
        worst = worst.max(((fit.fitted[s] - nested.values[0]) / se).abs());
    }
    Ok((worst < 3.0, format!("max |z| over 20 targets {worst:.3} (< 3)")))
}

fn malliavin_identity() -> Outcome {
    let p = build_partition(1.0, 16, &[1.0], &[2]).unwrap();
    let cfg = config(Algorithm::One, 10_000, EstimatorSpec::analytic(3), 5);
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for name in ["martingale", "linear_scalar"] {
        let z = representation_check(&builtin(name), &p, &cfg)
            .map_err(|e| e.to_string())?
            .max_abs_z();
        worst = worst.max(z);
        parts.push(format!("{name} max |z| {z:.3}"));
    }
    Ok((worst < 3.0, format!("{} (< 3)", parts.join(", "))))
}

fn algorithm_agreement_rate() -> Outcome {
    let cfg = config(Algorithm::One, 100_000, EstimatorSpec::analytic(3), 2024);
    let study = algorithm_agreement(&builtin("linear_scalar"), &ladder(), &cfg).map_err(|e| e.to_string())?;
    let slope = study.fit.slope.ok_or("degenerate fit")?;
    Ok((slope >= 0.7, format!("discrepancy slope {slope:.3} (>= 0.7)")))
}

fn property_suites() -> Outcome {
    let mut failures = Vec::new();

    // affine exactness
    let p2 = build_partition(1.0, 2, &[1.0, 2.0], &[3, 2]).unwrap();
    let field = GridField::from_fn(&p2, 1, |x, out| out[0] = 0.5 - 2.0 * x[0] + 3.0 * x[1]);
    let stack = build_derivative_stack(&field, 2, &p2).map_err(|e| e.to_string())?;
    let layout = StackLayout::new(2, 2).map_err(|e| e.to_string())?;
    let slopes = [-2.0, 3.0];
    let affine = (0..p2.point_count()).all(|pt| {
        layout.order_range(1).enumerate().all(|(axis, e)| (stack.entry(pt, e)[0] - slopes[axis]).abs() < 1e-12)
    }) && stack.order_sup(2) < 1e-12;
    if !affine {
        failures.push("affine exactness");
    }

    // ordering against brute force
    let ordering = (1..=3).all(|p| {
        (0..=6).all(|c| {
            let set = enumerate_multi_indices(c, p);
            let mut brute: Vec<Vec<usize>> = (0..(c + 1).pow(p as u32))
                .map(|code| (0..p).map(|l| code / (c + 1).pow(l as u32) % (c + 1)).collect::<Vec<usize>>())
                .filter(|t| t.iter().sum::<usize>() == c)
                .collect();
            brute.sort_by_key(|t| ordering_key(t));
            set.indices() == brute.as_slice()
        })
    });
    if !ordering {
        failures.push("multi-index ordering");
    }

    // weights
    let w = NormWeights::new(6, 3.0);
    if w.weight(0) != 1.0 || (0..6).any(|c| w.log_weight(c + 1) >= w.log_weight(c)) {
        failures.push("weight decay");
    }

    // terminal slice and adaptedness
    let spec = builtin("linear_scalar");
    let p = build_partition(1.0, 6, &[1.0], &[2]).unwrap();
    let cfg = config(Algorithm::One, 300, EstimatorSpec::analytic(3), 5);
    let paths = BrownianPaths::simulate(&p, 1, 300, 5).map_err(|e| e.to_string())?;
    let lattice = solve_with_paths(&spec, &p, &cfg, &paths).map_err(|e| e.to_string())?;
    if lattice.terminal_slice() != &terminal_stage(&spec, &p, &paths).map_err(|e| e.to_string())? {
        failures.push("terminal consistency");
    }
    let cut = 3;
    let fresh = BrownianPaths::simulate(&p, 1, 300, 77).map_err(|e| e.to_string())?;
    let mut inc = paths.increments().to_vec();
    for s in 0..300 {
        for j in cut..6 {
            inc[s * 6 + j] = fresh.increments()[s * 6 + j];
        }
    }
    let shuffled = BrownianPaths::from_increments(300, 6, 1, 5, inc).map_err(|e| e.to_string())?;
    let other = solve_with_paths(&spec, &p, &cfg, &shuffled).map_err(|e| e.to_string())?;
    let adapted = (0..=cut).all(|j| {
        lattice.slice(j).v.iter().zip(&other.slice(j).v).all(|(a, b)| (a - b).abs() < 1e-10)
    });
    if !adapted {
        failures.push("adaptedness");
    }

    // Malliavin zero block
    let m = solve_malliavin(&spec, &lattice, &paths, &cfg, 4).map_err(|e| e.to_string())?;
    if !m.slices()[..4].iter().all(|s| s.v.iter().chain(&s.vbar).all(|v| *v == 0.0)) {
        failures.push("Malliavin zero block");
    }

    // worker-count determinism
    let run = |n: usize, estimator: EstimatorSpec| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        pool.install(|| solve(&spec, &p, &config(Algorithm::Two, 3000, estimator, 9)))
    };
    for estimator in [EstimatorSpec::analytic(3), EstimatorSpec::regression(3), EstimatorSpec::nested(3, 4)] {
        let a = run(1, estimator.clone()).map_err(|e| e.to_string())?;
        let b = run(7, estimator).map_err(|e| e.to_string())?;
        if a != b {
            failures.push("worker determinism");
            break;
        }
    }

    if failures.is_empty() {
        Ok((true, "all property checks hold".into()))
    } else {
        Ok((false, format!("failing: {}", failures.join(", "))))
    }
}

fn time_regularity() -> Outcome {
    let p = build_partition(1.0, 16, &[1.0], &[2]).unwrap();
    let cfg = config(Algorithm::One, 10_000, EstimatorSpec::analytic(3), 8);
    let lattice = solve(&builtin("linear_scalar"), &p, &cfg).map_err(|e| e.to_string())?;
    let report = increment_regularity(&lattice).map_err(|e| e.to_string())?;
    let slope = report.fit.slope.ok_or("degenerate fit")?;
    Ok((slope <= 1.3, format!("increment slope {slope:.3} (<= 1.3)")))
}

fn main() -> ExitCode {
    let criteria: [(&str, &str, fn() -> Outcome); 9] = [
        ("1", "convergence rate", convergence_rate),
        ("2", "martingale exactness", martingale_exactness),
        ("3a", "deterministic reduction: sample spread", deterministic_spread),
        ("3b", "deterministic reduction: heat accuracy", heat_accuracy),
        ("4", "estimator oracle equivalence", oracle_equivalence),
        ("5", "Malliavin representation identity", malliavin_identity),
        ("6", "algorithm agreement", algorithm_agreement_rate),
        ("7", "property suites", property_suites),
        ("8", "time-increment regularity", time_regularity),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        let (status, detail) = match outcome {
            Ok((true, d)) => ("PASS", d),
            Ok((false, d)) => ("FAIL", d),
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("criterion {id} [{name}]: {status} ({secs:.1}s) {detail}");
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
