use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use serde_json::json;

use bspde::analysis::{algorithm_agreement, compare_algorithms, convergence_study, representation_check, write_error_csv};
use bspde::grid::Partition;
use bspde::solver::solve;
use bspde::stochastics::{write_coefficients_csv, CoefficientRecord};

use crate::config::{self, ConfigError, Resolved};
use crate::RunArgs;

/// Everything written by one run, relative to the output directory.
struct Outputs {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl Outputs {
    fn create(&mut self, name: &str) -> anyhow::Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.artifacts.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    fn json(&mut self, name: &str, value: &impl serde::Serialize) -> anyhow::Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

pub fn run(command: &str, args: &RunArgs) -> anyhow::Result<()> {
    let started = Instant::now();
    let mut parsed = config::load(&args.config)?;
    if let Some(out) = &args.out {
        parsed.output = out.clone();
    }
    let resolved = config::resolve(parsed, args.seed, args.paper_literal_stencil)?;
    if let Some(n) = args.workers {
        if n == 0 {
            return Err(ConfigError("--workers must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }

    let dir = resolved.config.output.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut out = Outputs {
        dir,
        artifacts: Vec::new(),
    };
    out.json("resolved_config.json", &resolved.config)?;

    match command {
        "solve" => cmd_solve(&resolved, &mut out)?,
        "converge" => cmd_converge(&resolved, &mut out)?,
        "compare" => cmd_compare(&resolved, &mut out)?,
        "check-malliavin" => cmd_check_malliavin(&resolved, &mut out)?,
        other => unreachable!("unknown command {other}"),
    }

    let mut artifacts = out.artifacts.clone();
    artifacts.push("manifest.json".into());
    let manifest = json!({
        "command": command,
        "seed": resolved.config.seed,
        "wall_time_seconds": started.elapsed().as_secs_f64(),
        "library_version": bspde::VERSION,
        "workers": rayon::current_num_threads(),
        "artifacts": artifacts,
    });
    out.json("manifest.json", &manifest)?;
    Ok(())
}

fn need_partition(r: &Resolved, command: &str) -> anyhow::Result<Partition> {
    r.partition()?
        .ok_or_else(|| ConfigError(format!("`{command}` needs a `partition`, not a `ladder`")).into())
}

fn cmd_solve(r: &Resolved, out: &mut Outputs) -> anyhow::Result<()> {
    let partition = need_partition(r, "solve")?;
    let lattice = solve(&r.spec, &partition, &r.solver)?;
    let (v, vbar) = (out.create("solution_v.csv")?, out.create("solution_vbar.csv")?);
    lattice.write_csv(v, vbar)?;
    if r.solver.record_coefficients {
        let records: Vec<CoefficientRecord> = lattice
            .slices()
            .iter()
            .filter_map(|slice| slice.coefficients.as_ref().map(|c| (slice.index, c)))
            .flat_map(|(step, fit)| {
                let width = fit.exponents.len();
                fit.columns.iter().enumerate().flat_map(move |(i, &column)| {
                    fit.exponents.iter().enumerate().map(move |(b, exps)| CoefficientRecord {
                        step,
                        component: column,
                        key: 0,
                        exponents: exps.clone(),
                        coefficient: fit.values[i * width + b],
                    })
                })
            })
            .collect();
        write_coefficients_csv(out.create("coefficients.csv")?, &records)?;
    }
    println!(
        "solved `{}`: {} steps, {} points, {} samples -> {}",
        r.spec.name,
        partition.time_steps(),
        partition.point_count(),
        r.solver.samples,
        out.dir.display()
    );
    Ok(())
}

fn need_ladder(r: &Resolved, command: &str) -> anyhow::Result<Vec<Partition>> {
    r.ladder()?
        .ok_or_else(|| ConfigError(format!("`{command}` needs a `ladder`, not a `partition`")).into())
}

fn print_fit(slope: Option<f64>, degenerate: bool) {
    match slope {
        Some(s) => println!("fitted slope: {s:.4}"),
        None if degenerate => println!("degenerate: errors vanish on every level, no slope fitted"),
        None => println!("no slope fitted"),
    }
}

fn cmd_converge(r: &Resolved, out: &mut Outputs) -> anyhow::Result<()> {
    let ladder = need_ladder(r, "converge")?;
    let study = convergence_study(&r.spec, &ladder, &r.solver)?;
    study.write_csv(out.create("convergence.csv")?, r.solver.seed, &r.solver.algorithm.to_string())?;
    print_fit(study.fit.slope, study.fit.degenerate);
    Ok(())
}

const COMPARE_LABEL: &str = "one-vs-two";

fn cmd_compare(r: &Resolved, out: &mut Outputs) -> anyhow::Result<()> {
    if let Some(ladder) = r.ladder()? {
        let study = algorithm_agreement(&r.spec, &ladder, &r.solver)?;
        study.write_csv(out.create("comparison.csv")?, r.solver.seed, COMPARE_LABEL)?;
        print_fit(study.fit.slope, study.fit.degenerate);
    } else {
        let partition = need_partition(r, "compare")?;
        let report = compare_algorithms(&r.spec, &partition, &r.solver)?;
        let total = report.total();
        write_error_csv(out.create("comparison.csv")?, &[report], r.solver.seed, COMPARE_LABEL)?;
        println!("squared distance between schemes: {total:e}");
    }
    Ok(())
}

fn cmd_check_malliavin(r: &Resolved, out: &mut Outputs) -> anyhow::Result<()> {
    let partition = need_partition(r, "check-malliavin")?;
    let report = representation_check(&r.spec, &partition, &r.solver)?;
    report.write_csv(out.create("malliavin.csv")?, partition.dims())?;
    println!("max |z|: {:.4} over {} nodes", report.max_abs_z(), report.rows.len());
    Ok(())
}
