use std::io::Write;

use super::error::{compare_algorithms_with_paths, streamed_error, ErrorReport};
use super::AnalysisError;
use crate::grid::Partition;
use crate::model::ProblemSpec;
use crate::solver::{SolutionLattice, SolverConfig};
use crate::stochastics::BrownianPaths;

/// Totals below this are treated as exact zeros.
pub const DEGENERATE_LEVEL: f64 = 1e-24;

/// Least-squares line through `(log mesh, log total)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceFit {
    pub points: Vec<(f64, f64)>,
    /// `None` when the errors vanish and no slope is meaningful.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub residuals: Vec<f64>,
    pub degenerate: bool,
}

/// Fit `log y = slope log x + intercept`. Needs at least three points.
pub fn fit_loglog(points: &[(f64, f64)]) -> Result<ConvergenceFit, AnalysisError> {
    if points.len() < 3 {
        return Err(AnalysisError::TooFewLevels(points.len()));
    }
    if points.iter().any(|&(x, _)| !(x > 0.0 && x.is_finite())) {
        return Err(AnalysisError::InvalidLadder("mesh sizes must be positive".into()));
    }
    if points.iter().any(|&(_, y)| !(y > DEGENERATE_LEVEL && y.is_finite())) {
        return Ok(ConvergenceFit {
            points: points.to_vec(),
            slope: None,
            intercept: None,
            residuals: Vec::new(),
            degenerate: true,
        });
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(AnalysisError::InvalidLadder("all levels share one mesh size".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals = lx.iter().zip(&ly).map(|(x, y)| y - (intercept + slope * x)).collect();
    Ok(ConvergenceFit {
        points: points.to_vec(),
        slope: Some(slope),
        intercept: Some(intercept),
        residuals,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub reports: Vec<ErrorReport>,
    pub fit: ConvergenceFit,
}

impl ConvergenceStudy {
    /// One row per level; see [`write_error_csv`].
    pub fn write_csv<W: Write>(&self, out: W, seed: u64, label: &str) -> Result<(), AnalysisError> {
        write_error_csv(out, &self.reports, seed, label)
    }
}

/// `mesh_size, err_V_sq, err_Vbar_sq, total, stderr_total, samples, seed, algorithm`,
/// with `algorithm` filled from `label`.
pub fn write_error_csv<W: Write>(out: W, reports: &[ErrorReport], seed: u64, label: &str) -> Result<(), AnalysisError> {
    let err = |e: csv::Error| AnalysisError::Output(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "mesh_size",
        "err_V_sq",
        "err_Vbar_sq",
        "total",
        "stderr_total",
        "samples",
        "seed",
        "algorithm",
    ])
    .map_err(err)?;
    for r in reports {
        w.write_record([
            format!("{:e}", r.mesh_size),
            format!("{:e}", r.err_v()),
            format!("{:e}", r.err_vbar()),
            format!("{:e}", r.total()),
            format!("{:e}", r.stderr_total()),
            r.samples.to_string(),
            seed.to_string(),
            label.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| AnalysisError::Output(e.to_string()))
}

/// `base` refined by `2^k` for `k = 0..levels`.
pub fn refinement_ladder(base: &Partition, levels: usize) -> Result<Vec<Partition>, AnalysisError> {
    if levels < 3 {
        return Err(AnalysisError::TooFewLevels(levels));
    }
    (0..levels).map(|k| Ok(base.refine(1 << k)?)).collect()
}

/// Paths for every level: simulated once on the finest time grid and
/// coarsened when the grids nest, simulated per level otherwise.
fn ladder_paths(partitions: &[Partition], d: usize, config: &SolverConfig) -> Result<Vec<BrownianPaths>, AnalysisError> {
    let finest = partitions
        .iter()
        .max_by_key(|p| p.time_steps())
        .expect("ladder is not empty");
    let fine = BrownianPaths::simulate(finest, d, config.samples, config.seed)?;
    partitions
        .iter()
        .map(|p| match finest.time_ratio_to(p) {
            Some(1) => Ok(fine.clone()),
            Some(r) => Ok(fine.coarsen(r)?),
            None => Ok(BrownianPaths::simulate(p, d, config.samples, config.seed)?),
        })
        .collect()
}

fn check_ladder(partitions: &[Partition]) -> Result<(), AnalysisError> {
    if partitions.len() < 3 {
        return Err(AnalysisError::TooFewLevels(partitions.len()));
    }
    if partitions.windows(2).any(|w| w[1].mesh_size() >= w[0].mesh_size()) {
        return Err(AnalysisError::InvalidLadder("mesh sizes must strictly decrease".into()));
    }
    Ok(())
}

/// Run the configured algorithm per level and fit the criterion against
/// the closed form.
pub fn convergence_study(
    spec: &ProblemSpec,
    partitions: &[Partition],
    config: &SolverConfig,
) -> Result<ConvergenceStudy, AnalysisError> {
    if spec.reference.is_none() {
        return Err(AnalysisError::MissingReference(spec.name.clone()));
    }
    check_ladder(partitions)?;
    let paths = ladder_paths(partitions, spec.noise_dims, config)?;
    let mut reports = Vec::with_capacity(partitions.len());
    for (p, w) in partitions.iter().zip(&paths) {
        reports.push(streamed_error(spec, p, config, w)?);
    }
    let points: Vec<(f64, f64)> = reports.iter().map(|r| (r.mesh_size, r.total())).collect();
    Ok(ConvergenceStudy {
        fit: fit_loglog(&points)?,
        reports,
    })
}

/// Algorithm one against algorithm two on every level, fitted like a
/// convergence study.
pub fn algorithm_agreement(
    spec: &ProblemSpec,
    partitions: &[Partition],
    config: &SolverConfig,
) -> Result<ConvergenceStudy, AnalysisError> {
    check_ladder(partitions)?;
    let paths = ladder_paths(partitions, spec.noise_dims, config)?;
    let mut reports = Vec::with_capacity(partitions.len());
    for (p, w) in partitions.iter().zip(&paths) {
        reports.push(compare_algorithms_with_paths(spec, p, config, w)?);
    }
    let points: Vec<(f64, f64)> = reports.iter().map(|r| (r.mesh_size, r.total())).collect();
    Ok(ConvergenceStudy {
        fit: fit_loglog(&points)?,
        reports,
    })
}

/// Mean squared time increments of `V` per grid lag.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport {
    /// `(t - s, max over start times and points of E|V(t) - V(s)|^2)`.
    pub lags: Vec<(f64, f64)>,
    pub fit: ConvergenceFit,
}

/// Order-0 increments `V(t_{j+k}) - V(t_j)` for every lag `k`, on a uniform
/// time grid.
pub fn increment_regularity(lattice: &SolutionLattice) -> Result<RegularityReport, AnalysisError> {
    let n0 = lattice.time_steps();
    let dt = lattice.partition.step(1);
    let (q, samples) = (lattice.q, lattice.samples);
    let points = lattice.partition.point_count();
    let mut lags = Vec::with_capacity(n0);
    for k in 1..=n0 {
        let mut worst: f64 = 0.0;
        for j in 0..=n0 - k {
            let (a, b) = (lattice.slice(j), lattice.slice(j + k));
            for pt in 0..points {
                let mut sum = 0.0;
                for s in 0..samples {
                    let (x, y) = (a.v(s, pt, 0), b.v(s, pt, 0));
                    sum += (0..q).map(|r| (y[r] - x[r]).powi(2)).sum::<f64>();
                }
                worst = worst.max(sum / samples as f64);
            }
        }
        lags.push((k as f64 * dt, worst));
    }
    Ok(RegularityReport {
        fit: fit_loglog(&lags)?,
        lags,
    })
}
