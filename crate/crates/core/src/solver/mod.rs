//! The two backward schemes over a Brownian ensemble.
//!
//! Both walk from `t_{n0}` down to `t_0`. The explicit scheme sets
//! `V(t_{j-1}) = E[V(t_j) + L(t_j) dt | F_{t_{j-1}}]` and
//! `V̄(t_{j-1}) = E[(V(t_j) + L(t_j) dt) dW_j | F_{t_{j-1}}] / dt + J(t_{j-1}, V(t_{j-1}))`.
//! The implicit scheme solves `V = E[V(t_j)] + L(t_{j-1}, V, V̄) dt` by
//! fixed-point iteration, with `V̄ = E[V(t_j) dW_j] / dt + J(t_{j-1}, V)`.
//! Derivative stacks are rebuilt from the order-0 fields after each update.

mod lattice;
mod sweep;

use std::fmt;

use thiserror::Error;

use crate::grid::{BoundaryRule, GridError, Partition};
use crate::model::{ModelError, ProblemSpec};
use crate::stochastics::{BrownianPaths, EstimatorSpec, StochasticsError};

pub use lattice::{SolutionLattice, TimeSlice};
pub use sweep::{BackwardOperator, BackwardSweep, EvalContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Algorithm {
    /// Explicit scheme.
    #[default]
    One,
    /// Implicit scheme with a fixed-point inner loop.
    Two,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::One => "one",
            Algorithm::Two => "two",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("operator evaluation failed at time index {time_index}: {source}")]
    Operator {
        time_index: usize,
        #[source]
        source: ModelError,
    },
    #[error("conditional expectation failed at step j0 = {step}, order {order}: {source}")]
    Estimator {
        step: usize,
        order: usize,
        #[source]
        source: StochasticsError,
    },
    #[error("solution diverged at time index {step}, sample {sample}, x = {x:?}")]
    Divergence { step: usize, sample: usize, x: Vec<f64> },
    #[error(
        "fixed-point iteration did not converge at step j0 = {step} after {iterations} iterations \
         (last residual {residual:e}); shrink the time step so the implicit map contracts"
    )]
    NonConvergence {
        step: usize,
        iterations: usize,
        residual: f64,
    },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Stochastics(#[from] StochasticsError),
    #[error("failed to write output: {0}")]
    Output(String),
}

impl SolverError {
    /// Divergence, non-convergence or a failing operator/estimator, as
    /// opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SolverError::Operator { .. }
                | SolverError::Estimator { .. }
                | SolverError::Divergence { .. }
                | SolverError::NonConvergence { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    /// Highest stored derivative order; `None` uses the problem's `max(k, m, n)`.
    pub max_order: Option<usize>,
    pub samples: usize,
    pub estimator: EstimatorSpec,
    pub fp_tolerance: f64,
    pub fp_max_iters: usize,
    pub seed: u64,
    pub boundary: BoundaryRule,
    /// Keep fitted estimator coefficients on each slice.
    pub record_coefficients: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::One,
            max_order: None,
            samples: 1000,
            estimator: EstimatorSpec::default(),
            fp_tolerance: 1e-10,
            fp_max_iters: 50,
            seed: 0,
            boundary: BoundaryRule::Backward,
            record_coefficients: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, noise_dims: usize, samples: usize) -> Result<(), SolverError> {
        if !(self.fp_tolerance > 0.0) {
            return Err(SolverError::InvalidConfig("fp_tolerance must be positive".into()));
        }
        if self.fp_max_iters == 0 {
            return Err(SolverError::InvalidConfig("fp_max_iters must be at least 1".into()));
        }
        self.estimator.validate(noise_dims)?;
        let columns = self.estimator.columns(noise_dims);
        if samples < columns {
            return Err(SolverError::InvalidConfig(format!(
                "{samples} samples cannot support a {columns}-column estimator basis"
            )));
        }
        Ok(())
    }
}

/// Simulate paths for `config` and run its algorithm.
pub fn solve(spec: &ProblemSpec, partition: &Partition, config: &SolverConfig) -> Result<SolutionLattice, SolverError> {
    spec.validate().map_err(|e| SolverError::InvalidConfig(e.to_string()))?;
    let paths = BrownianPaths::simulate(partition, spec.noise_dims, config.samples, config.seed)?;
    solve_with_paths(spec, partition, config, &paths)
}

pub fn solve_algorithm_one(
    spec: &ProblemSpec,
    partition: &Partition,
    config: &SolverConfig,
) -> Result<SolutionLattice, SolverError> {
    require(config, Algorithm::One)?;
    solve(spec, partition, config)
}

pub fn solve_algorithm_two(
    spec: &ProblemSpec,
    partition: &Partition,
    config: &SolverConfig,
) -> Result<SolutionLattice, SolverError> {
    require(config, Algorithm::Two)?;
    solve(spec, partition, config)
}

fn require(config: &SolverConfig, algorithm: Algorithm) -> Result<(), SolverError> {
    if config.algorithm != algorithm {
        return Err(SolverError::InvalidConfig(format!(
            "configuration selects algorithm {} but algorithm {algorithm} was requested",
            config.algorithm
        )));
    }
    Ok(())
}

/// Run the configured algorithm on given paths and keep every slice.
pub fn solve_with_paths<O: BackwardOperator + ?Sized>(
    op: &O,
    partition: &Partition,
    config: &SolverConfig,
    paths: &BrownianPaths,
) -> Result<SolutionLattice, SolverError> {
    let sweep = BackwardSweep::new(op, partition, config, paths)?;
    let layout = sweep.layout().clone();
    let mut slices = Vec::with_capacity(partition.time_steps() + 1);
    sweep.run(|slice| {
        slices.push(slice.clone());
        Ok(())
    })?;
    SolutionLattice::from_slices(config.algorithm, partition.clone(), layout, slices)
}

/// The terminal slice: `H(x, W(T))` per sample with its stencil stack, and
/// `V̄ = 0`.
pub fn terminal_stage(
    spec: &ProblemSpec,
    partition: &Partition,
    paths: &BrownianPaths,
) -> Result<TimeSlice, SolverError> {
    let config = SolverConfig {
        samples: paths.samples(),
        estimator: EstimatorSpec::analytic(0),
        ..SolverConfig::default()
    };
    Ok(BackwardSweep::new(spec, partition, &config, paths)?.into_current())
}
