//! Error criterion, convergence fits and Malliavin diagnostics.

mod convergence;
mod error;
mod malliavin;

use thiserror::Error;

use crate::grid::GridError;
use crate::model::ModelError;
use crate::solver::SolverError;
use crate::stochastics::StochasticsError;

pub use convergence::{
    algorithm_agreement, convergence_study, fit_loglog, increment_regularity, refinement_ladder, ConvergenceFit,
    ConvergenceStudy, RegularityReport, write_error_csv, DEGENERATE_LEVEL,
};
pub use error::{
    compare_algorithms, compare_algorithms_with_paths, discrete_error, point_map, streamed_error, ErrorAccumulator,
    ErrorReport, Reference,
};
pub use malliavin::{
    check_representation_identity, representation_check, solve_malliavin, MalliavinLattice, MalliavinSystem,
    RepresentationReport, RepresentationRow,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("problem `{0}` has no closed-form reference")]
    MissingReference(String),
    #[error("a convergence fit needs at least 3 levels, got {0}")]
    TooFewLevels(usize),
    #[error("invalid refinement ladder: {0}")]
    InvalidLadder(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("θ grid mismatch: {0}")]
    ThetaMismatch(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Stochastics(#[from] StochasticsError),
    #[error("failed to write output: {0}")]
    Output(String),
}

impl AnalysisError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            AnalysisError::Solver(e) => e.is_numerical(),
            AnalysisError::Model(_) => true,
            _ => false,
        }
    }
}
