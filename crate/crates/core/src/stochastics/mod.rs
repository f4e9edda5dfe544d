//! Brownian ensembles and estimators of conditional expectations given the
//! Brownian state at the start of a step.

mod basis;
mod brownian;
mod estimator;
mod nested;

use std::io::Write;

use thiserror::Error;

pub use basis::PolynomialBasis;
pub use brownian::{simulate_increments, BrownianPaths, NormalStream, DEFAULT_DRAW_BUDGET};
pub use estimator::{
    condexp_regression, ConditionalMoments, EstimatorKind, EstimatorSpec, FitCoefficients,
    RegressionFit, StepContext, TargetMatrix,
};
pub use nested::{condexp_nested, NestedEstimate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StochasticsError {
    #[error("requested {requested} Brownian draws but the budget is {budget}")]
    Capacity { requested: usize, budget: usize },
    #[error("singular regression design (ridge {ridge}); use a positive ridge or a lower degree")]
    SingularDesign { ridge: f64 },
    #[error("{samples} samples cannot support {columns} basis columns")]
    InsufficientSamples { samples: usize, columns: usize },
    #[error("invalid estimator settings: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("failed to write coefficients: {0}")]
    Output(String),
}

/// One fitted coefficient, tagged with where it was used.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientRecord {
    pub step: usize,
    pub component: usize,
    pub key: u64,
    pub exponents: Vec<u32>,
    pub coefficient: f64,
}

/// Write coefficient records as CSV with columns
/// `step, component, key, exponents, coefficient`; exponents are `;`-joined.
pub fn write_coefficients_csv<W: Write>(
    writer: W,
    records: &[CoefficientRecord],
) -> Result<(), StochasticsError> {
    let err = |e: csv::Error| StochasticsError::Output(e.to_string());
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(["step", "component", "key", "exponents", "coefficient"])
        .map_err(err)?;
    for r in records {
        let exps = r
            .exponents
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(";");
        out.write_record([
            r.step.to_string(),
            r.component.to_string(),
            r.key.to_string(),
            exps,
            format!("{:e}", r.coefficient),
        ])
        .map_err(err)?;
    }
    out.flush()
        .map_err(|e| StochasticsError::Output(e.to_string()))
}
