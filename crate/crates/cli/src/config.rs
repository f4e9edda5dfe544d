//! Experiment configuration: JSON parsing, validation and default
//! materialization.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use bspde::grid::{BoundaryRule, Partition};
use bspde::model::{builtin_problem, ProblemSpec};
use bspde::solver::{Algorithm, SolverConfig};
use bspde::stochastics::EstimatorSpec;

/// Bad input, reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder: Option<LadderConfig>,
    pub solver: SolverSection,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n0: usize,
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl PartitionConfig {
    pub fn build(&self) -> anyhow::Result<Partition> {
        Partition::uniform(self.horizon, self.n0, &self.edges, &self.counts)
            .map_err(|e| invalid(format!("partition: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    pub base: PartitionConfig,
    pub levels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    #[default]
    One,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryName {
    #[default]
    Backward,
    NegatedBackward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorName {
    Analytic,
    #[default]
    Regression,
    Nested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default)]
    pub algorithm: AlgorithmName,
    /// Highest stored derivative order; defaults to the problem's own.
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub max_order: Option<usize>,
    pub samples: usize,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default = "default_fp_tolerance")]
    pub fp_tolerance: f64,
    #[serde(default = "default_fp_max_iters")]
    pub fp_max_iters: usize,
    #[serde(default)]
    pub boundary: BoundaryName,
    #[serde(default)]
    pub record_coefficients: bool,
}

fn default_fp_tolerance() -> f64 {
    1e-10
}

fn default_fp_max_iters() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    #[serde(default)]
    pub kind: EstimatorName,
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
    #[serde(default = "default_inner")]
    pub inner: usize,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            kind: EstimatorName::default(),
            degree: default_degree(),
            ridge: None,
            inner: default_inner(),
        }
    }
}

fn default_degree() -> usize {
    3
}

fn default_inner() -> usize {
    100
}

/// Parse a config, naming the JSON path of the first offending field.
pub fn parse(text: &str) -> anyhow::Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        invalid(format!("config error at `{path}`: {}", e.inner()))
    })
}

pub fn load(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("in {}", path.display()))
}

/// Everything a command needs, built and checked before any compute.
pub struct Resolved {
    pub config: ExperimentConfig,
    pub spec: ProblemSpec,
    pub solver: SolverConfig,
}

impl Resolved {
    pub fn partition(&self) -> anyhow::Result<Option<Partition>> {
        self.config.partition.as_ref().map(PartitionConfig::build).transpose()
    }

    pub fn ladder(&self) -> anyhow::Result<Option<Vec<Partition>>> {
        let Some(ladder) = &self.config.ladder else {
            return Ok(None);
        };
        let base = ladder.base.build()?;
        bspde::analysis::refinement_ladder(&base, ladder.levels)
            .map(Some)
            .map_err(|e| invalid(format!("ladder: {e}")))
    }
}

/// Apply command-line overrides, fill every default and build the library
/// objects. The returned config reproduces the run when fed back in.
pub fn resolve(mut config: ExperimentConfig, seed: Option<u64>, literal_stencil: bool) -> anyhow::Result<Resolved> {
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if literal_stencil {
        config.solver.boundary = BoundaryName::NegatedBackward;
    }
    let horizon = match (&config.partition, &config.ladder) {
        (Some(p), None) => p.horizon,
        (None, Some(l)) => l.base.horizon,
        (Some(_), Some(_)) => return Err(invalid("config declares both `partition` and `ladder`; keep one")),
        (None, None) => return Err(invalid("config needs a `partition` or a `ladder`")),
    };
    match config.problem.params.get("T") {
        None => {
            config.problem.params.insert("T".into(), horizon);
        }
        Some(&t) if t != horizon => {
            return Err(invalid(format!(
                "problem.params.T = {t} disagrees with the partition horizon {horizon}"
            )))
        }
        Some(_) => {}
    }
    let spec = builtin_problem(&config.problem.name, &config.problem.params)
        .map_err(|e| invalid(format!("problem: {e}")))?;

    let s = &mut config.solver;
    let max_order = *s.max_order.get_or_insert(spec.max_order());
    let mut estimator = match s.estimator.kind {
        EstimatorName::Analytic => EstimatorSpec::analytic(s.estimator.degree),
        EstimatorName::Regression => EstimatorSpec::regression(s.estimator.degree),
        EstimatorName::Nested => EstimatorSpec::nested(s.estimator.degree, s.estimator.inner),
    };
    estimator.inner = s.estimator.inner;
    let ridge = *s.estimator.ridge.get_or_insert(estimator.effective_ridge(s.samples));
    estimator.ridge = Some(ridge);

    let solver = SolverConfig {
        algorithm: match s.algorithm {
            AlgorithmName::One => Algorithm::One,
            AlgorithmName::Two => Algorithm::Two,
        },
        max_order: Some(max_order),
        samples: s.samples,
        estimator,
        fp_tolerance: s.fp_tolerance,
        fp_max_iters: s.fp_max_iters,
        seed: config.seed,
        boundary: match s.boundary {
            BoundaryName::Backward => BoundaryRule::Backward,
            BoundaryName::NegatedBackward => BoundaryRule::NegatedBackward,
        },
        record_coefficients: s.record_coefficients,
    };
    if solver.samples == 0 {
        return Err(invalid("solver.samples must be at least 1"));
    }
    if max_order < spec.max_order() {
        return Err(invalid(format!(
            "solver.M = {max_order} is below the order {} the problem reads",
            spec.max_order()
        )));
    }
    solver
        .validate(spec.noise_dims, solver.samples)
        .map_err(|e| invalid(format!("solver: {e}")))?;

    let resolved = Resolved { config, spec, solver };
    // surface partition and ladder errors before any compute
    resolved.partition()?;
    resolved.ladder()?;
    Ok(resolved)
}
