//! Problem definitions: dimensions, derivative orders, the operators `L` and
//! `J`, the terminal field `H` and optional closed-form solutions.
//!
//! Operators are plain callbacks over [`OperatorArguments`]. They must be
//! deterministic and re-entrant, since the solver calls them concurrently.

mod arguments;
mod builtin;
mod jacobian;
mod lipschitz;
mod transform;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::grid::GridError;

pub use arguments::{OperatorArguments, OwnedArguments};
pub use builtin::{builtin_problem, BuiltinParams, BUILTIN_NAMES};
pub use jacobian::{operator_jacobians, OperatorJacobians, DEFAULT_JACOBIAN_STEP};
pub use lipschitz::{probe_lipschitz, LipschitzReport, TrialPair};
pub use transform::time_homogenize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{operator} produced a non-finite value at t = {t}, x = {x:?}")]
    NonFinite {
        operator: &'static str,
        t: f64,
        x: Vec<f64>,
    },
    #[error("non-finite derivative of {operator} at t = {t}, x = {x:?}")]
    Differentiation {
        operator: &'static str,
        t: f64,
        x: Vec<f64>,
    },
    #[error("unknown problem {0:?}; expected one of zero, martingale, linear_scalar, heat")]
    UnknownProblem(String),
    #[error("invalid problem parameter: {0}")]
    InvalidParameter(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// `L(t, x, V-stack, V̄-stack)` written into a `q`-vector, or
/// `J(t, x, V-stack)` written into a row-major `q x d` matrix.
pub type OperatorFn = Arc<dyn Fn(&OperatorArguments<'_>, &mut [f64]) + Send + Sync>;

/// `H(x, w)` into a `q`-vector, or its gradient in `w` into `q x d`.
pub type TerminalFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Exact partial derivatives of `L` and `J` with respect to their stack
/// arguments.
pub type JacobianFn = Arc<dyn Fn(&OperatorArguments<'_>, &mut OperatorJacobians) + Send + Sync>;

/// A closed-form solution `(V, V̄)` as a function of `(t, x, W(t))`.
pub trait AnalyticSolution: Send + Sync {
    /// `d^index V(t, x)` into a `q`-vector.
    fn value(&self, t: f64, x: &[f64], w: &[f64], index: &[usize], out: &mut [f64]);
    /// `d^index V̄(t, x)` into a row-major `q x d` matrix.
    fn integrand(&self, t: f64, x: &[f64], w: &[f64], index: &[usize], out: &mut [f64]);
}

#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    /// Spatial dimension `p`.
    pub space_dims: usize,
    /// Number of solution components `q`.
    pub components: usize,
    /// Brownian dimension `d`.
    pub noise_dims: usize,
    /// Orders of `V` and `V̄` read by `L`, and of `V` read by `J`.
    pub k: usize,
    pub m: usize,
    pub n: usize,
    /// Terminal time the terminal field and reference refer to.
    pub horizon: f64,
    pub driver: OperatorFn,
    pub diffusion: OperatorFn,
    pub terminal: TerminalFn,
    pub terminal_gradient: Option<TerminalFn>,
    pub reference: Option<Arc<dyn AnalyticSolution>>,
    pub jacobians: Option<JacobianFn>,
    /// Optional Lipschitz constants `K_{D,c}` indexed by `c`.
    pub lipschitz: Option<Vec<f64>>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("p", &self.space_dims)
            .field("q", &self.components)
            .field("d", &self.noise_dims)
            .field("orders", &(self.k, self.m, self.n))
            .field("horizon", &self.horizon)
            .field("reference", &self.reference.is_some())
            .field("jacobians", &self.jacobians.is_some())
            .finish_non_exhaustive()
    }
}

impl ProblemSpec {
    /// A spec with `L = J = 0`; attach operators with the `with_*` methods.
    pub fn new(
        name: impl Into<String>,
        space_dims: usize,
        components: usize,
        noise_dims: usize,
        horizon: f64,
        terminal: TerminalFn,
    ) -> Self {
        Self {
            name: name.into(),
            space_dims,
            components,
            noise_dims,
            k: 0,
            m: 0,
            n: 0,
            horizon,
            driver: Arc::new(|_, out| out.fill(0.0)),
            diffusion: Arc::new(|_, out| out.fill(0.0)),
            terminal,
            terminal_gradient: None,
            reference: None,
            jacobians: None,
            lipschitz: None,
        }
    }

    pub fn with_orders(mut self, k: usize, m: usize, n: usize) -> Self {
        self.k = k;
        self.m = m;
        self.n = n;
        self
    }

    pub fn with_driver(mut self, driver: OperatorFn) -> Self {
        self.driver = driver;
        self
    }

    pub fn with_diffusion(mut self, diffusion: OperatorFn) -> Self {
        self.diffusion = diffusion;
        self
    }

    pub fn with_terminal_gradient(mut self, gradient: TerminalFn) -> Self {
        self.terminal_gradient = Some(gradient);
        self
    }

    pub fn with_reference(mut self, reference: Arc<dyn AnalyticSolution>) -> Self {
        self.reference = Some(reference);
        self
    }

    pub fn with_jacobians(mut self, jacobians: JacobianFn) -> Self {
        self.jacobians = Some(jacobians);
        self
    }

    pub fn with_lipschitz(mut self, constants: Vec<f64>) -> Self {
        self.lipschitz = Some(constants);
        self
    }

    /// `M = max(k, m, n)`.
    pub fn max_order(&self) -> usize {
        self.k.max(self.m).max(self.n)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.space_dims == 0 || self.components == 0 || self.noise_dims == 0 {
            return Err(ModelError::InvalidParameter(
                "p, q and d must all be at least 1".into(),
            ));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(ModelError::InvalidParameter(format!(
                "terminal time must be positive, got {}",
                self.horizon
            )));
        }
        Ok(())
    }

    /// `dH/dw` at `(x, w)`, by central differences when no gradient is given.
    pub fn terminal_gradient_at(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        if let Some(g) = &self.terminal_gradient {
            g(x, w, out);
            return;
        }
        let (q, d) = (self.components, self.noise_dims);
        let mut wp = w.to_vec();
        let mut hp = vec![0.0; q];
        let mut hm = vec![0.0; q];
        for i in 0..d {
            let h = DEFAULT_JACOBIAN_STEP * w[i].abs().max(1.0);
            wp[i] = w[i] + h;
            (self.terminal)(x, &wp, &mut hp);
            wp[i] = w[i] - h;
            (self.terminal)(x, &wp, &mut hm);
            wp[i] = w[i];
            for r in 0..q {
                out[r * d + i] = (hp[r] - hm[r]) / (2.0 * h);
            }
        }
    }
}

fn check_finite(operator: &'static str, args: &OperatorArguments<'_>, out: &[f64]) -> Result<(), ModelError> {
    if out.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite {
            operator,
            t: args.t,
            x: args.x.to_vec(),
        })
    }
}

/// `L(t, x, V, V̄)` as a `q`-vector.
pub fn evaluate_driver(spec: &ProblemSpec, args: &OperatorArguments<'_>) -> Result<Vec<f64>, ModelError> {
    let mut out = vec![0.0; spec.components];
    evaluate_driver_into(spec, args, &mut out)?;
    Ok(out)
}

pub fn evaluate_driver_into(
    spec: &ProblemSpec,
    args: &OperatorArguments<'_>,
    out: &mut [f64],
) -> Result<(), ModelError> {
    (spec.driver)(args, out);
    check_finite("driver", args, out)
}

/// `J(t, x, V)` as a row-major `q x d` matrix.
pub fn evaluate_diffusion_driver(
    spec: &ProblemSpec,
    args: &OperatorArguments<'_>,
) -> Result<Vec<f64>, ModelError> {
    let mut out = vec![0.0; spec.components * spec.noise_dims];
    evaluate_diffusion_into(spec, args, &mut out)?;
    Ok(out)
}

pub fn evaluate_diffusion_into(
    spec: &ProblemSpec,
    args: &OperatorArguments<'_>,
    out: &mut [f64],
) -> Result<(), ModelError> {
    (spec.diffusion)(args, out);
    check_finite("diffusion driver", args, out)
}
