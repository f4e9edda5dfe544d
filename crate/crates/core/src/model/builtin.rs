//! Closed-form test problems. With `s(x) = x_1 + ... + x_p`:
//!
//! | name            | `L`              | `H(x, w)`        | `V(t, x)`                          |
//! |-----------------|------------------|------------------|------------------------------------|
//! | `zero`          | 0                | `h0 + h1 s(x)`   | `H`                                |
//! | `martingale`    | 0                | `s(x) w`         | `s(x) W(t)`                        |
//! | `linear_scalar` | `r V`            | `s(x) w`         | `e^{r(T-t)} s(x) W(t)`             |
//! | `heat`          | `1/2 Lap V`      | `e^{a s(x)}`     | `e^{a s(x) + p a^2 (T-t) / 2}`     |
//!
//! All use `q = d = 1` and `J = 0`.

use std::collections::BTreeMap;
use std::sync::Arc;

use super::{AnalyticSolution, ModelError, OperatorJacobians, ProblemSpec};
use crate::grid::MAX_SPATIAL_DIMS;

pub const BUILTIN_NAMES: [&str; 4] = ["zero", "martingale", "linear_scalar", "heat"];

/// Numeric parameters by name. Every builtin accepts `T` (default 1) and `p`
/// (default 1); `zero` takes `value` and `slope`, `linear_scalar` takes
/// `rate` and `heat` takes `a`.
pub type BuiltinParams = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy)]
enum Kind {
    Zero { value: f64, slope: f64 },
    Martingale,
    Linear { rate: f64 },
    Heat { a: f64 },
}

struct Closed {
    kind: Kind,
    horizon: f64,
    p: usize,
}

fn sum(x: &[f64]) -> f64 {
    x.iter().sum()
}

impl Closed {
    /// `d^index` of the spatial factor times its time/noise multiplier.
    fn value_at(&self, t: f64, x: &[f64], w: f64, index: &[usize]) -> f64 {
        let c: usize = index.iter().sum();
        match self.kind {
            Kind::Zero { value, slope } => match c {
                0 => value + slope * sum(x),
                1 => slope,
                _ => 0.0,
            },
            Kind::Martingale => linear_in_s(x, c) * w,
            Kind::Linear { rate } => (rate * (self.horizon - t)).exp() * linear_in_s(x, c) * w,
            Kind::Heat { a } => {
                let lift = self.p as f64 * a * a * (self.horizon - t) / 2.0;
                a.powi(c as i32) * (a * sum(x) + lift).exp()
            }
        }
    }

    fn integrand_at(&self, t: f64, x: &[f64], index: &[usize]) -> f64 {
        let c: usize = index.iter().sum();
        match self.kind {
            Kind::Martingale => linear_in_s(x, c),
            Kind::Linear { rate } => (rate * (self.horizon - t)).exp() * linear_in_s(x, c),
            Kind::Zero { .. } | Kind::Heat { .. } => 0.0,
        }
    }
}

/// `d^c s(x)` along any multi-index of order `c`.
fn linear_in_s(x: &[f64], c: usize) -> f64 {
    match c {
        0 => sum(x),
        1 => 1.0,
        _ => 0.0,
    }
}

impl AnalyticSolution for Closed {
    fn value(&self, t: f64, x: &[f64], w: &[f64], index: &[usize], out: &mut [f64]) {
        out[0] = self.value_at(t, x, w[0], index);
    }

    fn integrand(&self, t: f64, x: &[f64], _w: &[f64], index: &[usize], out: &mut [f64]) {
        out[0] = self.integrand_at(t, x, index);
    }
}

struct Reader<'a> {
    name: &'a str,
    params: &'a BuiltinParams,
    allowed: Vec<&'static str>,
}

impl Reader<'_> {
    fn get(&mut self, key: &'static str, default: f64) -> Result<f64, ModelError> {
        self.allowed.push(key);
        match self.params.get(key) {
            None => Ok(default),
            Some(v) if v.is_finite() => Ok(*v),
            Some(v) => Err(ModelError::InvalidParameter(format!(
                "{}.{key} must be finite, got {v}",
                self.name
            ))),
        }
    }

    fn finish(self) -> Result<(), ModelError> {
        match self.params.keys().find(|k| !self.allowed.contains(&k.as_str())) {
            Some(k) => Err(ModelError::InvalidParameter(format!(
                "unknown parameter {k:?} for {}; expected one of {:?}",
                self.name, self.allowed
            ))),
            None => Ok(()),
        }
    }
}

pub fn builtin_problem(name: &str, params: &BuiltinParams) -> Result<ProblemSpec, ModelError> {
    if !BUILTIN_NAMES.contains(&name) {
        return Err(ModelError::UnknownProblem(name.to_string()));
    }
    let mut reader = Reader {
        name,
        params,
        allowed: Vec::new(),
    };
    let horizon = reader.get("T", 1.0)?;
    if horizon <= 0.0 {
        return Err(ModelError::InvalidParameter(format!("{name}.T must be positive")));
    }
    let p_raw = reader.get("p", 1.0)?;
    if p_raw.fract() != 0.0 || !(1.0..=MAX_SPATIAL_DIMS as f64).contains(&p_raw) {
        return Err(ModelError::InvalidParameter(format!(
            "{name}.p must be an integer in 1..={MAX_SPATIAL_DIMS}, got {p_raw}"
        )));
    }
    let p = p_raw as usize;
    let kind = match name {
        "zero" => Kind::Zero {
            value: reader.get("value", 1.0)?,
            slope: reader.get("slope", 0.0)?,
        },
        "martingale" => Kind::Martingale,
        "linear_scalar" => Kind::Linear {
            rate: reader.get("rate", 1.0)?,
        },
        _ => Kind::Heat {
            a: reader.get("a", 1.0)?,
        },
    };
    reader.finish()?;

    let closed = Arc::new(Closed { kind, horizon, p });
    let terminal = {
        let closed = closed.clone();
        Arc::new(move |x: &[f64], w: &[f64], out: &mut [f64]| {
            out[0] = closed.value_at(closed.horizon, x, w[0], &vec![0; x.len()]);
        })
    };
    let spec = ProblemSpec::new(name, p, 1, 1, horizon, terminal);
    let spec = match kind {
        Kind::Zero { .. } => spec
            .with_terminal_gradient(Arc::new(|_, _, out| out[0] = 0.0))
            .with_jacobians(Arc::new(|_, jac: &mut OperatorJacobians| jac.clear()))
            .with_lipschitz(vec![0.0]),
        Kind::Martingale => spec
            .with_terminal_gradient(Arc::new(|x, _, out| out[0] = sum(x)))
            .with_jacobians(Arc::new(|_, jac: &mut OperatorJacobians| jac.clear()))
            .with_lipschitz(vec![0.0]),
        Kind::Linear { rate } => spec
            .with_driver(Arc::new(move |a, out| out[0] = rate * a.value()[0]))
            .with_terminal_gradient(Arc::new(|x, _, out| out[0] = sum(x)))
            .with_jacobians(Arc::new(move |_, jac: &mut OperatorJacobians| {
                jac.clear();
                *jac.driver_v_mut(0, 0, 0) = rate;
            }))
            .with_lipschitz(vec![rate.abs()]),
        Kind::Heat { .. } => spec
            .with_orders(2, 0, 0)
            .with_driver(Arc::new(move |a, out| {
                out[0] = 0.5 * (0..p).map(|l| a.second(l)[0]).sum::<f64>();
            }))
            .with_terminal_gradient(Arc::new(|_, _, out| out[0] = 0.0))
            .with_jacobians(Arc::new(move |a, jac: &mut OperatorJacobians| {
                jac.clear();
                for l in 0..p {
                    let mut index = vec![0; p];
                    index[l] = 2;
                    let e = a.layout().position(&index).expect("order-2 entries present");
                    *jac.driver_v_mut(0, e, 0) = 0.5;
                }
            }))
            .with_lipschitz(vec![0.5 * p as f64]),
    };
    Ok(spec.with_reference(closed))
}
