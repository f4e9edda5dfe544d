use std::sync::Arc;

use super::{AnalyticSolution, OperatorArguments, ProblemSpec};

/// Append a clock component so time-dependent operators become autonomous.
///
/// The result has `q + 1` components. Component 0 has terminal value `T`,
/// driver `-1` and zero diffusion, so it solves `V^0(t, x) = t`. The other
/// components evaluate the original operators with `t` replaced by the
/// current value of component 0.
pub fn time_homogenize(spec: &ProblemSpec) -> ProblemSpec {
    let (q, d) = (spec.components, spec.noise_dims);
    let horizon = spec.horizon;
    let inner = Arc::new(spec.clone());

    let driver = {
        let inner = inner.clone();
        Arc::new(move |a: &OperatorArguments<'_>, out: &mut [f64]| {
            out[0] = -1.0;
            let (v, vbar) = strip_clock(a, q, d);
            let sub = OperatorArguments::new(a.value()[0], a.x, a.layout(), q, d, &v, &vbar);
            (inner.driver)(&sub, &mut out[1..]);
        })
    };
    let diffusion = {
        let inner = inner.clone();
        Arc::new(move |a: &OperatorArguments<'_>, out: &mut [f64]| {
            out[..d].fill(0.0);
            let (v, vbar) = strip_clock(a, q, d);
            let sub = OperatorArguments::new(a.value()[0], a.x, a.layout(), q, d, &v, &vbar);
            (inner.diffusion)(&sub, &mut out[d..]);
        })
    };
    let terminal = {
        let inner = inner.clone();
        Arc::new(move |x: &[f64], w: &[f64], out: &mut [f64]| {
            out[0] = horizon;
            (inner.terminal)(x, w, &mut out[1..]);
        })
    };
    let gradient = {
        let inner = inner.clone();
        Arc::new(move |x: &[f64], w: &[f64], out: &mut [f64]| {
            out[..d].fill(0.0);
            inner.terminal_gradient_at(x, w, &mut out[d..]);
        })
    };

    let mut out = ProblemSpec::new(
        format!("{}+clock", spec.name),
        spec.space_dims,
        q + 1,
        d,
        horizon,
        terminal,
    )
    .with_orders(spec.k, spec.m, spec.n)
    .with_driver(driver)
    .with_diffusion(diffusion)
    .with_terminal_gradient(gradient);
    out.lipschitz = spec.lipschitz.clone();
    if let Some(reference) = &spec.reference {
        out = out.with_reference(Arc::new(ClockReference {
            inner: reference.clone(),
            q,
            d,
        }));
    }
    out
}

/// Copies of the `V` and `V̄` stacks without component 0.
fn strip_clock(a: &OperatorArguments<'_>, q: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let v = a.v_values().chunks(q + 1).flat_map(|row| row[1..].iter().copied()).collect();
    let vbar = a
        .vbar_values()
        .chunks((q + 1) * d)
        .flat_map(|row| row[d..].iter().copied())
        .collect();
    (v, vbar)
}

struct ClockReference {
    inner: Arc<dyn AnalyticSolution>,
    q: usize,
    d: usize,
}

impl AnalyticSolution for ClockReference {
    fn value(&self, t: f64, x: &[f64], w: &[f64], index: &[usize], out: &mut [f64]) {
        out[0] = if index.iter().all(|&i| i == 0) { t } else { 0.0 };
        self.inner.value(t, x, w, index, &mut out[1..=self.q]);
    }

    fn integrand(&self, t: f64, x: &[f64], w: &[f64], index: &[usize], out: &mut [f64]) {
        out[..self.d].fill(0.0);
        self.inner.integrand(t, x, w, index, &mut out[self.d..]);
    }
}
