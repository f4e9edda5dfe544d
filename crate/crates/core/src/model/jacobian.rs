use super::{ModelError, OperatorArguments, OwnedArguments, ProblemSpec};
use crate::grid::StackLayout;

/// Relative step of the central differences, scaled by `max(1, |arg|)`.
pub const DEFAULT_JACOBIAN_STEP: f64 = 1e-6;

/// Partial derivatives of `L` and `J` with respect to each stack entry.
///
/// * `driver_v`: `[output r][entry e < entries(k)][component s]`
/// * `driver_vbar`: `[output r][entry e < entries(m)][component s of q x d]`
/// * `diffusion_v`: `[output r*d+i][entry e < entries(n)][component s]`
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorJacobians {
    pub q: usize,
    pub d: usize,
    pub driver_entries: usize,
    pub driver_bar_entries: usize,
    pub diffusion_entries: usize,
    pub driver_v: Vec<f64>,
    pub driver_vbar: Vec<f64>,
    pub diffusion_v: Vec<f64>,
}

impl OperatorJacobians {
    pub fn zeros(spec: &ProblemSpec, layout: &StackLayout) -> Self {
        let (q, d) = (spec.components, spec.noise_dims);
        let le = layout.entries_through(spec.k);
        let lb = layout.entries_through(spec.m);
        let je = layout.entries_through(spec.n);
        Self {
            q,
            d,
            driver_entries: le,
            driver_bar_entries: lb,
            diffusion_entries: je,
            driver_v: vec![0.0; q * le * q],
            driver_vbar: vec![0.0; q * lb * q * d],
            diffusion_v: vec![0.0; q * d * je * q],
        }
    }

    pub fn clear(&mut self) {
        self.driver_v.fill(0.0);
        self.driver_vbar.fill(0.0);
        self.diffusion_v.fill(0.0);
    }

    pub fn driver_v(&self, r: usize, e: usize, s: usize) -> f64 {
        self.driver_v[(r * self.driver_entries + e) * self.q + s]
    }

    pub fn driver_v_mut(&mut self, r: usize, e: usize, s: usize) -> &mut f64 {
        &mut self.driver_v[(r * self.driver_entries + e) * self.q + s]
    }

    pub fn driver_vbar(&self, r: usize, e: usize, s: usize) -> f64 {
        self.driver_vbar[(r * self.driver_bar_entries + e) * self.q * self.d + s]
    }

    pub fn driver_vbar_mut(&mut self, r: usize, e: usize, s: usize) -> &mut f64 {
        let w = self.q * self.d;
        &mut self.driver_vbar[(r * self.driver_bar_entries + e) * w + s]
    }

    pub fn diffusion_v(&self, ri: usize, e: usize, s: usize) -> f64 {
        self.diffusion_v[(ri * self.diffusion_entries + e) * self.q + s]
    }

    pub fn diffusion_v_mut(&mut self, ri: usize, e: usize, s: usize) -> &mut f64 {
        &mut self.diffusion_v[(ri * self.diffusion_entries + e) * self.q + s]
    }

    fn all_finite(&self) -> bool {
        self.driver_v
            .iter()
            .chain(&self.driver_vbar)
            .chain(&self.diffusion_v)
            .all(|v| v.is_finite())
    }
}

/// Jacobians of `L` and `J` at `args`: the spec's analytic ones when
/// available, central differences with step `h max(1, |arg|)` otherwise.
pub fn operator_jacobians(
    spec: &ProblemSpec,
    args: &OperatorArguments<'_>,
    h: f64,
) -> Result<OperatorJacobians, ModelError> {
    let layout = args.layout();
    let mut jac = OperatorJacobians::zeros(spec, layout);
    let needed_v = jac.driver_entries.max(jac.diffusion_entries);
    if args.v_entries() < needed_v || args.vbar_entries() < jac.driver_bar_entries {
        return Err(ModelError::ShapeMismatch(format!(
            "arguments hold {} V and {} V̄ entries, operators need {} and {}",
            args.v_entries(),
            args.vbar_entries(),
            needed_v,
            jac.driver_bar_entries
        )));
    }
    if let Some(analytic) = &spec.jacobians {
        analytic(args, &mut jac);
    } else {
        finite_differences(spec, args, h, &mut jac);
    }
    if !jac.all_finite() {
        return Err(ModelError::Differentiation {
            operator: "driver or diffusion driver",
            t: args.t,
            x: args.x.to_vec(),
        });
    }
    Ok(jac)
}

fn finite_differences(spec: &ProblemSpec, args: &OperatorArguments<'_>, h: f64, jac: &mut OperatorJacobians) {
    let (q, d) = (spec.components, spec.noise_dims);
    let layout = args.layout();
    let mut work = OwnedArguments::from_borrowed(args);
    let mut plus = vec![0.0; q * d];
    let mut minus = vec![0.0; q * d];

    // d/dV for both operators
    for e in 0..jac.driver_entries.max(jac.diffusion_entries) {
        for s in 0..q {
            let idx = e * q + s;
            let base = work.v[idx];
            let step = h * base.abs().max(1.0);
            for (sign, out) in [(1.0, &mut plus), (-1.0, &mut minus)] {
                work.v[idx] = base + sign * step;
                let view = work.view(layout, q, d);
                if e < jac.driver_entries {
                    (spec.driver)(&view, &mut out[..q]);
                }
            }
            if e < jac.driver_entries {
                for r in 0..q {
                    *jac.driver_v_mut(r, e, s) = (plus[r] - minus[r]) / (2.0 * step);
                }
            }
            if e < jac.diffusion_entries {
                for (sign, out) in [(1.0, &mut plus), (-1.0, &mut minus)] {
                    work.v[idx] = base + sign * step;
                    (spec.diffusion)(&work.view(layout, q, d), out);
                }
                for ri in 0..q * d {
                    *jac.diffusion_v_mut(ri, e, s) = (plus[ri] - minus[ri]) / (2.0 * step);
                }
            }
            work.v[idx] = base;
        }
    }

    // d/dV̄ for the driver
    for e in 0..jac.driver_bar_entries {
        for s in 0..q * d {
            let idx = e * q * d + s;
            let base = work.vbar[idx];
            let step = h * base.abs().max(1.0);
            for (sign, out) in [(1.0, &mut plus), (-1.0, &mut minus)] {
                work.vbar[idx] = base + sign * step;
                (spec.driver)(&work.view(layout, q, d), &mut out[..q]);
            }
            for r in 0..q {
                *jac.driver_vbar_mut(r, e, s) = (plus[r] - minus[r]) / (2.0 * step);
            }
            work.vbar[idx] = base;
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::model::{builtin_problem, BuiltinParams, TerminalFn};

    fn numeric(spec: &ProblemSpec) -> ProblemSpec {
        let mut s = spec.clone();
        s.jacobians = None;
        s
    }

    #[test]
    fn linear_driver() {
        let spec = builtin_problem("linear_scalar", &BuiltinParams::new()).unwrap();
        let layout = StackLayout::new(1, 0).unwrap();
        let args = OperatorArguments::new(0.0, &[0.5], &layout, 1, 1, &[2.0], &[1.0]);
        for s in [spec.clone(), numeric(&spec)] {
            let jac = operator_jacobians(&s, &args, DEFAULT_JACOBIAN_STEP).unwrap();
            assert!((jac.driver_v(0, 0, 0) - 1.0).abs() < 1e-8);
            assert_eq!(jac.driver_vbar(0, 0, 0), 0.0);
            assert_eq!(jac.diffusion_v(0, 0, 0), 0.0);
        }
    }

    #[test]
    fn heat_driver() {
        let spec = builtin_problem("heat", &BuiltinParams::new()).unwrap();
        let layout = StackLayout::new(1, 2).unwrap();
        let v = [1.0, 2.0, 4.0];
        let args = OperatorArguments::new(0.0, &[0.5], &layout, 1, 1, &v, &[0.0; 3]);
        for s in [spec.clone(), numeric(&spec)] {
            let jac = operator_jacobians(&s, &args, DEFAULT_JACOBIAN_STEP).unwrap();
            assert!((jac.driver_v(0, 2, 0) - 0.5).abs() < 1e-8);
            assert!(jac.driver_v(0, 0, 0).abs() < 1e-8);
            assert!(jac.driver_v(0, 1, 0).abs() < 1e-8);
        }
    }

    #[test]
    fn product_driver() {
        let term: TerminalFn = Arc::new(|_, _, out| out[0] = 0.0);
        let spec = ProblemSpec::new("prod", 1, 1, 1, 1.0, term)
            .with_driver(Arc::new(|a, out| out[0] = a.value()[0] * a.integrand()[0]));
        let layout = StackLayout::new(1, 0).unwrap();
        let args = OperatorArguments::new(0.0, &[0.5], &layout, 1, 1, &[2.0], &[3.0]);
        let jac = operator_jacobians(&spec, &args, DEFAULT_JACOBIAN_STEP).unwrap();
        assert!((jac.driver_v(0, 0, 0) - 3.0).abs() < 1e-8);
        assert!((jac.driver_vbar(0, 0, 0) - 2.0).abs() < 1e-8);
    }

    #[test]
    fn analytic_matches_numeric_on_builtins() {
        for name in crate::model::BUILTIN_NAMES {
            let spec = builtin_problem(name, &BuiltinParams::new()).unwrap();
            let layout = StackLayout::new(1, spec.max_order()).unwrap();
            let e = layout.len();
            let v: Vec<f64> = (0..e).map(|i| 0.3 + i as f64).collect();
            let vb: Vec<f64> = (0..e).map(|i| -0.2 * i as f64).collect();
            let args = OperatorArguments::new(0.1, &[0.4], &layout, 1, 1, &v, &vb);
            let a = operator_jacobians(&spec, &args, DEFAULT_JACOBIAN_STEP).unwrap();
            let n = operator_jacobians(&numeric(&spec), &args, DEFAULT_JACOBIAN_STEP).unwrap();
            for (x, y) in a.driver_v.iter().zip(&n.driver_v) {
                assert!((x - y).abs() <= 1e-6 * x.abs().max(1.0), "{name}");
            }
        }
    }

    #[test]
    fn non_finite_jacobian() {
        let term: TerminalFn = Arc::new(|_, _, out| out[0] = 0.0);
        let spec = ProblemSpec::new("sqrt", 1, 1, 1, 1.0, term)
            .with_driver(Arc::new(|a, out| out[0] = a.value()[0].sqrt()));
        let layout = StackLayout::new(1, 0).unwrap();
        let args = OperatorArguments::new(0.0, &[0.5], &layout, 1, 1, &[0.0], &[0.0]);
        assert!(matches!(
            operator_jacobians(&spec, &args, DEFAULT_JACOBIAN_STEP),
            Err(ModelError::Differentiation { .. })
        ));
    }
}
