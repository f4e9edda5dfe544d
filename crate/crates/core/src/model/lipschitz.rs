use super::{ModelError, OperatorArguments, ProblemSpec};
use crate::grid::{BoundaryRule, DerivativeStack, GridField, Partition, Stencil};

/// Two argument fields `(u, ū)` and `(v, v̄)` on a partition at time `t`.
#[derive(Debug, Clone)]
pub struct TrialPair {
    pub t: f64,
    pub u: GridField,
    pub u_bar: GridField,
    pub v: GridField,
    pub v_bar: GridField,
}

/// Largest observed ratios per order `c`:
/// `|d^c (L(u) - L(v))| / (||u - v||_{C^{k+c}} + ||ū - v̄||_{C^{m+c}})` and
/// `|d^c (J(u) - J(v))| / ||u - v||_{C^{n+c}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzReport {
    pub driver_ratios: Vec<f64>,
    pub diffusion_ratios: Vec<f64>,
}

/// Empirical Lipschitz ratios over `pairs`; purely diagnostic.
pub fn probe_lipschitz(
    spec: &ProblemSpec,
    partition: &Partition,
    pairs: &[TrialPair],
    c_max: usize,
) -> Result<LipschitzReport, ModelError> {
    let stencil = Stencil::new(partition, BoundaryRule::Backward);
    let top = spec.max_order() + c_max;
    let (q, d) = (spec.components, spec.noise_dims);
    let mut report = LipschitzReport {
        driver_ratios: vec![0.0; c_max + 1],
        diffusion_ratios: vec![0.0; c_max + 1],
    };
    for pair in pairs {
        let su = stencil.derivative_stack(&pair.u, top)?;
        let sub = stencil.derivative_stack(&pair.u_bar, top)?;
        let sv = stencil.derivative_stack(&pair.v, top)?;
        let svb = stencil.derivative_stack(&pair.v_bar, top)?;
        if su.components() != q || sub.components() != q * d {
            return Err(ModelError::ShapeMismatch(format!(
                "trial fields need {q} and {} components",
                q * d
            )));
        }
        let (lu, ju) = operator_fields(spec, partition, pair.t, &su, &sub)?;
        let (lv, jv) = operator_fields(spec, partition, pair.t, &sv, &svb)?;
        let dl = stencil.derivative_stack(&difference(&lu, &lv), c_max)?;
        let dj = stencil.derivative_stack(&difference(&ju, &jv), c_max)?;
        let du = stencil.derivative_stack(&difference(&pair.u, &pair.v), top)?;
        let dub = stencil.derivative_stack(&difference(&pair.u_bar, &pair.v_bar), top)?;
        for c in 0..=c_max {
            let denom_l = sup_through(&du, spec.k + c) + sup_through(&dub, spec.m + c);
            report.driver_ratios[c] = report.driver_ratios[c].max(ratio(dl.order_sup(c), denom_l));
            let denom_j = sup_through(&du, spec.n + c);
            report.diffusion_ratios[c] =
                report.diffusion_ratios[c].max(ratio(dj.order_sup(c), denom_j));
        }
    }
    Ok(report)
}

fn ratio(num: f64, denom: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / denom
    }
}

fn sup_through(stack: &DerivativeStack, c: usize) -> f64 {
    (0..=c).map(|k| stack.order_sup(k)).fold(0.0, f64::max)
}

fn difference(a: &GridField, b: &GridField) -> GridField {
    let values = a.values().iter().zip(b.values()).map(|(x, y)| x - y).collect();
    GridField::from_values(a.components(), values)
}

fn operator_fields(
    spec: &ProblemSpec,
    partition: &Partition,
    t: f64,
    v: &DerivativeStack,
    vbar: &DerivativeStack,
) -> Result<(GridField, GridField), ModelError> {
    let (q, d) = (spec.components, spec.noise_dims);
    let entries = v.layout().len();
    let mut l = GridField::zeros(partition.point_count(), q);
    let mut j = GridField::zeros(partition.point_count(), q * d);
    let mut x = vec![0.0; partition.dims()];
    for pt in 0..partition.point_count() {
        partition.coordinates_into(pt, &mut x);
        let vs = &v.values()[pt * entries * q..(pt + 1) * entries * q];
        let vbs = &vbar.values()[pt * entries * q * d..(pt + 1) * entries * q * d];
        let args = OperatorArguments::new(t, &x, v.layout(), q, d, vs, vbs);
        super::evaluate_driver_into(spec, &args, l.at_mut(pt))?;
        super::evaluate_diffusion_into(spec, &args, j.at_mut(pt))?;
    }
    Ok((l, j))
}
