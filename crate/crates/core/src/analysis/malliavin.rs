//! First-order Malliavin derivatives of a solved lattice and the check that
//! the martingale integrand matches `D_t V + J` in its first two moments.
//!
//! The derivative system is linear with coefficients frozen along the base
//! lattice: the driver is `sum_e L_{v_e} DV_e + L_{v̄_e} DV̄_e`, the
//! diffusion driver `sum_e J_{v_e} DV_e` and the terminal field `dH/dw`.
//! Its components are indexed `r * d + i` for `D^i V_r`, matching the layout
//! of `V̄`.

use std::io::Write;

use rayon::prelude::*;

use super::AnalysisError;
use crate::grid::{BoundaryRule, Partition, StackLayout, Stencil};
use crate::model::{evaluate_diffusion_into, operator_jacobians, ModelError, OperatorArguments, ProblemSpec, DEFAULT_JACOBIAN_STEP};
use crate::solver::{
    solve_with_paths, Algorithm, BackwardOperator, BackwardSweep, EvalContext, SolutionLattice, SolverConfig, TimeSlice,
};
use crate::stochastics::BrownianPaths;

/// The derivative system of `spec` around `base`.
pub struct MalliavinSystem<'a> {
    spec: &'a ProblemSpec,
    base: &'a SolutionLattice,
    step: f64,
}

impl<'a> MalliavinSystem<'a> {
    pub fn new(spec: &'a ProblemSpec, base: &'a SolutionLattice) -> Result<Self, AnalysisError> {
        if base.q != spec.components || base.d != spec.noise_dims || base.partition.dims() != spec.space_dims {
            return Err(AnalysisError::ShapeMismatch("base lattice does not match the problem".into()));
        }
        if base.layout.max_order() < spec.max_order() {
            return Err(AnalysisError::ShapeMismatch("base stacks hold fewer orders than the operators use".into()));
        }
        Ok(Self {
            spec,
            base,
            step: DEFAULT_JACOBIAN_STEP,
        })
    }

    fn base_arguments<'b>(&'b self, ctx: EvalContext, t: f64, x: &'b [f64]) -> OperatorArguments<'b> {
        let slice = self.base.slice(ctx.time_index);
        let (q, d, e) = (slice.q, slice.d, slice.entries);
        let k = ctx.sample * slice.points + ctx.point;
        OperatorArguments::new(
            t,
            x,
            &self.base.layout,
            q,
            d,
            &slice.v[k * e * q..(k + 1) * e * q],
            &slice.vbar[k * e * q * d..(k + 1) * e * q * d],
        )
    }
}

impl BackwardOperator for MalliavinSystem<'_> {
    fn space_dims(&self) -> usize {
        self.spec.space_dims
    }

    fn components(&self) -> usize {
        self.spec.components * self.spec.noise_dims
    }

    fn noise_dims(&self) -> usize {
        self.spec.noise_dims
    }

    fn max_order(&self) -> usize {
        self.spec.max_order()
    }

    fn horizon(&self) -> f64 {
        self.spec.horizon
    }

    fn driver(&self, ctx: EvalContext, args: &OperatorArguments<'_>, out: &mut [f64]) -> Result<(), ModelError> {
        let (q, d) = (self.spec.components, self.spec.noise_dims);
        let jac = operator_jacobians(self.spec, &self.base_arguments(ctx, args.t, args.x), self.step)?;
        out.fill(0.0);
        for r in 0..q {
            for i in 0..d {
                let mut acc = 0.0;
                for e in 0..jac.driver_entries {
                    let dv = args.v_entry(e);
                    for s in 0..q {
                        acc += jac.driver_v(r, e, s) * dv[s * d + i];
                    }
                }
                for e in 0..jac.driver_bar_entries {
                    let dvb = args.vbar_entry(e);
                    for s in 0..q {
                        for k in 0..d {
                            acc += jac.driver_vbar(r, e, s * d + k) * dvb[(s * d + i) * d + k];
                        }
                    }
                }
                out[r * d + i] = acc;
            }
        }
        Ok(())
    }

    fn diffusion(&self, ctx: EvalContext, args: &OperatorArguments<'_>, out: &mut [f64]) -> Result<(), ModelError> {
        let (q, d) = (self.spec.components, self.spec.noise_dims);
        let jac = operator_jacobians(self.spec, &self.base_arguments(ctx, args.t, args.x), self.step)?;
        out.fill(0.0);
        for r in 0..q {
            for k in 0..d {
                for i in 0..d {
                    let mut acc = 0.0;
                    for e in 0..jac.diffusion_entries {
                        let dv = args.v_entry(e);
                        for s in 0..q {
                            acc += jac.diffusion_v(r * d + k, e, s) * dv[s * d + i];
                        }
                    }
                    out[(r * d + i) * d + k] = acc;
                }
            }
        }
        Ok(())
    }

    fn terminal(&self, _: usize, x: &[f64], w: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        self.spec.terminal_gradient_at(x, w, out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(ModelError::Differentiation {
                operator: "terminal field",
                t: self.spec.horizon,
                x: x.to_vec(),
            })
        }
    }
}

/// `D_θ V` and `D_θ V̄` on the whole grid for one `θ = t_{theta_index}`.
///
/// Slices use the solver layout with `q * d` components: `v` holds
/// `D^i V_r` at component `r * d + i`, `vbar` holds `D^i V̄_{r,k}` at
/// `(r * d + i) * d + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MalliavinLattice {
    pub theta_index: usize,
    pub partition: Partition,
    pub layout: StackLayout,
    slices: Vec<TimeSlice>,
}

impl MalliavinLattice {
    pub fn slices(&self) -> &[TimeSlice] {
        &self.slices
    }

    pub fn slice(&self, j: usize) -> &TimeSlice {
        &self.slices[j]
    }
}

/// Solve the derivative system down to `θ` with the explicit scheme; every
/// slice before `θ` is zero.
///
/// Neither the coefficients nor the terminal field depend on `θ`, so the
/// slices at `t >= θ` coincide for all `θ` and a single solve from `θ = 0`
/// carries the whole diagonal `D_t V(t)`.
pub fn solve_malliavin(
    spec: &ProblemSpec,
    base: &SolutionLattice,
    paths: &BrownianPaths,
    config: &SolverConfig,
    theta_index: usize,
) -> Result<MalliavinLattice, AnalysisError> {
    let n0 = base.partition.time_steps();
    if theta_index > n0 {
        return Err(AnalysisError::ThetaMismatch(format!("θ index {theta_index} is past the last grid time {n0}")));
    }
    let system = MalliavinSystem::new(spec, base)?;
    let config = SolverConfig {
        algorithm: Algorithm::One,
        max_order: Some(base.layout.max_order()),
        ..config.clone()
    };
    let sweep = BackwardSweep::new(&system, &base.partition, &config, paths)?.stop_at(theta_index);
    let layout = sweep.layout().clone();
    let mut slices = Vec::with_capacity(n0 + 1);
    sweep.run(|slice| {
        slices.push(slice.clone());
        Ok(())
    })?;
    let template = slices.last().expect("sweep yields the terminal slice").clone();
    for j in (0..theta_index).rev() {
        let mut zero = template.clone();
        zero.index = j;
        zero.time = base.partition.time(j);
        zero.v.fill(0.0);
        zero.vbar.fill(0.0);
        zero.fp_iterations = None;
        zero.coefficients = None;
        slices.push(zero);
    }
    slices.reverse();
    Ok(MalliavinLattice {
        theta_index,
        partition: base.partition.clone(),
        layout,
        slices,
    })
}

/// One node of the moment comparison of `V̄` against `D_t V + J`.
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationRow {
    pub time_index: usize,
    pub t: f64,
    pub x: Vec<f64>,
    pub order: usize,
    pub key: u64,
    /// `r * d + k` for entry `(r, k)` of the `q x d` integrand.
    pub component: usize,
    pub mean_lhs: f64,
    pub mean_rhs: f64,
    pub var_lhs: f64,
    pub var_rhs: f64,
    pub zscore: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationReport {
    pub rows: Vec<RepresentationRow>,
}

impl RepresentationReport {
    pub fn max_abs_z(&self) -> f64 {
        self.rows.iter().map(|r| r.zscore.abs()).fold(0.0, f64::max)
    }

    /// `t, x1.., c, key, component, mean_lhs, mean_rhs, var_lhs, var_rhs, zscore`
    pub fn write_csv<W: Write>(&self, out: W, dims: usize) -> Result<(), AnalysisError> {
        let err = |e: csv::Error| AnalysisError::Output(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut head = vec!["t".to_string()];
        head.extend((1..=dims).map(|l| format!("x{l}")));
        for h in ["c", "key", "component", "mean_lhs", "mean_rhs", "var_lhs", "var_rhs", "zscore"] {
            head.push(h.into());
        }
        w.write_record(&head).map_err(err)?;
        for r in &self.rows {
            let mut row = vec![r.t.to_string()];
            row.extend(r.x.iter().map(|x| x.to_string()));
            row.push(r.order.to_string());
            row.push(r.key.to_string());
            row.push(r.component.to_string());
            for v in [r.mean_lhs, r.mean_rhs, r.var_lhs, r.var_rhs, r.zscore] {
                row.push(format!("{v:e}"));
            }
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| AnalysisError::Output(e.to_string()))
    }
}

struct Moments {
    mean: f64,
    var: f64,
    se_mean: f64,
    se_var: f64,
}

fn moments(xs: &[f64]) -> Moments {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (m2, m4) = xs.iter().fold((0.0, 0.0), |(a, b), x| {
        let c = (x - mean) * (x - mean);
        (a + c, b + c * c)
    });
    let (m2, m4) = (m2 / n, m4 / n);
    Moments {
        mean,
        var: m2,
        se_mean: (m2 / n).sqrt(),
        se_var: ((m4 - m2 * m2).max(0.0) / n).sqrt(),
    }
}

/// Difference in units of its standard error; differences within the
/// rounding floor count as zero.
fn standardized(diff: f64, se: f64, floor: f64) -> f64 {
    if diff.abs() <= floor {
        0.0
    } else {
        diff / se.max(floor)
    }
}

/// Compare mean and variance of `V̄` with those of `D_t V + J` at every
/// grid time before `T`, point, stack entry and integrand component.
/// `malliavin` must be solved from `θ = 0`.
pub fn check_representation_identity(
    spec: &ProblemSpec,
    base: &SolutionLattice,
    malliavin: &MalliavinLattice,
    boundary: BoundaryRule,
) -> Result<RepresentationReport, AnalysisError> {
    if malliavin.theta_index != 0 {
        return Err(AnalysisError::ThetaMismatch(format!(
            "the diagonal needs θ = 0, got θ index {}",
            malliavin.theta_index
        )));
    }
    if malliavin.partition != base.partition || malliavin.layout != base.layout {
        return Err(AnalysisError::ThetaMismatch("Malliavin lattice lives on another grid".into()));
    }
    let partition = &base.partition;
    let stencil = Stencil::new(partition, boundary);
    let (q, d, samples) = (base.q, base.d, base.samples);
    let width = q * d;
    let points = partition.point_count();
    let entries = base.layout.len();
    let coords = partition.points();
    let mut rows = Vec::new();
    for j in 0..partition.time_steps() {
        let slice = base.slice(j);
        let t = partition.time(j);
        // J stacks per sample, [sample][point][entry][q*d]
        let mut jstack = vec![0.0; samples * points * entries * width];
        let results: Vec<Result<(), ModelError>> = jstack
            .par_chunks_mut(points * entries * width)
            .enumerate()
            .map(|(s, chunk)| {
                for pt in 0..points {
                    let k = s * points + pt;
                    let args = OperatorArguments::new(
                        t,
                        &coords[pt],
                        &base.layout,
                        q,
                        d,
                        &slice.v[k * entries * q..(k + 1) * entries * q],
                        &slice.vbar[k * entries * width..(k + 1) * entries * width],
                    );
                    let start = pt * entries * width;
                    evaluate_diffusion_into(spec, &args, &mut chunk[start..start + width])?;
                }
                stencil.fill_stack(&base.layout, width, chunk);
                Ok(())
            })
            .collect();
        if let Some(Err(e)) = results.into_iter().find(Result::is_err) {
            return Err(e.into());
        }
        let dv = malliavin.slice(j);
        let mut lhs = vec![0.0; samples];
        let mut rhs = vec![0.0; samples];
        for pt in 0..points {
            for e in 0..entries {
                for comp in 0..width {
                    for s in 0..samples {
                        lhs[s] = slice.vbar(s, pt, e)[comp];
                        rhs[s] = dv.v(s, pt, e)[comp] + jstack[((s * points + pt) * entries + e) * width + comp];
                    }
                    let (l, r) = (moments(&lhs), moments(&rhs));
                    let floor_mean = 1e-9 * (1.0 + l.mean.abs() + r.mean.abs());
                    let floor_var = 1e-9 * (1.0 + l.var + r.var);
                    let zm = standardized(l.mean - r.mean, l.se_mean.hypot(r.se_mean), floor_mean);
                    let zv = standardized(l.var - r.var, l.se_var.hypot(r.se_var), floor_var);
                    rows.push(RepresentationRow {
                        time_index: j,
                        t,
                        x: coords[pt].clone(),
                        order: base.layout.order_of(e),
                        key: base.layout.key(e),
                        component: comp,
                        mean_lhs: l.mean,
                        mean_rhs: r.mean,
                        var_lhs: l.var,
                        var_rhs: r.var,
                        zscore: if zm.abs() >= zv.abs() { zm } else { zv },
                    });
                }
            }
        }
    }
    Ok(RepresentationReport { rows })
}

/// Solve the base problem and the diagonal derivative system on shared
/// paths, then run the moment comparison.
pub fn representation_check(
    spec: &ProblemSpec,
    partition: &Partition,
    config: &SolverConfig,
) -> Result<RepresentationReport, AnalysisError> {
    let paths = BrownianPaths::simulate(partition, spec.noise_dims, config.samples, config.seed)?;
    let base = solve_with_paths(spec, partition, config, &paths)?;
    let malliavin = solve_malliavin(spec, &base, &paths, config, 0)?;
    check_representation_identity(spec, &base, &malliavin, config.boundary)
}
