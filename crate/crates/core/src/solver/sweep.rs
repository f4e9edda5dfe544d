//! The backward time loop shared by both schemes.

use rayon::prelude::*;

use super::{Algorithm, SolverConfig, SolverError, TimeSlice};
use crate::grid::{Partition, StackLayout, Stencil};
use crate::model::{ModelError, OperatorArguments, ProblemSpec};
use crate::stochastics::{BrownianPaths, StepContext, TargetMatrix};

/// Where an operator is being evaluated: sample path, grid time index and
/// lattice point. Operators with per-path coefficients read it; plain
/// problem specs ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalContext {
    pub sample: usize,
    pub time_index: usize,
    pub point: usize,
}

/// A backward equation the sweep can step: drivers, terminal field and
/// shape.
pub trait BackwardOperator: Sync {
    fn space_dims(&self) -> usize;
    fn components(&self) -> usize;
    fn noise_dims(&self) -> usize;
    /// `max(k, m, n)`.
    fn max_order(&self) -> usize;
    fn horizon(&self) -> f64;
    fn driver(&self, ctx: EvalContext, args: &OperatorArguments<'_>, out: &mut [f64]) -> Result<(), ModelError>;
    fn diffusion(&self, ctx: EvalContext, args: &OperatorArguments<'_>, out: &mut [f64]) -> Result<(), ModelError>;
    /// Terminal value at `x` for a sample whose terminal Brownian state is `w`.
    fn terminal(&self, sample: usize, x: &[f64], w: &[f64], out: &mut [f64]) -> Result<(), ModelError>;
}

impl BackwardOperator for ProblemSpec {
    fn space_dims(&self) -> usize {
        self.space_dims
    }

    fn components(&self) -> usize {
        self.components
    }

    fn noise_dims(&self) -> usize {
        self.noise_dims
    }

    fn max_order(&self) -> usize {
        ProblemSpec::max_order(self)
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn driver(&self, _: EvalContext, args: &OperatorArguments<'_>, out: &mut [f64]) -> Result<(), ModelError> {
        crate::model::evaluate_driver_into(self, args, out)
    }

    fn diffusion(&self, _: EvalContext, args: &OperatorArguments<'_>, out: &mut [f64]) -> Result<(), ModelError> {
        crate::model::evaluate_diffusion_into(self, args, out)
    }

    fn terminal(&self, _: usize, x: &[f64], w: &[f64], out: &mut [f64]) -> Result<(), ModelError> {
        (self.terminal)(x, w, out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(ModelError::NonFinite {
                operator: "terminal field",
                t: self.horizon,
                x: x.to_vec(),
            })
        }
    }
}

#[derive(Clone, Copy)]
enum Which {
    Driver,
    Diffusion,
}

/// Iterator-like backward sweep: holds the current slice and advances one
/// grid time per [`BackwardSweep::step`].
pub struct BackwardSweep<'a, O: BackwardOperator + ?Sized> {
    op: &'a O,
    partition: &'a Partition,
    config: &'a SolverConfig,
    paths: &'a BrownianPaths,
    layout: StackLayout,
    stencil: Stencil<'a>,
    coords: Vec<f64>,
    current: TimeSlice,
    stop: usize,
}

impl<'a, O: BackwardOperator + ?Sized> BackwardSweep<'a, O> {
    /// Validate inputs and build the terminal slice.
    pub fn new(
        op: &'a O,
        partition: &'a Partition,
        config: &'a SolverConfig,
        paths: &'a BrownianPaths,
    ) -> Result<Self, SolverError> {
        let order = config.max_order.unwrap_or_else(|| op.max_order());
        if order < op.max_order() {
            return Err(SolverError::InvalidConfig(format!(
                "stack order {order} is below the operator order {}",
                op.max_order()
            )));
        }
        if op.space_dims() != partition.dims() {
            return Err(SolverError::InvalidConfig(format!(
                "problem has {} spatial dimensions but the partition has {}",
                op.space_dims(),
                partition.dims()
            )));
        }
        let t_end = partition.terminal_time();
        if (t_end - op.horizon()).abs() > 1e-12 * op.horizon().max(1.0) {
            return Err(SolverError::InvalidConfig(format!(
                "partition ends at T = {t_end} but the problem is posed on T = {}",
                op.horizon()
            )));
        }
        if paths.steps() != partition.time_steps() || paths.dims() != op.noise_dims() {
            return Err(SolverError::InvalidConfig(format!(
                "Brownian paths have {} steps of dimension {}, expected {} and {}",
                paths.steps(),
                paths.dims(),
                partition.time_steps(),
                op.noise_dims()
            )));
        }
        config.validate(op.noise_dims(), paths.samples())?;
        let stencil = Stencil::new(partition, config.boundary);
        stencil.check_order(order)?;
        let layout = StackLayout::new(partition.dims(), order)?;
        let p = partition.dims();
        let mut coords = vec![0.0; partition.point_count() * p];
        for pt in 0..partition.point_count() {
            partition.coordinates_into(pt, &mut coords[pt * p..(pt + 1) * p]);
        }
        let mut sweep = Self {
            op,
            partition,
            config,
            paths,
            layout,
            stencil,
            coords,
            current: TimeSlice::zeros(0, 0.0, 0, 0, 0, 0, 0),
            stop: 0,
        };
        sweep.current = sweep.terminal_slice()?;
        Ok(sweep)
    }

    /// Stop the sweep at time index `stop` instead of 0.
    pub fn stop_at(mut self, stop: usize) -> Self {
        self.stop = stop.min(self.partition.time_steps());
        self
    }

    pub fn layout(&self) -> &StackLayout {
        &self.layout
    }

    pub fn current(&self) -> &TimeSlice {
        &self.current
    }

    pub fn into_current(self) -> TimeSlice {
        self.current
    }

    fn x(&self, pt: usize) -> &[f64] {
        let p = self.partition.dims();
        &self.coords[pt * p..(pt + 1) * p]
    }

    fn terminal_slice(&self) -> Result<TimeSlice, SolverError> {
        let n0 = self.partition.time_steps();
        let (q, d) = (self.op.components(), self.op.noise_dims());
        let points = self.partition.point_count();
        let entries = self.layout.len();
        let mut slice = TimeSlice::zeros(n0, self.partition.time(n0), self.paths.samples(), points, entries, q, d);
        let row = points * entries * q;
        let results: Vec<Result<(), ModelError>> = slice
            .v
            .par_chunks_mut(row)
            .enumerate()
            .map(|(s, chunk)| {
                let w = self.paths.position(s, n0);
                for pt in 0..points {
                    let start = pt * entries * q;
                    self.op.terminal(s, self.x(pt), w, &mut chunk[start..start + q])?;
                }
                self.stencil.fill_stack(&self.layout, q, chunk);
                Ok(())
            })
            .collect();
        first_error(results).map_err(|source| SolverError::Operator {
            time_index: n0,
            source,
        })?;
        Ok(slice)
    }

    /// Advance to the previous grid time. Returns `None` once the stop index
    /// has been reached.
    pub fn step(&mut self) -> Result<Option<&TimeSlice>, SolverError> {
        let j0 = self.current.index;
        if j0 <= self.stop {
            return Ok(None);
        }
        let next = match self.config.algorithm {
            Algorithm::One => self.explicit_step(j0)?,
            Algorithm::Two => self.implicit_step(j0)?,
        };
        self.current = next;
        Ok(Some(&self.current))
    }

    /// Run to the stop index, handing every slice (terminal first) to `sink`.
    pub fn run<F>(mut self, mut sink: F) -> Result<(), SolverError>
    where
        F: FnMut(&TimeSlice) -> Result<(), SolverError>,
    {
        sink(&self.current)?;
        while let Some(slice) = self.step()? {
            sink(slice)?;
        }
        Ok(())
    }

    /// Evaluate `L` or `J` on every sample and point at order 0, returning
    /// `[sample][point][width]`.
    fn evaluate(&self, which: Which, t: f64, time_index: usize, v: &[f64], vbar: &[f64]) -> Result<Vec<f64>, SolverError> {
        let (q, d) = (self.op.components(), self.op.noise_dims());
        let width = match which {
            Which::Driver => q,
            Which::Diffusion => q * d,
        };
        let points = self.partition.point_count();
        let entries = self.layout.len();
        let mut out = vec![0.0; self.paths.samples() * points * width];
        let results: Vec<Result<(), ModelError>> = out
            .par_chunks_mut(points * width)
            .enumerate()
            .map(|(s, chunk)| {
                for pt in 0..points {
                    let ctx = EvalContext {
                        sample: s,
                        time_index,
                        point: pt,
                    };
                    let vs = &v[((s * points + pt) * entries) * q..((s * points + pt + 1) * entries) * q];
                    let vbs = &vbar[((s * points + pt) * entries) * q * d..((s * points + pt + 1) * entries) * q * d];
                    let args = OperatorArguments::new(t, self.x(pt), &self.layout, q, d, vs, vbs);
                    let dst = &mut chunk[pt * width..(pt + 1) * width];
                    match which {
                        Which::Driver => self.op.driver(ctx, &args, dst)?,
                        Which::Diffusion => self.op.diffusion(ctx, &args, dst)?,
                    }
                }
                Ok(())
            })
            .collect();
        first_error(results).map_err(|source| SolverError::Operator { time_index, source })?;
        Ok(out)
    }

    fn moments(&self, j0: usize, targets: TargetMatrix) -> Result<crate::stochastics::ConditionalMoments, SolverError> {
        let prev = self.paths.positions_at(j0 - 1);
        let next = self.paths.positions_at(j0);
        let inc = self.paths.increments_at(j0);
        let ctx = StepContext {
            dims: self.op.noise_dims(),
            step: j0,
            dt: self.partition.step(j0),
            prev_state: &prev,
            next_state: &next,
            increments: &inc,
            seed: self.config.seed,
        };
        self.config
            .estimator
            .conditional_moments(&ctx, &targets)
            .map_err(|source| SolverError::Estimator { step: j0, order: 0, source })
    }

    /// Write order-0 values `[sample][point][width]` into entry 0 of a
    /// stack buffer and rebuild the higher entries.
    fn set_base(&self, stack: &mut [f64], base: &[f64], width: usize) {
        let points = self.partition.point_count();
        let entries = self.layout.len();
        stack
            .par_chunks_mut(points * entries * width)
            .zip(base.par_chunks(points * width))
            .for_each(|(chunk, b)| {
                for pt in 0..points {
                    chunk[pt * entries * width..pt * entries * width + width]
                        .copy_from_slice(&b[pt * width..(pt + 1) * width]);
                }
                self.stencil.fill_stack(&self.layout, width, chunk);
            });
    }

    fn base_of(&self, stack: &[f64], width: usize) -> Vec<f64> {
        let entries = self.layout.len();
        stack
            .chunks(entries * width)
            .flat_map(|c| c[..width].iter().copied())
            .collect()
    }

    fn check_finite(&self, j: usize, slice: &TimeSlice) -> Result<(), SolverError> {
        let (q, d) = (slice.q, slice.d);
        let row_v = slice.entries * q;
        let row_b = slice.entries * q * d;
        for s in 0..slice.samples {
            for pt in 0..slice.points {
                let k = s * slice.points + pt;
                let bad = slice.v[k * row_v..(k + 1) * row_v].iter().any(|v| !v.is_finite())
                    || slice.vbar[k * row_b..(k + 1) * row_b].iter().any(|v| !v.is_finite());
                if bad {
                    return Err(SolverError::Divergence {
                        step: j,
                        sample: s,
                        x: self.x(pt).to_vec(),
                    });
                }
            }
        }
        Ok(())
    }

    fn explicit_step(&mut self, j0: usize) -> Result<TimeSlice, SolverError> {
        let (q, d) = (self.op.components(), self.op.noise_dims());
        let (samples, points, entries) = (self.paths.samples(), self.partition.point_count(), self.layout.len());
        let dt = self.partition.step(j0);
        let t_now = self.partition.time(j0);
        let t_prev = self.partition.time(j0 - 1);

        let l = self.evaluate(Which::Driver, t_now, j0, &self.current.v, &self.current.vbar)?;
        let mut y = self.base_of(&self.current.v, q);
        y.iter_mut().zip(&l).for_each(|(y, l)| *y += dt * l);
        let moments = self.moments(j0, TargetMatrix::new(samples, points * q, y))?;

        let mut next = TimeSlice::zeros(j0 - 1, t_prev, samples, points, entries, q, d);
        self.set_base(&mut next.v, &moments.plain, q);
        let mut vbar_base: Vec<f64> = moments.weighted.iter().map(|v| v / dt).collect();
        self.set_base(&mut next.vbar, &vbar_base, q * d);
        let j = self.evaluate(Which::Diffusion, t_prev, j0 - 1, &next.v, &next.vbar)?;
        vbar_base.iter_mut().zip(&j).for_each(|(b, j)| *b += j);
        self.set_base(&mut next.vbar, &vbar_base, q * d);
        if self.config.record_coefficients {
            next.coefficients = moments.coefficients;
        }
        self.check_finite(j0 - 1, &next)?;
        Ok(next)
    }

    fn implicit_step(&mut self, j0: usize) -> Result<TimeSlice, SolverError> {
        let (q, d) = (self.op.components(), self.op.noise_dims());
        let (samples, points, entries) = (self.paths.samples(), self.partition.point_count(), self.layout.len());
        let dt = self.partition.step(j0);
        let t_prev = self.partition.time(j0 - 1);

        let targets = self.base_of(&self.current.v, q);
        let moments = self.moments(j0, TargetMatrix::new(samples, points * q, targets))?;
        let a = moments.plain;
        let martingale: Vec<f64> = moments.weighted.iter().map(|v| v / dt).collect();

        let mut next = TimeSlice::zeros(j0 - 1, t_prev, samples, points, entries, q, d);
        let mut iterate = a.clone();
        let mut iterations = 0;
        loop {
            iterations += 1;
            self.set_base(&mut next.v, &iterate, q);
            self.set_base(&mut next.vbar, &martingale, q * d);
            let j = self.evaluate(Which::Diffusion, t_prev, j0 - 1, &next.v, &next.vbar)?;
            let vbar_base: Vec<f64> = martingale.iter().zip(&j).map(|(b, j)| b + j).collect();
            self.set_base(&mut next.vbar, &vbar_base, q * d);
            let l = self.evaluate(Which::Driver, t_prev, j0 - 1, &next.v, &next.vbar)?;
            let mut residual: f64 = 0.0;
            for ((it, a), l) in iterate.iter_mut().zip(&a).zip(&l) {
                let updated = a + dt * l;
                residual = residual.max((updated - *it).abs());
                *it = updated;
            }
            if !residual.is_finite() {
                self.set_base(&mut next.v, &iterate, q);
                self.check_finite(j0 - 1, &next)?;
                return Err(SolverError::NonConvergence {
                    step: j0,
                    iterations,
                    residual,
                });
            }
            if residual < self.config.fp_tolerance {
                break;
            }
            if iterations >= self.config.fp_max_iters {
                return Err(SolverError::NonConvergence {
                    step: j0,
                    iterations,
                    residual,
                });
            }
        }
        self.set_base(&mut next.v, &iterate, q);
        self.set_base(&mut next.vbar, &martingale, q * d);
        let j = self.evaluate(Which::Diffusion, t_prev, j0 - 1, &next.v, &next.vbar)?;
        let vbar_base: Vec<f64> = martingale.iter().zip(&j).map(|(b, j)| b + j).collect();
        self.set_base(&mut next.vbar, &vbar_base, q * d);
        next.fp_iterations = Some(iterations);
        if self.config.record_coefficients {
            next.coefficients = moments.coefficients;
        }
        self.check_finite(j0 - 1, &next)?;
        Ok(next)
    }
}

fn first_error(results: Vec<Result<(), ModelError>>) -> Result<(), ModelError> {
    results.into_iter().find(Result::is_err).unwrap_or(Ok(()))
}
