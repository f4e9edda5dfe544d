use rayon::prelude::*;

use super::AnalysisError;
use crate::grid::{Partition, StackLayout};
use crate::model::{AnalyticSolution, ProblemSpec};
use crate::solver::{Algorithm, BackwardSweep, SolutionLattice, SolverConfig, TimeSlice};
use crate::stochastics::BrownianPaths;

/// Squared-error criterion per derivative order.
///
/// `v_terms[c]` is the max over lattice points and comparison times of the
/// sample mean of `sum |V^(c) - V_ref^(c)|^2` over multi-indices and
/// components; `vbar_terms` likewise for `V̄`. Standard errors belong to the
/// maximising mean.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub v_terms: Vec<f64>,
    pub vbar_terms: Vec<f64>,
    pub v_stderr: Vec<f64>,
    pub vbar_stderr: Vec<f64>,
    pub mesh_size: f64,
    pub samples: usize,
}

impl ErrorReport {
    pub fn err_v(&self) -> f64 {
        self.v_terms.iter().sum()
    }

    pub fn err_vbar(&self) -> f64 {
        self.vbar_terms.iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.err_v() + self.err_vbar()
    }

    /// Combined standard error, treating the terms as independent.
    pub fn stderr_total(&self) -> f64 {
        self.v_stderr
            .iter()
            .chain(&self.vbar_stderr)
            .map(|s| s * s)
            .sum::<f64>()
            .sqrt()
    }
}

/// What a lattice is measured against.
pub enum Reference<'a> {
    /// A closed form evaluated on the same Brownian paths.
    Analytic {
        solution: &'a dyn AnalyticSolution,
        paths: &'a BrownianPaths,
    },
    /// Another lattice on the same paths, on the same or a nested finer grid.
    Lattice(&'a SolutionLattice),
}

#[derive(Debug, Clone, Copy)]
struct Term {
    value: f64,
    stderr: f64,
}

#[derive(Clone, Copy)]
enum Part {
    V,
    Vbar,
}

/// Streaming form of the criterion: feed slices as a sweep produces them.
pub struct ErrorAccumulator {
    layout: StackLayout,
    orders: usize,
    q: usize,
    d: usize,
    points: usize,
    samples: usize,
    terminal_index: usize,
    coords: Vec<Vec<f64>>,
    mesh_size: f64,
    v: Vec<Term>,
    vbar: Vec<Term>,
}

impl ErrorAccumulator {
    pub fn new(partition: &Partition, layout: &StackLayout, q: usize, d: usize, samples: usize) -> Self {
        let orders = layout.max_order() + 1;
        let zero = Term { value: 0.0, stderr: 0.0 };
        Self {
            layout: layout.clone(),
            orders,
            q,
            d,
            points: partition.point_count(),
            samples,
            terminal_index: partition.time_steps(),
            coords: partition.points(),
            mesh_size: partition.mesh_size(),
            v: vec![zero; orders],
            vbar: vec![zero; orders],
        }
    }

    fn check(&self, slice: &TimeSlice) -> Result<(), AnalysisError> {
        if slice.samples != self.samples
            || slice.points != self.points
            || slice.entries != self.layout.len()
            || slice.q != self.q
            || slice.d != self.d
        {
            return Err(AnalysisError::ShapeMismatch(format!(
                "slice {} has shape {}x{}x{}x{}x{}, expected {}x{}x{}x{}x{}",
                slice.index,
                slice.samples,
                slice.points,
                slice.entries,
                slice.q,
                slice.d,
                self.samples,
                self.points,
                self.layout.len(),
                self.q,
                self.d
            )));
        }
        Ok(())
    }

    /// Compare `slice` with the closed form at its own time and, before `T`,
    /// at the left limit of the next grid time.
    pub fn absorb_analytic(
        &mut self,
        slice: &TimeSlice,
        partition: &Partition,
        solution: &dyn AnalyticSolution,
        paths: &BrownianPaths,
    ) -> Result<(), AnalysisError> {
        self.check(slice)?;
        if paths.samples() != self.samples || paths.steps() != self.terminal_index {
            return Err(AnalysisError::ShapeMismatch("paths do not match the lattice".into()));
        }
        let j = slice.index;
        let mut times = vec![j];
        if j < self.terminal_index {
            times.push(j + 1);
        }
        for tj in times {
            let t = partition.time(tj);
            let sq = self.analytic_errors(slice, Part::V, t, tj, solution, paths);
            self.absorb(Part::V, &sq);
            if j < self.terminal_index {
                let sq = self.analytic_errors(slice, Part::Vbar, t, tj, solution, paths);
                self.absorb(Part::Vbar, &sq);
            }
        }
        Ok(())
    }

    /// Compare `slice` with a reference slice of the same samples. `map`
    /// sends each lattice point to its reference point.
    pub fn absorb_slice(&mut self, slice: &TimeSlice, reference: &TimeSlice, map: &[usize]) -> Result<(), AnalysisError> {
        self.check(slice)?;
        if reference.samples != self.samples
            || reference.q != self.q
            || reference.d != self.d
            || reference.entries < self.layout.len()
            || map.len() != self.points
            || map.iter().any(|&m| m >= reference.points)
        {
            return Err(AnalysisError::ShapeMismatch(format!(
                "reference slice {} cannot be compared with slice {}",
                reference.index, slice.index
            )));
        }
        let sq = self.slice_errors(slice, reference, map, Part::V);
        self.absorb(Part::V, &sq);
        if slice.index < self.terminal_index {
            let sq = self.slice_errors(slice, reference, map, Part::Vbar);
            self.absorb(Part::Vbar, &sq);
        }
        Ok(())
    }

    pub fn finish(self) -> ErrorReport {
        ErrorReport {
            v_terms: self.v.iter().map(|t| t.value).collect(),
            vbar_terms: self.vbar.iter().map(|t| t.value).collect(),
            v_stderr: self.v.iter().map(|t| t.stderr).collect(),
            vbar_stderr: self.vbar.iter().map(|t| t.stderr).collect(),
            mesh_size: self.mesh_size,
            samples: self.samples,
        }
    }

    fn width(&self, part: Part) -> usize {
        match part {
            Part::V => self.q,
            Part::Vbar => self.q * self.d,
        }
    }

    /// Per-sample squared errors `[sample][point][order]`.
    fn analytic_errors(
        &self,
        slice: &TimeSlice,
        part: Part,
        t: f64,
        tj: usize,
        solution: &dyn AnalyticSolution,
        paths: &BrownianPaths,
    ) -> Vec<f64> {
        let width = self.width(part);
        let entries = self.layout.len();
        let row = self.points * self.orders;
        let mut out = vec![0.0; self.samples * row];
        out.par_chunks_mut(row).enumerate().for_each(|(s, chunk)| {
            let w = paths.position(s, tj);
            let mut reference = vec![0.0; width];
            for pt in 0..self.points {
                let x = &self.coords[pt];
                for e in 0..entries {
                    let index = self.layout.index(e);
                    let got = match part {
                        Part::V => {
                            solution.value(t, x, w, index, &mut reference);
                            slice.v(s, pt, e)
                        }
                        Part::Vbar => {
                            solution.integrand(t, x, w, index, &mut reference);
                            slice.vbar(s, pt, e)
                        }
                    };
                    let sq: f64 = got.iter().zip(&reference).map(|(a, b)| (a - b) * (a - b)).sum();
                    chunk[pt * self.orders + self.layout.order_of(e)] += sq;
                }
            }
        });
        out
    }

    fn slice_errors(&self, slice: &TimeSlice, reference: &TimeSlice, map: &[usize], part: Part) -> Vec<f64> {
        let entries = self.layout.len();
        let row = self.points * self.orders;
        let mut out = vec![0.0; self.samples * row];
        out.par_chunks_mut(row).enumerate().for_each(|(s, chunk)| {
            for (pt, &rp) in map.iter().enumerate() {
                for e in 0..entries {
                    let (a, b) = match part {
                        Part::V => (slice.v(s, pt, e), reference.v(s, rp, e)),
                        Part::Vbar => (slice.vbar(s, pt, e), reference.vbar(s, rp, e)),
                    };
                    let sq: f64 = a.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum();
                    chunk[pt * self.orders + self.layout.order_of(e)] += sq;
                }
            }
        });
        out
    }

    /// Fold one comparison time into the running maxima.
    fn absorb(&mut self, part: Part, sq: &[f64]) {
        let row = self.points * self.orders;
        let mut sum = vec![0.0; row];
        let mut sum2 = vec![0.0; row];
        for chunk in sq.chunks(row) {
            for ((a, b), x) in sum.iter_mut().zip(sum2.iter_mut()).zip(chunk) {
                *a += x;
                *b += x * x;
            }
        }
        let n = self.samples as f64;
        let terms = match part {
            Part::V => &mut self.v,
            Part::Vbar => &mut self.vbar,
        };
        for k in 0..row {
            let mean = sum[k] / n;
            let c = k % self.orders;
            if mean > terms[c].value {
                let var = if self.samples > 1 {
                    ((sum2[k] - n * mean * mean) / (n - 1.0)).max(0.0)
                } else {
                    0.0
                };
                terms[c] = Term {
                    value: mean,
                    stderr: (var / n).sqrt(),
                };
            }
        }
    }
}

/// Map coarse lattice points onto a nested finer lattice.
pub fn point_map(coarse: &Partition, fine: &Partition) -> Result<Vec<usize>, AnalysisError> {
    if coarse.dims() != fine.dims() || coarse.edges() != fine.edges() {
        return Err(AnalysisError::ShapeMismatch("partitions cover different domains".into()));
    }
    let mut ratios = Vec::with_capacity(coarse.dims());
    for (nc, nf) in coarse.counts().iter().zip(fine.counts()) {
        if nf % nc != 0 {
            return Err(AnalysisError::ShapeMismatch(format!(
                "spatial count {nf} is not a refinement of {nc}"
            )));
        }
        ratios.push(nf / nc);
    }
    Ok((0..coarse.point_count())
        .map(|pt| {
            (0..coarse.dims())
                .map(|l| coarse.lattice_coordinate(pt, l) * ratios[l] * fine.stride(l))
                .sum()
        })
        .collect())
}

/// The criterion for a stored lattice.
///
/// Against a closed form, each slice at `t_j` is compared at `t_j` and at
/// the left limit of `t_{j+1}`. Against a finer lattice, slice `j` is
/// compared with every fine slice in `[t_j, t_{j+1})`; on the same grid this
/// is a comparison at grid times and the criterion is symmetric.
pub fn discrete_error(lattice: &SolutionLattice, reference: &Reference<'_>) -> Result<ErrorReport, AnalysisError> {
    let partition = &lattice.partition;
    let mut acc = ErrorAccumulator::new(partition, &lattice.layout, lattice.q, lattice.d, lattice.samples);
    match reference {
        Reference::Analytic { solution, paths } => {
            for slice in lattice.slices() {
                acc.absorb_analytic(slice, partition, *solution, paths)?;
            }
        }
        Reference::Lattice(fine) => {
            let r = fine.partition.time_ratio_to(partition).ok_or_else(|| {
                AnalysisError::ShapeMismatch("reference time grid does not contain the lattice times".into())
            })?;
            if fine.layout.max_order() < lattice.layout.max_order() {
                return Err(AnalysisError::ShapeMismatch("reference stacks hold fewer orders".into()));
            }
            let map = point_map(partition, &fine.partition)?;
            let n0 = partition.time_steps();
            for slice in lattice.slices() {
                let j = slice.index;
                let fine_range = if j == n0 { n0 * r..n0 * r + 1 } else { j * r..(j + 1) * r };
                for fj in fine_range {
                    acc.absorb_slice(slice, fine.slice(fj), &map)?;
                }
            }
        }
    }
    Ok(acc.finish())
}

/// Run `config` on `paths` and measure it against the spec's closed form,
/// without storing the lattice.
pub fn streamed_error(
    spec: &ProblemSpec,
    partition: &Partition,
    config: &SolverConfig,
    paths: &BrownianPaths,
) -> Result<ErrorReport, AnalysisError> {
    let solution = spec.reference.as_deref().ok_or_else(|| AnalysisError::MissingReference(spec.name.clone()))?;
    let sweep = BackwardSweep::new(spec, partition, config, paths)?;
    let mut acc = ErrorAccumulator::new(partition, sweep.layout(), spec.components, spec.noise_dims, paths.samples());
    let mut failure = None;
    sweep.run(|slice| {
        if failure.is_none() {
            failure = acc.absorb_analytic(slice, partition, solution, paths).err();
        }
        Ok(())
    })?;
    match failure {
        Some(e) => Err(e),
        None => Ok(acc.finish()),
    }
}

/// The criterion applied to algorithm one against algorithm two on shared
/// paths, with both sweeps stepped in lockstep.
pub fn compare_algorithms_with_paths(
    spec: &ProblemSpec,
    partition: &Partition,
    config: &SolverConfig,
    paths: &BrownianPaths,
) -> Result<ErrorReport, AnalysisError> {
    let one = SolverConfig {
        algorithm: Algorithm::One,
        ..config.clone()
    };
    let two = SolverConfig {
        algorithm: Algorithm::Two,
        ..config.clone()
    };
    let mut a = BackwardSweep::new(spec, partition, &one, paths)?;
    let mut b = BackwardSweep::new(spec, partition, &two, paths)?;
    let mut acc = ErrorAccumulator::new(partition, a.layout(), spec.components, spec.noise_dims, paths.samples());
    let map: Vec<usize> = (0..partition.point_count()).collect();
    acc.absorb_slice(a.current(), b.current(), &map)?;
    while a.step()?.is_some() {
        b.step()?;
        acc.absorb_slice(a.current(), b.current(), &map)?;
    }
    Ok(acc.finish())
}

/// [`compare_algorithms_with_paths`] on freshly simulated paths.
pub fn compare_algorithms(
    spec: &ProblemSpec,
    partition: &Partition,
    config: &SolverConfig,
) -> Result<ErrorReport, AnalysisError> {
    let paths = BrownianPaths::simulate(partition, spec.noise_dims, config.samples, config.seed)?;
    compare_algorithms_with_paths(spec, partition, config, &paths)
}
