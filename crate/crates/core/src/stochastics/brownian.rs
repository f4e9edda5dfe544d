use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use super::StochasticsError;
use crate::grid::Partition;

/// Default cap on the number of stored increments (`S * n0 * d`).
pub const DEFAULT_DRAW_BUDGET: usize = 1 << 28;

const INNER_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Uniform in the open interval `(0, 1)` from 53 random bits.
fn open_uniform(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draws from a counter-based stream.
///
/// Every `(seed, stream)` pair addresses an independent ChaCha keystream, so
/// draws never depend on how work is scheduled across threads.
pub struct NormalStream {
    rng: ChaCha8Rng,
    normal: Normal,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            rng,
            normal: Normal::standard(),
        }
    }

    /// Stream used for inner continuations, keyed separately from the outer
    /// paths.
    pub fn inner(seed: u64, step: usize, sample: usize) -> Self {
        let key = ((step as u64) << 40) ^ sample as u64;
        Self::new(seed ^ INNER_SALT, key)
    }

    pub fn next_standard(&mut self) -> f64 {
        self.normal.inverse_cdf(open_uniform(self.rng.next_u64()))
    }
}

/// Brownian increments over a time partition for an ensemble of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPaths {
    samples: usize,
    steps: usize,
    dims: usize,
    seed: u64,
    /// `[sample][step][dim]`, step `j` holds `W(t_{j+1}) - W(t_j)`.
    increments: Vec<f64>,
    /// `[sample][j][dim]` for `j = 0..=n0`.
    positions: Vec<f64>,
}

impl BrownianPaths {
    pub fn simulate(
        partition: &Partition,
        dims: usize,
        samples: usize,
        seed: u64,
    ) -> Result<Self, StochasticsError> {
        Self::simulate_with_budget(partition, dims, samples, seed, DEFAULT_DRAW_BUDGET)
    }

    pub fn simulate_with_budget(
        partition: &Partition,
        dims: usize,
        samples: usize,
        seed: u64,
        budget: usize,
    ) -> Result<Self, StochasticsError> {
        if samples == 0 || dims == 0 {
            return Err(StochasticsError::InvalidSpec(
                "sample count and noise dimension must be at least 1".into(),
            ));
        }
        let steps = partition.time_steps();
        let requested = samples
            .checked_mul(steps)
            .and_then(|v| v.checked_mul(dims))
            .unwrap_or(usize::MAX);
        if requested > budget {
            return Err(StochasticsError::Capacity { requested, budget });
        }
        let sd: Vec<f64> = (1..=steps).map(|j| partition.step(j).sqrt()).collect();
        let mut increments = vec![0.0; requested];
        increments
            .par_chunks_mut(steps * dims)
            .enumerate()
            .for_each(|(s, row)| {
                let mut stream = NormalStream::new(seed, s as u64);
                for (j, step) in row.chunks_mut(dims).enumerate() {
                    for v in step {
                        *v = sd[j] * stream.next_standard();
                    }
                }
            });
        Ok(Self::assemble(samples, steps, dims, seed, increments))
    }

    /// Paths from explicit increments laid out `[sample][step][dim]`.
    pub fn from_increments(
        samples: usize,
        steps: usize,
        dims: usize,
        seed: u64,
        increments: Vec<f64>,
    ) -> Result<Self, StochasticsError> {
        if increments.len() != samples * steps * dims {
            return Err(StochasticsError::ShapeMismatch(format!(
                "expected {} increments, got {}",
                samples * steps * dims,
                increments.len()
            )));
        }
        Ok(Self::assemble(samples, steps, dims, seed, increments))
    }

    fn assemble(samples: usize, steps: usize, dims: usize, seed: u64, increments: Vec<f64>) -> Self {
        let mut positions = vec![0.0; samples * (steps + 1) * dims];
        positions
            .par_chunks_mut((steps + 1) * dims)
            .zip(increments.par_chunks(steps * dims))
            .for_each(|(pos, inc)| {
                for j in 0..steps {
                    for i in 0..dims {
                        pos[(j + 1) * dims + i] = pos[j * dims + i] + inc[j * dims + i];
                    }
                }
            });
        Self {
            samples,
            steps,
            dims,
            seed,
            increments,
            positions,
        }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `W(t_j) - W(t_{j-1})` for sample `s`, `j >= 1`.
    pub fn increment(&self, s: usize, j: usize) -> &[f64] {
        let start = (s * self.steps + j - 1) * self.dims;
        &self.increments[start..start + self.dims]
    }

    /// `W(t_j)` for sample `s`.
    pub fn position(&self, s: usize, j: usize) -> &[f64] {
        let start = (s * (self.steps + 1) + j) * self.dims;
        &self.positions[start..start + self.dims]
    }

    /// Trajectory `W(t_0), ..., W(t_{n0})` of sample `s`, `[j][dim]`.
    pub fn trajectory(&self, s: usize) -> &[f64] {
        let len = (self.steps + 1) * self.dims;
        &self.positions[s * len..(s + 1) * len]
    }

    /// `W(t_j)` for every sample, `[sample][dim]`.
    pub fn positions_at(&self, j: usize) -> Vec<f64> {
        (0..self.samples)
            .flat_map(|s| self.position(s, j).iter().copied())
            .collect()
    }

    /// `W(t_j) - W(t_{j-1})` for every sample, `[sample][dim]`.
    pub fn increments_at(&self, j: usize) -> Vec<f64> {
        (0..self.samples)
            .flat_map(|s| self.increment(s, j).iter().copied())
            .collect()
    }

    /// Aggregate blocks of `factor` consecutive increments, giving the same
    /// paths observed on a coarser time grid.
    pub fn coarsen(&self, factor: usize) -> Result<Self, StochasticsError> {
        if factor == 0 || self.steps % factor != 0 {
            return Err(StochasticsError::ShapeMismatch(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps
            )));
        }
        let steps = self.steps / factor;
        let d = self.dims;
        let mut increments = vec![0.0; self.samples * steps * d];
        for s in 0..self.samples {
            for j in 0..steps {
                for i in 0..d {
                    let start = self.position(s, j * factor)[i];
                    let end = self.position(s, (j + 1) * factor)[i];
                    increments[(s * steps + j) * d + i] = end - start;
                }
            }
        }
        let mut out = Self::assemble(self.samples, steps, d, self.seed, increments);
        // keep positions bitwise equal to the fine path at shared times
        for s in 0..self.samples {
            for j in 0..=steps {
                for i in 0..d {
                    out.positions[(s * (steps + 1) + j) * d + i] = self.position(s, j * factor)[i];
                }
            }
        }
        Ok(out)
    }
}

/// Free-function form of [`BrownianPaths::simulate`].
pub fn simulate_increments(
    partition: &Partition,
    dims: usize,
    samples: usize,
    seed: u64,
) -> Result<BrownianPaths, StochasticsError> {
    BrownianPaths::simulate(partition, dims, samples, seed)
}
