use rayon::prelude::*;

use super::brownian::{BrownianPaths, NormalStream};
use super::StochasticsError;
use crate::grid::Partition;

/// Per-sample nested Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedEstimate {
    pub values: Vec<f64>,
    pub standard_errors: Vec<f64>,
}

/// Brute-force `E[F(W) | F_{t_branch}]` for every outer sample.
///
/// The functional receives a full trajectory `W(t_0), ..., W(t_{n0})` laid out
/// `[j][dim]`, whose prefix up to `branch` is the outer path and whose
/// remainder is a fresh continuation.
pub fn condexp_nested<F>(
    paths: &BrownianPaths,
    partition: &Partition,
    branch: usize,
    inner: usize,
    seed: u64,
    functional: F,
) -> Result<NestedEstimate, StochasticsError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if inner == 0 {
        return Err(StochasticsError::InvalidSpec(
            "nested inner sample count must be at least 1".into(),
        ));
    }
    if paths.steps() != partition.time_steps() || branch > paths.steps() {
        return Err(StochasticsError::ShapeMismatch(format!(
            "branch index {branch} on {} path steps over a {}-step partition",
            paths.steps(),
            partition.time_steps()
        )));
    }
    let d = paths.dims();
    let steps = paths.steps();
    let sd: Vec<f64> = (1..=steps).map(|j| partition.step(j).sqrt()).collect();
    let (values, standard_errors) = (0..paths.samples())
        .into_par_iter()
        .map(|s| {
            let mut path = paths.trajectory(s).to_vec();
            let mut stream = NormalStream::inner(seed, branch, s);
            let (mut mean, mut m2) = (0.0, 0.0);
            for n in 1..=inner {
                for j in branch..steps {
                    for i in 0..d {
                        path[(j + 1) * d + i] = path[j * d + i] + sd[j] * stream.next_standard();
                    }
                }
                let y = functional(&path);
                let delta = y - mean;
                mean += delta / n as f64;
                m2 += delta * (y - mean);
            }
            let se = if inner > 1 {
                (m2 / ((inner - 1) * inner) as f64).sqrt()
            } else {
                0.0
            };
            (mean, se)
        })
        .unzip();
    Ok(NestedEstimate {
        values,
        standard_errors,
    })
}
