use statrs::function::factorial::ln_factorial;
use statrs::function::gamma::ln_gamma;

use super::{DerivativeStack, GridError, Partition};

/// Discrete `C^k` norm: the largest absolute value over orders `0..=k`,
/// all multi-indices, components and lattice points.
pub fn ck_norm(stack: &DerivativeStack, k: usize) -> Result<f64, GridError> {
    if k > stack.max_order() {
        return Err(GridError::OrderMismatch {
            requested: k,
            available: stack.max_order(),
        });
    }
    Ok((0..=k).map(|c| stack.order_sup(c)).fold(0.0, f64::max))
}

/// Weights `xi(c) = 1 / ((c^10)! * eta(c)! * e^c)` of the truncated
/// `C^infinity` norm, with `eta(c) = [max_D |x|_1]^c` and `[r] = 1 + floor(r)`.
///
/// `xi(c)` underflows for `c >= 2`, so the weights are kept as logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct NormWeights {
    log_weights: Vec<f64>,
}

impl NormWeights {
    pub fn new(max_order: usize, l1_radius: f64) -> Self {
        let bracket = 1.0 + l1_radius.floor();
        let log_weights = (0..=max_order)
            .map(|c| {
                let c_f = c as f64;
                let eta = bracket.powi(c as i32);
                -(ln_fact(c_f.powi(10)) + ln_fact(eta) + c_f)
            })
            .collect();
        Self { log_weights }
    }

    pub fn for_partition(max_order: usize, partition: &Partition) -> Self {
        Self::new(max_order, partition.l1_radius())
    }

    pub fn max_order(&self) -> usize {
        self.log_weights.len() - 1
    }

    pub fn log_weight(&self, c: usize) -> f64 {
        self.log_weights[c]
    }

    /// `xi(c)` as a float; zero once it underflows.
    pub fn weight(&self, c: usize) -> f64 {
        self.log_weights[c].exp()
    }
}

/// `ln(n!)` for a nonnegative integer stored as a float.
fn ln_fact(n: f64) -> f64 {
    if n < u64::MAX as f64 {
        ln_factorial(n as u64)
    } else {
        ln_gamma(n + 1.0)
    }
}

/// `sqrt(sum_{c <= c_max} xi(c) ||f||_{C^c}^2)`.
pub fn cinf_truncated_norm(stack: &DerivativeStack, weights: &NormWeights) -> Result<f64, GridError> {
    let mut sum = 0.0;
    for c in 0..=weights.max_order() {
        let norm = ck_norm(stack, c)?;
        if norm > 0.0 {
            sum += (weights.log_weight(c) + 2.0 * norm.ln()).exp();
        }
    }
    Ok(sum.sqrt())
}
