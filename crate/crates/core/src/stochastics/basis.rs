//! Total-degree monomial bases in the Brownian state and their exact
//! Gaussian transition moments.

/// Monomials `prod_i (w_i / s_i)^{a_i}` with `|a| <= degree`, ordered by
/// total degree and then by exponent tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialBasis {
    dims: usize,
    degree: usize,
    exponents: Vec<Vec<u32>>,
}

impl PolynomialBasis {
    pub fn new(dims: usize, degree: usize) -> Self {
        let mut exponents = Vec::new();
        for total in 0..=degree {
            let mut level = Vec::new();
            let mut current = vec![0u32; dims];
            collect(total as u32, 0, &mut current, &mut level);
            level.sort_by(|a, b| b.cmp(a));
            exponents.extend(level);
        }
        Self {
            dims,
            degree,
            exponents,
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    /// Evaluate every basis function at `state / scale`.
    pub fn evaluate(&self, state: &[f64], scale: &[f64], out: &mut [f64]) {
        let mut powers = [[1.0f64; MAX_POWERS]; MAX_STATE_DIMS];
        self.fill_powers(state, scale, &mut powers);
        for (slot, exps) in out.iter_mut().zip(&self.exponents) {
            *slot = exps
                .iter()
                .enumerate()
                .map(|(i, &a)| powers[i][a as usize])
                .product();
        }
    }

    /// `E[psi_a((w + Z) / s)]` and, when `weighted` is given,
    /// `E[psi_a((w + Z) / s) Z_i]` for `Z ~ N(0, variance I)`.
    ///
    /// `weighted` is laid out `[basis][dim]`.
    pub fn gaussian_moments(
        &self,
        state: &[f64],
        scale: &[f64],
        variance: f64,
        plain: &mut [f64],
        weighted: Option<&mut [f64]>,
    ) {
        // per dimension: E[(w+Z)^a] / s^a and E[(w+Z)^a Z] / s^a
        let mut m = [[0.0f64; MAX_POWERS]; MAX_STATE_DIMS];
        let mut g = [[0.0f64; MAX_POWERS]; MAX_STATE_DIMS];
        for i in 0..self.dims {
            for a in 0..=self.degree {
                let norm = scale[i].powi(a as i32);
                m[i][a] = shifted_moment(state[i], a as u32, variance) / norm;
                g[i][a] = shifted_weighted_moment(state[i], a as u32, variance) / norm;
            }
        }
        for (slot, exps) in plain.iter_mut().zip(&self.exponents) {
            *slot = exps
                .iter()
                .enumerate()
                .map(|(i, &a)| m[i][a as usize])
                .product();
        }
        if let Some(weighted) = weighted {
            for (b, exps) in self.exponents.iter().enumerate() {
                for i in 0..self.dims {
                    let mut v = g[i][exps[i] as usize];
                    for (i2, &a2) in exps.iter().enumerate() {
                        if i2 != i {
                            v *= m[i2][a2 as usize];
                        }
                    }
                    weighted[b * self.dims + i] = v;
                }
            }
        }
    }

    fn fill_powers(&self, state: &[f64], scale: &[f64], powers: &mut [[f64; MAX_POWERS]; MAX_STATE_DIMS]) {
        for i in 0..self.dims {
            let y = state[i] / scale[i];
            for a in 1..=self.degree {
                powers[i][a] = powers[i][a - 1] * y;
            }
        }
    }
}

/// Basis sizes above these bounds are rejected by `EstimatorSpec::validate`.
pub const MAX_STATE_DIMS: usize = 8;
pub const MAX_POWERS: usize = 9;

fn collect(remaining: u32, axis: usize, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if axis + 1 == current.len() {
        current[axis] = remaining;
        out.push(current.clone());
        return;
    }
    for a in 0..=remaining {
        current[axis] = a;
        collect(remaining - a, axis + 1, current, out);
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `E[Z^k]` for `Z ~ N(0, variance)`.
pub(crate) fn gaussian_moment(k: u32, variance: f64) -> f64 {
    if k % 2 == 1 {
        return 0.0;
    }
    let double_factorial: f64 = (1..k).step_by(2).map(|v| v as f64).product();
    double_factorial * variance.powi((k / 2) as i32)
}

/// `E[(w + Z)^a]`.
fn shifted_moment(w: f64, a: u32, variance: f64) -> f64 {
    (0..=a)
        .step_by(2)
        .map(|k| binomial(a, k) * w.powi((a - k) as i32) * gaussian_moment(k, variance))
        .sum()
}

/// `E[(w + Z)^a Z]`.
fn shifted_weighted_moment(w: f64, a: u32, variance: f64) -> f64 {
    (1..=a)
        .step_by(2)
        .map(|k| binomial(a, k) * w.powi((a - k) as i32) * gaussian_moment(k + 1, variance))
        .sum()
}
