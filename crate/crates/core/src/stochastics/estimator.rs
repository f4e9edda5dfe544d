//! Conditional expectations `E[. | F_{t_{j-1}}]` over a sample ensemble.
//!
//! Every estimator returns, for a matrix of per-sample targets `Y` observed at
//! `t_j`, both `E[Y | F_{t_{j-1}}]` and `E[Y dW_j | F_{t_{j-1}}]`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::basis::{PolynomialBasis, MAX_POWERS, MAX_STATE_DIMS};
use super::brownian::NormalStream;
use super::StochasticsError;

/// Samples per reduction chunk. Partial sums are always combined in chunk
/// order, which keeps results independent of the worker count.
const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    /// Exact Gaussian transition of a polynomial fit in the current state.
    Analytic,
    /// Least-squares projection on polynomials of the previous state.
    Regression,
    /// Inner Monte Carlo continuations of the fitted current-state polynomial.
    Nested,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    /// Total degree of the polynomial basis.
    pub degree: usize,
    /// Ridge penalty; `None` selects the per-kind default.
    pub ridge: Option<f64>,
    /// Inner continuations per outer sample (nested only).
    pub inner: usize,
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        Self {
            kind: EstimatorKind::Regression,
            degree: 3,
            ridge: None,
            inner: 100,
        }
    }
}

impl EstimatorSpec {
    pub fn analytic(degree: usize) -> Self {
        Self {
            kind: EstimatorKind::Analytic,
            degree,
            ..Self::default()
        }
    }

    pub fn regression(degree: usize) -> Self {
        Self {
            kind: EstimatorKind::Regression,
            degree,
            ..Self::default()
        }
    }

    pub fn nested(degree: usize, inner: usize) -> Self {
        Self {
            kind: EstimatorKind::Nested,
            degree,
            inner,
            ..Self::default()
        }
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = Some(ridge);
        self
    }

    /// Number of basis columns for a `dims`-dimensional state.
    pub fn columns(&self, dims: usize) -> usize {
        PolynomialBasis::new(dims, self.degree).len()
    }

    /// Ridge used for `samples` samples: `1e-8 * S` for regression, zero for
    /// the exact-fit estimators.
    pub fn effective_ridge(&self, samples: usize) -> f64 {
        match (self.ridge, self.kind) {
            (Some(r), _) => r,
            (None, EstimatorKind::Regression) => 1e-8 * samples as f64,
            (None, _) => 0.0,
        }
    }

    pub fn validate(&self, dims: usize) -> Result<(), StochasticsError> {
        if let Some(r) = self.ridge {
            if !(r >= 0.0 && r.is_finite()) {
                return Err(StochasticsError::InvalidSpec(format!(
                    "ridge must be a nonnegative number, got {r}"
                )));
            }
        }
        if self.inner == 0 {
            return Err(StochasticsError::InvalidSpec(
                "nested inner sample count must be at least 1".into(),
            ));
        }
        if self.degree + 1 > MAX_POWERS {
            return Err(StochasticsError::InvalidSpec(format!(
                "basis degree {} exceeds the supported maximum {}",
                self.degree,
                MAX_POWERS - 1
            )));
        }
        if dims == 0 || dims > MAX_STATE_DIMS {
            return Err(StochasticsError::InvalidSpec(format!(
                "noise dimension must be in 1..={MAX_STATE_DIMS}, got {dims}"
            )));
        }
        Ok(())
    }

    /// Both conditional moments of `targets` over one backward step.
    pub fn conditional_moments(
        &self,
        ctx: &StepContext<'_>,
        targets: &TargetMatrix,
    ) -> Result<ConditionalMoments, StochasticsError> {
        ctx.check(targets)?;
        match self.kind {
            EstimatorKind::Analytic | EstimatorKind::Nested => self.exact_fit_moments(ctx, targets),
            EstimatorKind::Regression => self.regression_moments(ctx, targets),
        }
    }

    fn exact_fit_moments(
        &self,
        ctx: &StepContext<'_>,
        targets: &TargetMatrix,
    ) -> Result<ConditionalMoments, StochasticsError> {
        let (s_count, width, d) = (targets.samples, targets.width, ctx.dims);
        let mut out = ConditionalMoments::zeros(s_count, width, d);
        let varying = targets.varying_columns();
        for k in 0..width {
            if !varying.contains(&k) {
                let c = targets.get(0, k);
                for s in 0..s_count {
                    out.plain[s * width + k] = c;
                }
            }
        }
        if varying.is_empty() {
            return Ok(out);
        }

        let basis = PolynomialBasis::new(d, self.degree);
        let scale = rms_scale(ctx.next_state, d);
        let design = Design::new(&basis, ctx.next_state, &scale, s_count)?;
        let rhs_width = varying.len();
        let (gram, rhs) = design.normal_equations(rhs_width, |s, row| {
            for (slot, &k) in row.iter_mut().zip(&varying) {
                *slot = targets.get(s, k);
            }
        });
        let beta = solve_normal(&gram, &rhs, basis.len(), rhs_width, self.effective_ridge(s_count))?;
        out.coefficients = Some(FitCoefficients::new(&basis, &scale, &varying, &beta));

        let b_len = basis.len();
        let variance = ctx.dt;
        let kind = self.kind;
        let inner = self.inner;
        let (seed, step) = (ctx.seed, ctx.step);
        out.plain
            .par_chunks_mut(width)
            .zip(out.weighted.par_chunks_mut(width * d))
            .enumerate()
            .for_each(|(s, (plain, weighted))| {
                let w = &ctx.prev_state[s * d..(s + 1) * d];
                let mut m = vec![0.0; b_len];
                let mut g = vec![0.0; b_len * d];
                match kind {
                    EstimatorKind::Analytic => {
                        basis.gaussian_moments(w, &scale, variance, &mut m, Some(&mut g));
                    }
                    _ => {
                        let mut stream = NormalStream::inner(seed, step, s);
                        let mut psi = vec![0.0; b_len];
                        let mut y = vec![0.0; d];
                        let mut z = vec![0.0; d];
                        let sd = variance.sqrt();
                        for _ in 0..inner {
                            for i in 0..d {
                                z[i] = sd * stream.next_standard();
                                y[i] = w[i] + z[i];
                            }
                            basis.evaluate(&y, &scale, &mut psi);
                            for b in 0..b_len {
                                m[b] += psi[b];
                                for i in 0..d {
                                    g[b * d + i] += psi[b] * z[i];
                                }
                            }
                        }
                        let n = inner as f64;
                        m.iter_mut().chain(g.iter_mut()).for_each(|v| *v /= n);
                    }
                }
                for (c, &k) in varying.iter().enumerate() {
                    let mut p = 0.0;
                    for b in 0..b_len {
                        p += m[b] * beta[b * rhs_width + c];
                    }
                    plain[k] = p;
                    for i in 0..d {
                        let mut acc = 0.0;
                        for b in 0..b_len {
                            acc += g[b * d + i] * beta[b * rhs_width + c];
                        }
                        weighted[k * d + i] = acc;
                    }
                }
            });
        Ok(out)
    }

    fn regression_moments(
        &self,
        ctx: &StepContext<'_>,
        targets: &TargetMatrix,
    ) -> Result<ConditionalMoments, StochasticsError> {
        let (s_count, width, d) = (targets.samples, targets.width, ctx.dims);
        let mut out = ConditionalMoments::zeros(s_count, width, d);
        let inc = ctx.increments;

        if is_degenerate(ctx.prev_state, d) {
            // a deterministic state carries no information: plain sample means
            let mut sums = vec![0.0; width * (1 + d)];
            for s in 0..s_count {
                for k in 0..width {
                    let y = targets.get(s, k);
                    sums[k] += y;
                    for i in 0..d {
                        sums[width + k * d + i] += y * inc[s * d + i];
                    }
                }
            }
            let n = s_count as f64;
            let varying = targets.varying_columns();
            for s in 0..s_count {
                for k in 0..width {
                    let vary = varying.contains(&k);
                    out.plain[s * width + k] = if vary { sums[k] / n } else { targets.get(0, k) };
                    for i in 0..d {
                        // E[c dW | F] = 0 for a target c known at the start of the step
                        out.weighted[(s * width + k) * d + i] =
                            if vary { sums[width + k * d + i] / n } else { 0.0 };
                    }
                }
            }
            return Ok(out);
        }

        let basis = PolynomialBasis::new(d, self.degree);
        let scale = rms_scale(ctx.prev_state, d);
        let design = Design::new(&basis, ctx.prev_state, &scale, s_count)?;
        let varying = targets.varying_columns();
        let nv = varying.len();
        if nv == 0 {
            for s in 0..s_count {
                for k in 0..width {
                    out.plain[s * width + k] = targets.get(0, k);
                }
            }
            return Ok(out);
        }
        let rhs_width = nv * (1 + d);
        let (gram, rhs) = design.normal_equations(rhs_width, |s, row| {
            for (c, &k) in varying.iter().enumerate() {
                let y = targets.get(s, k);
                row[c] = y;
                for i in 0..d {
                    row[nv + c * d + i] = y * inc[s * d + i];
                }
            }
        });
        let beta = solve_normal(&gram, &rhs, basis.len(), rhs_width, self.effective_ridge(s_count))?;
        let plain_beta: Vec<f64> = (0..basis.len())
            .flat_map(|b| beta[b * rhs_width..b * rhs_width + nv].iter().copied())
            .collect();
        out.coefficients = Some(FitCoefficients::new(&basis, &scale, &varying, &plain_beta));

        let fitted = design.fitted(&beta, rhs_width);
        for s in 0..s_count {
            let row = &fitted[s * rhs_width..(s + 1) * rhs_width];
            for k in 0..width {
                out.plain[s * width + k] = targets.get(0, k);
            }
            for (c, &k) in varying.iter().enumerate() {
                out.plain[s * width + k] = row[c];
                out.weighted[(s * width + k) * d..(s * width + k + 1) * d]
                    .copy_from_slice(&row[nv + c * d..nv + (c + 1) * d]);
            }
        }
        Ok(out)
    }
}

/// Per-step inputs shared by every estimator.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub dims: usize,
    /// Step index `j` of the increment `W(t_j) - W(t_{j-1})`.
    pub step: usize,
    pub dt: f64,
    /// `W(t_{j-1})`, `[sample][dim]`.
    pub prev_state: &'a [f64],
    /// `W(t_j)`, `[sample][dim]`.
    pub next_state: &'a [f64],
    /// `W(t_j) - W(t_{j-1})`, `[sample][dim]`.
    pub increments: &'a [f64],
    pub seed: u64,
}

impl StepContext<'_> {
    fn check(&self, targets: &TargetMatrix) -> Result<(), StochasticsError> {
        let expect = targets.samples * self.dims;
        if self.prev_state.len() != expect
            || self.next_state.len() != expect
            || self.increments.len() != expect
        {
            return Err(StochasticsError::ShapeMismatch(format!(
                "{} samples of {}-dimensional noise do not match the state arrays",
                targets.samples, self.dims
            )));
        }
        Ok(())
    }
}

/// Per-sample target values, `[sample][column]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMatrix {
    samples: usize,
    width: usize,
    values: Vec<f64>,
}

impl TargetMatrix {
    pub fn new(samples: usize, width: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), samples * width);
        Self {
            samples,
            width,
            values,
        }
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, sample: usize, column: usize) -> f64 {
        self.values[sample * self.width + column]
    }

    /// Columns whose values are not bitwise identical across samples.
    fn varying_columns(&self) -> Vec<usize> {
        (0..self.width)
            .filter(|&k| {
                let first = self.values[k];
                (1..self.samples).any(|s| self.values[s * self.width + k] != first)
            })
            .collect()
    }
}

/// `E[Y | F]` as `[sample][column]` and `E[Y dW_i | F]` as
/// `[sample][column][dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    pub plain: Vec<f64>,
    pub weighted: Vec<f64>,
    pub coefficients: Option<FitCoefficients>,
}

impl ConditionalMoments {
    fn zeros(samples: usize, width: usize, dims: usize) -> Self {
        Self {
            plain: vec![0.0; samples * width],
            weighted: vec![0.0; samples * width * dims],
            coefficients: None,
        }
    }
}

/// Fitted polynomial coefficients in unscaled monomials of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct FitCoefficients {
    pub exponents: Vec<Vec<u32>>,
    /// Target column of each fitted column.
    pub columns: Vec<usize>,
    /// `[fitted column][basis]`.
    pub values: Vec<f64>,
}

impl FitCoefficients {
    fn new(basis: &PolynomialBasis, scale: &[f64], columns: &[usize], beta: &[f64]) -> Self {
        let b_len = basis.len();
        let width = columns.len();
        let norms: Vec<f64> = basis
            .exponents()
            .iter()
            .map(|e| e.iter().zip(scale).map(|(&a, s)| s.powi(a as i32)).product())
            .collect();
        let mut values = vec![0.0; width * b_len];
        for c in 0..width {
            for b in 0..b_len {
                values[c * b_len + b] = beta[b * width + c] / norms[b];
            }
        }
        Self {
            exponents: basis.exponents().to_vec(),
            columns: columns.to_vec(),
            values,
        }
    }
}

/// Standalone least-squares conditional expectation of one target.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub fitted: Vec<f64>,
    /// Heteroscedasticity-robust standard error of each fitted value.
    pub standard_errors: Vec<f64>,
    pub exponents: Vec<Vec<u32>>,
    /// Coefficients of the unscaled monomials.
    pub coefficients: Vec<f64>,
}

/// Project per-sample `targets` onto polynomials of `state` (`[sample][dim]`).
pub fn condexp_regression(
    targets: &[f64],
    state: &[f64],
    dims: usize,
    spec: &EstimatorSpec,
) -> Result<RegressionFit, StochasticsError> {
    spec.validate(dims)?;
    let s_count = targets.len();
    if state.len() != s_count * dims {
        return Err(StochasticsError::ShapeMismatch(format!(
            "{s_count} targets but {} state values for dimension {dims}",
            state.len()
        )));
    }
    let basis = PolynomialBasis::new(dims, spec.degree);
    if is_degenerate(state, dims) {
        let mean = targets.iter().sum::<f64>() / s_count as f64;
        let var = if s_count > 1 {
            targets.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (s_count - 1) as f64
        } else {
            0.0
        };
        let mut coefficients = vec![0.0; basis.len()];
        coefficients[0] = mean;
        return Ok(RegressionFit {
            fitted: vec![mean; s_count],
            standard_errors: vec![(var / s_count as f64).sqrt(); s_count],
            exponents: basis.exponents().to_vec(),
            coefficients,
        });
    }
    let scale = rms_scale(state, dims);
    let design = Design::new(&basis, state, &scale, s_count)?;
    let (gram, rhs) = design.normal_equations(1, |s, row| row[0] = targets[s]);
    let b_len = basis.len();
    let ridge = spec.effective_ridge(s_count);
    let beta = solve_normal(&gram, &rhs, b_len, 1, ridge)?;
    let fitted = design.fitted(&beta, 1);

    // sandwich covariance (G + rI)^-1 (sum psi psi' e^2) (G + rI)^-1
    let mut meat = vec![0.0; b_len * b_len];
    let mut psi = vec![0.0; b_len];
    for s in 0..s_count {
        basis.evaluate(&state[s * dims..(s + 1) * dims], &scale, &mut psi);
        let e2 = (targets[s] - fitted[s]).powi(2);
        for a in 0..b_len {
            for b in 0..b_len {
                meat[a * b_len + b] += psi[a] * psi[b] * e2;
            }
        }
    }
    let inv = invert_regularized(&gram, b_len, ridge)?;
    let inv = DMatrix::from_row_slice(b_len, b_len, &inv);
    let cov = &inv * DMatrix::from_row_slice(b_len, b_len, &meat) * &inv;
    let standard_errors = (0..s_count)
        .map(|s| {
            basis.evaluate(&state[s * dims..(s + 1) * dims], &scale, &mut psi);
            let v = nalgebra::DVector::from_column_slice(&psi);
            (v.transpose() * &cov * &v)[(0, 0)].max(0.0).sqrt()
        })
        .collect();
    let coeffs = FitCoefficients::new(&basis, &scale, &[0], &beta);
    Ok(RegressionFit {
        fitted,
        standard_errors,
        exponents: coeffs.exponents,
        coefficients: coeffs.values,
    })
}

struct Design<'a> {
    basis: &'a PolynomialBasis,
    state: &'a [f64],
    scale: &'a [f64],
    samples: usize,
}

impl<'a> Design<'a> {
    fn new(
        basis: &'a PolynomialBasis,
        state: &'a [f64],
        scale: &'a [f64],
        samples: usize,
    ) -> Result<Self, StochasticsError> {
        if samples < basis.len() {
            return Err(StochasticsError::InsufficientSamples {
                samples,
                columns: basis.len(),
            });
        }
        Ok(Self {
            basis,
            state,
            scale,
            samples,
        })
    }

    /// `sum psi psi'` (`[B][B]`) and `sum psi rhs'` (`[B][W]`).
    fn normal_equations<F>(&self, width: usize, fill: F) -> (Vec<f64>, Vec<f64>)
    where
        F: Fn(usize, &mut [f64]) + Sync,
    {
        let b_len = self.basis.len();
        let d = self.basis.dims();
        let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..self.samples.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut gram = vec![0.0; b_len * b_len];
                let mut rhs = vec![0.0; b_len * width];
                let mut psi = vec![0.0; b_len];
                let mut row = vec![0.0; width];
                for s in c * CHUNK..((c + 1) * CHUNK).min(self.samples) {
                    self.basis
                        .evaluate(&self.state[s * d..(s + 1) * d], self.scale, &mut psi);
                    fill(s, &mut row);
                    for a in 0..b_len {
                        for b in 0..b_len {
                            gram[a * b_len + b] += psi[a] * psi[b];
                        }
                        for k in 0..width {
                            rhs[a * width + k] += psi[a] * row[k];
                        }
                    }
                }
                (gram, rhs)
            })
            .collect();
        let mut gram = vec![0.0; b_len * b_len];
        let mut rhs = vec![0.0; b_len * width];
        for (g, r) in chunks {
            gram.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            rhs.iter_mut().zip(r).for_each(|(a, b)| *a += b);
        }
        (gram, rhs)
    }

    /// `psi(state_s)' beta` for every sample, `[sample][W]`.
    fn fitted(&self, beta: &[f64], width: usize) -> Vec<f64> {
        let b_len = self.basis.len();
        let d = self.basis.dims();
        let mut out = vec![0.0; self.samples * width];
        out.par_chunks_mut(width).enumerate().for_each(|(s, row)| {
            let mut psi = vec![0.0; b_len];
            self.basis
                .evaluate(&self.state[s * d..(s + 1) * d], self.scale, &mut psi);
            for (k, slot) in row.iter_mut().enumerate() {
                *slot = (0..b_len).map(|b| psi[b] * beta[b * width + k]).sum();
            }
        });
        out
    }
}

fn regularized(gram: &[f64], b_len: usize, ridge: f64) -> DMatrix<f64> {
    let mut g = DMatrix::from_row_slice(b_len, b_len, gram);
    for i in 0..b_len {
        g[(i, i)] += ridge;
    }
    g
}

fn cholesky(
    gram: &[f64],
    b_len: usize,
    ridge: f64,
) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>, StochasticsError> {
    let g = regularized(gram, b_len, ridge);
    let max_diag = (0..b_len).map(|i| g[(i, i)]).fold(0.0, f64::max);
    let chol = g.cholesky().ok_or(StochasticsError::SingularDesign { ridge })?;
    let min_pivot = (0..b_len)
        .map(|i| chol.l_dirty()[(i, i)].powi(2))
        .fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-13 * max_diag) {
        return Err(StochasticsError::SingularDesign { ridge });
    }
    Ok(chol)
}

/// Solve `(G + ridge I) beta = R` for `width` right-hand sides, `[B][W]`.
fn solve_normal(
    gram: &[f64],
    rhs: &[f64],
    b_len: usize,
    width: usize,
    ridge: f64,
) -> Result<Vec<f64>, StochasticsError> {
    let chol = cholesky(gram, b_len, ridge)?;
    let r = DMatrix::from_row_slice(b_len, width, rhs);
    let beta = chol.solve(&r);
    let mut out = vec![0.0; b_len * width];
    for a in 0..b_len {
        for k in 0..width {
            out[a * width + k] = beta[(a, k)];
        }
    }
    Ok(out)
}

fn invert_regularized(gram: &[f64], b_len: usize, ridge: f64) -> Result<Vec<f64>, StochasticsError> {
    let inv = cholesky(gram, b_len, ridge)?.inverse();
    Ok((0..b_len)
        .flat_map(|a| (0..b_len).map(move |b| (a, b)))
        .map(|(a, b)| inv[(a, b)])
        .collect())
}

/// Root-mean-square of each state coordinate, one where it vanishes.
fn rms_scale(state: &[f64], dims: usize) -> Vec<f64> {
    let n = (state.len() / dims).max(1) as f64;
    (0..dims)
        .map(|i| {
            let ms = state.iter().skip(i).step_by(dims).map(|v| v * v).sum::<f64>() / n;
            if ms > 0.0 {
                ms.sqrt()
            } else {
                1.0
            }
        })
        .collect()
}

fn is_degenerate(state: &[f64], dims: usize) -> bool {
    let first = &state[..dims.min(state.len())];
    state.chunks(dims).all(|row| row == first)
}
