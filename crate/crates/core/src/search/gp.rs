//! Gaussian-process surrogate with a squared-exponential ARD kernel.
//!
//! Objectives are standardized before fitting; [`SurrogateState::posterior`]
//! reports mean and variance back in the caller's units. Hyperparameters are
//! chosen by maximizing the log marginal likelihood with a multi-start
//! coordinate search in log space.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::doe::SobolSeq;
use crate::linalg::{cholesky_in_place, dot, solve_lower, solve_lower_transpose};

/// Smallest admissible noise variance.
pub const NOISE_FLOOR: f64 = 1e-10;
/// Jitter added on Cholesky failure starts here and grows ×10 up to [`MAX_JITTER`].
pub const INITIAL_JITTER: f64 = 1e-10;
pub const MAX_JITTER: f64 = 1e-4;

pub const LENGTHSCALE_BOUNDS: (f64, f64) = (1e-3, 10.0);
pub const SIGNAL_VAR_BOUNDS: (f64, f64) = (1e-4, 1e4);
pub const NOISE_VAR_BOUNDS: (f64, f64) = (NOISE_FLOOR, 1e-1);
pub const RESTARTS: usize = 8;
pub const ITERATIONS: usize = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GpError {
    #[error("GP needs at least 2 observations, got {0}")]
    TooFewPoints(usize),
    #[error("expected {expected}-dimensional inputs, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("kernel matrix is not positive definite even with jitter {MAX_JITTER}")]
    SingularKernel,
    #[error("invalid kernel parameters: {0}")]
    InvalidKernel(String),
    #[error("objective values must be finite")]
    NonFiniteTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl KernelParams {
    pub fn isotropic(dim: usize, lengthscale: f64, signal_var: f64, noise_var: f64) -> Self {
        KernelParams { lengthscales: vec![lengthscale; dim], signal_var, noise_var }
    }

    /// Starting point for hyperparameter search on standardized data.
    pub fn default_for(dim: usize) -> Self {
        Self::isotropic(dim, 0.3, 1.0, 1e-6)
    }

    pub fn check(&self) -> Result<(), GpError> {
        if self.lengthscales.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(GpError::InvalidKernel("lengthscales must be positive".into()));
        }
        if !(self.signal_var > 0.0) || !self.signal_var.is_finite() {
            return Err(GpError::InvalidKernel("signal variance must be positive".into()));
        }
        if !(self.noise_var >= NOISE_FLOOR) || !self.noise_var.is_finite() {
            return Err(GpError::InvalidKernel(format!("noise variance must be at least {NOISE_FLOOR}")));
        }
        Ok(())
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let r2: f64 = a
            .iter()
            .zip(b)
            .zip(&self.lengthscales)
            .map(|((x, y), l)| {
                let t = (x - y) / l;
                t * t
            })
            .sum();
        self.signal_var * (-0.5 * r2).exp()
    }

    fn to_log(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_var.ln());
        v.push(self.noise_var.ln());
        v
    }

    fn from_log(theta: &[f64]) -> Self {
        let d = theta.len() - 2;
        KernelParams {
            lengthscales: theta[..d].iter().map(|t| t.exp()).collect(),
            signal_var: theta[d].exp(),
            noise_var: theta[d + 1].exp(),
        }
    }
}

/// A fitted GP posterior.
#[derive(Debug, Clone)]
pub struct SurrogateState {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    kernel: KernelParams,
    /// Lower Cholesky factor of `K + (noise + jitter) I`, row-major.
    chol: Vec<f64>,
    alpha: Vec<f64>,
    jitter: f64,
}

impl SurrogateState {
    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.kernel.lengthscales.len()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    /// Standardized targets.
    pub fn standardized_targets(&self) -> &[f64] {
        &self.y
    }

    /// `(mean, scale)` used to standardize the targets.
    pub fn standardization(&self) -> (f64, f64) {
        (self.y_mean, self.y_scale)
    }

    /// Jitter added on top of the kernel's noise variance to obtain a factor.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Effective diagonal term in the factored matrix.
    pub fn effective_noise(&self) -> f64 {
        self.kernel.noise_var + self.jitter
    }

    /// Lower Cholesky factor, row-major `n × n`.
    pub fn cholesky_factor(&self) -> &[f64] {
        &self.chol
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.y.len();
        let log_det: f64 = (0..n).map(|i| self.chol[i * n + i].ln()).sum();
        -0.5 * dot(&self.y, &self.alpha) - log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    /// Posterior mean and variance of the latent function at `x`, standardized.
    pub fn posterior_standardized(&self, x: &[f64]) -> (f64, f64) {
        let n = self.x.len();
        let kx: Vec<f64> = self.x.iter().map(|xi| self.kernel.eval(xi, x)).collect();
        let mean = dot(&kx, &self.alpha);
        let v = solve_lower(&self.chol, n, &kx);
        (mean, clamp_variance(self.kernel.signal_var - dot(&v, &v)))
    }

    /// Posterior mean and variance at `x`, in the units of the fitted targets.
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let (m, v) = self.posterior_standardized(x);
        (self.y_mean + self.y_scale * m, v * self.y_scale * self.y_scale)
    }
}

fn clamp_variance(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

fn standardize(y: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = if var.sqrt() > 1e-12 * mean.abs().max(1.0) { var.sqrt() } else { 1.0 };
    (y.iter().map(|v| (v - mean) / scale).collect(), mean, scale)
}

fn check_inputs(x: &[Vec<f64>], y: &[f64]) -> Result<usize, GpError> {
    if x.len() < 2 || x.len() != y.len() {
        return Err(GpError::TooFewPoints(x.len().min(y.len())));
    }
    let d = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(GpError::DimensionMismatch { expected: d, got: bad.len() });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(GpError::NonFiniteTarget);
    }
    Ok(d)
}

/// Factors `K + noise I`, escalating jitter ×10 from [`INITIAL_JITTER`] to
/// [`MAX_JITTER`] on failure. Returns the factor and the jitter used.
fn factor(x: &[Vec<f64>], kernel: &KernelParams) -> Result<(Vec<f64>, f64), GpError> {
    let n = x.len();
    let mut base = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let k = kernel.eval(&x[i], &x[j]);
            base[i * n + j] = k;
            base[j * n + i] = k;
        }
    }
    let mut jitter = 0.0;
    loop {
        let mut a = base.clone();
        for i in 0..n {
            a[i * n + i] += kernel.noise_var + jitter;
        }
        if cholesky_in_place(&mut a, n).is_ok() {
            return Ok((a, jitter));
        }
        jitter = if jitter == 0.0 { INITIAL_JITTER } else { jitter * 10.0 };
        if jitter > MAX_JITTER * (1.0 + 1e-9) {
            return Err(GpError::SingularKernel);
        }
    }
}

fn build(x: &[Vec<f64>], ys: Vec<f64>, y_mean: f64, y_scale: f64, kernel: KernelParams) -> Result<SurrogateState, GpError> {
    let (chol, jitter) = factor(x, &kernel)?;
    let n = x.len();
    let alpha = solve_lower_transpose(&chol, n, &solve_lower(&chol, n, &ys));
    Ok(SurrogateState { x: x.to_vec(), y: ys, y_mean, y_scale, kernel, chol, alpha, jitter })
}

/// Fits the GP with the given kernel, skipping hyperparameter search.
pub fn gp_fit_fixed(x: &[Vec<f64>], y: &[f64], kernel: &KernelParams) -> Result<SurrogateState, GpError> {
    let d = check_inputs(x, y)?;
    kernel.check()?;
    if kernel.lengthscales.len() != d {
        return Err(GpError::DimensionMismatch { expected: kernel.lengthscales.len(), got: d });
    }
    let (ys, mean, scale) = standardize(y);
    build(x, ys, mean, scale, kernel.clone())
}

/// Fits the GP, choosing hyperparameters by maximizing the log marginal
/// likelihood. `initial` seeds the first of [`RESTARTS`] coordinate searches;
/// the others start from Sobol points of the log-hyperparameter box.
pub fn gp_fit(x: &[Vec<f64>], y: &[f64], initial: &KernelParams) -> Result<SurrogateState, GpError> {
    let d = check_inputs(x, y)?;
    initial.check()?;
    if initial.lengthscales.len() != d {
        return Err(GpError::DimensionMismatch { expected: initial.lengthscales.len(), got: d });
    }
    let (ys, mean, scale) = standardize(y);

    let bounds: Vec<(f64, f64)> = std::iter::repeat_n(LENGTHSCALE_BOUNDS, d)
        .chain([SIGNAL_VAR_BOUNDS, NOISE_VAR_BOUNDS])
        .map(|(lo, hi)| (lo.ln(), hi.ln()))
        .collect();
    let objective = |theta: &[f64]| -> f64 {
        match build(x, ys.clone(), mean, scale, KernelParams::from_log(theta)) {
            Ok(s) => s.log_marginal_likelihood(),
            Err(_) => f64::NEG_INFINITY,
        }
    };

    let mut starts = vec![clamp_theta(initial.to_log(), &bounds)];
    if let Some(mut seq) = SobolSeq::new(d + 2) {
        for _ in 1..RESTARTS {
            let u = seq.next_point();
            starts.push(bounds.iter().zip(u).map(|(&(lo, hi), u)| lo + u * (hi - lo)).collect());
        }
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in starts {
        let (val, theta) = coordinate_search(start, &bounds, &objective);
        if best.as_ref().is_none_or(|(b, _)| val > *b) {
            best = Some((val, theta));
        }
    }
    let (best_val, theta) = best.expect("at least one start");
    if best_val == f64::NEG_INFINITY {
        return Err(GpError::SingularKernel);
    }
    build(x, ys, mean, scale, KernelParams::from_log(&theta))
}

fn clamp_theta(mut theta: Vec<f64>, bounds: &[(f64, f64)]) -> Vec<f64> {
    for (t, &(lo, hi)) in theta.iter_mut().zip(bounds) {
        *t = t.clamp(lo, hi);
    }
    theta
}

fn coordinate_search(mut theta: Vec<f64>, bounds: &[(f64, f64)], f: &impl Fn(&[f64]) -> f64) -> (f64, Vec<f64>) {
    let mut val = f(&theta);
    let mut step = 1.0;
    for _ in 0..ITERATIONS {
        let mut improved = false;
        for j in 0..theta.len() {
            for dir in [1.0, -1.0] {
                let mut cand = theta.clone();
                cand[j] = (cand[j] + dir * step).clamp(bounds[j].0, bounds[j].1);
                if cand[j] == theta[j] {
                    continue;
                }
                let v = f(&cand);
                if v > val {
                    val = v;
                    theta = cand;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < 1e-3 {
                break;
            }
        }
    }
    (val, theta)
}

/// Posterior mean and variance at `x` (see [`SurrogateState::posterior`]).
pub fn gp_posterior(state: &SurrogateState, x: &[f64]) -> (f64, f64) {
    state.posterior(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn near_interpolation_after_fit() {
        let s = gp_fit(&pts(&[0.2, 0.8]), &[0.0, 1.0], &KernelParams::default_for(1)).unwrap();
        let (m, _) = s.posterior(&[0.2]);
        let bound = 3.0 * s.kernel().noise_var.sqrt() * s.standardization().1;
        assert!(m.abs() <= bound.max(1e-9), "mean {m} bound {bound}");
    }

    #[test]
    fn duplicate_rows_with_different_targets() {
        let x = pts(&[0.5, 0.5, 0.1]);
        let y = [1.0, 2.0, 0.0];
        assert!(gp_fit(&x, &y, &KernelParams::default_for(1)).is_ok());
        let fixed = KernelParams::isotropic(1, 0.2, 1.0, NOISE_FLOOR);
        let s = gp_fit_fixed(&x, &y, &fixed).unwrap();
        let (m, v) = s.posterior(&[0.5]);
        assert!((m - 1.5).abs() < 1e-3, "{m}");
        assert!(v.is_finite() && v >= 0.0);
    }

    #[test]
    fn constant_targets_give_negligible_uncertainty() {
        let x = pts(&[0.1, 0.4, 0.9]);
        let s = gp_fit(&x, &[3.0, 3.0, 3.0], &KernelParams::default_for(1)).unwrap();
        for xi in &x {
            let (m, v) = s.posterior(xi);
            assert!((m - 3.0).abs() < 1e-6);
            assert!(v <= NOISE_VAR_BOUNDS.1);
        }
    }

    #[test]
    fn interpolates_at_noise_floor() {
        let x = vec![vec![0.1, 0.3], vec![0.6, 0.2], vec![0.8, 0.9]];
        let y = [1.5, -2.0, 0.25];
        let s = gp_fit_fixed(&x, &y, &KernelParams::isotropic(2, 0.3, 1.0, NOISE_FLOOR)).unwrap();
        for (xi, yi) in x.iter().zip(y) {
            assert!((s.posterior(xi).0 - yi).abs() < 1e-6);
        }
    }

    #[test]
    fn reverts_to_prior_far_away() {
        // y = (-1, 1) has mean 0 and unit population variance, so the
        // standardized and raw scales coincide.
        let s = gp_fit_fixed(&pts(&[0.0, 0.05]), &[-1.0, 1.0], &KernelParams::isotropic(1, 0.02, 1.7, 1e-6)).unwrap();
        let (m, v) = s.posterior(&[0.99]);
        assert!(m.abs() < 1e-9);
        assert!((v - 1.7).abs() / 1.7 < 0.01);
    }

    #[test]
    fn variance_clamp() {
        assert_eq!(clamp_variance(-1e-12), 0.0);
        assert_eq!(clamp_variance(2.0), 2.0);
    }

    #[test]
    fn factor_reconstructs_kernel_matrix() {
        let x = vec![vec![0.1, 0.2], vec![0.4, 0.4], vec![0.9, 0.1], vec![0.3, 0.8]];
        let y = [0.3, 1.0, -0.4, 2.0];
        let s = gp_fit(&x, &y, &KernelParams::default_for(2)).unwrap();
        let n = x.len();
        let l = s.cholesky_factor();
        let (mut err, mut norm) = (0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let llt: f64 = (0..n).map(|k| l[i * n + k] * l[j * n + k]).sum();
                let mut k = s.kernel().eval(&x[i], &x[j]);
                if i == j {
                    k += s.effective_noise();
                }
                err += (llt - k).powi(2);
                norm += k * k;
            }
        }
        assert!((err / norm).sqrt() < 1e-8);
        let ys = s.standardized_targets();
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hyperparameters_stay_in_bounds() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 12.0, ((i * 7) % 12) as f64 / 12.0]).collect();
        let y: Vec<f64> = x.iter().map(|p| (6.0 * p[0]).sin() + p[1]).collect();
        let s = gp_fit(&x, &y, &KernelParams::default_for(2)).unwrap();
        let k = s.kernel();
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo * (1.0 - 1e-12) && v <= hi * (1.0 + 1e-12);
        assert!(k.lengthscales.iter().all(|&l| inside(l, LENGTHSCALE_BOUNDS)));
        assert!(inside(k.signal_var, SIGNAL_VAR_BOUNDS));
        assert!(inside(k.noise_var, NOISE_VAR_BOUNDS));
        let start = gp_fit_fixed(&x, &y, &KernelParams::default_for(2)).unwrap();
        assert!(s.log_marginal_likelihood() >= start.log_marginal_likelihood());
    }

    #[test]
    fn input_errors() {
        let k = KernelParams::default_for(1);
        assert_eq!(gp_fit(&pts(&[0.1]), &[1.0], &k).unwrap_err(), GpError::TooFewPoints(1));
        assert!(matches!(gp_fit(&[vec![0.1], vec![0.2, 0.3]], &[1.0, 2.0], &k), Err(GpError::DimensionMismatch { .. })));
        assert_eq!(gp_fit(&pts(&[0.1, 0.2]), &[1.0, f64::NAN], &k).unwrap_err(), GpError::NonFiniteTarget);
        let bad = KernelParams::isotropic(1, 0.1, 1.0, 0.0);
        assert!(matches!(gp_fit_fixed(&pts(&[0.1, 0.2]), &[1.0, 2.0], &bad), Err(GpError::InvalidKernel(_))));
    }
}
