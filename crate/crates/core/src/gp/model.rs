use std::sync::atomic::{AtomicUsize, Ordering};

use super::kernel::KernelParams;
use super::linalg::{cho_solve, cholesky, solve_lower};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::real::Real;
use crate::stats;

/// Jitter starts at this multiple of the mean kernel diagonal...
const JITTER_START: f64 = 1e-12;
/// ...and grows tenfold up to this multiple before giving up.
const JITTER_MAX: f64 = 1e-4;
/// Negative posterior variances above this are rounding noise.
const NEGATIVE_VARIANCE_TOLERANCE: f64 = -1e-8;

/// A trained GP regressor with its cached factorization.
#[derive(Debug)]
pub struct GpModel<T: Real> {
    inputs: Matrix<T>,
    targets: Vec<T>,
    prior_mean: T,
    params: KernelParams<T>,
    noise_var: Vec<T>,
    jitter: T,
    chol: Vec<T>,
    alpha: Vec<T>,
    input_shift: Vec<T>,
    input_scale: Vec<T>,
    clamped: AtomicUsize,
}

impl<T: Real> Clone for GpModel<T> {
    fn clone(&self) -> Self {
        GpModel {
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
            prior_mean: self.prior_mean,
            params: self.params.clone(),
            noise_var: self.noise_var.clone(),
            jitter: self.jitter,
            chol: self.chol.clone(),
            alpha: self.alpha.clone(),
            input_shift: self.input_shift.clone(),
            input_scale: self.input_scale.clone(),
            clamped: AtomicUsize::new(self.clamped.load(Ordering::Relaxed)),
        }
    }
}

pub(crate) struct Factor<T> {
    pub chol: Vec<T>,
    pub jitter: T,
}

/// Builds `K + diag(noise) + jitter I` and factorizes it, escalating the
/// jitter tenfold from `start` until it succeeds.
pub(crate) fn factorize<T: Real>(
    inputs: &Matrix<T>,
    noise_var: &[T],
    params: &KernelParams<T>,
    start: Option<T>,
) -> Result<Factor<T>> {
    let n = inputs.rows();
    let mut k = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let v = params.eval_unchecked(inputs.row(i), inputs.row(j));
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    let scale = params.amplitude();
    let mut jitter = start.unwrap_or(scale * T::lit(JITTER_START));
    let max = scale * T::lit(JITTER_MAX);
    loop {
        let mut a = k.clone();
        for i in 0..n {
            a[i * n + i] += noise_var[i] + jitter;
        }
        if let Some(chol) = cholesky(&a, n) {
            return Ok(Factor { chol, jitter });
        }
        if jitter >= max {
            return Err(Error::Factorization { jitter: jitter.as_f64() });
        }
        jitter = (jitter * T::lit(10.0)).min(max);
    }
}

impl<T: Real> GpModel<T> {
    /// Builds a model with fixed hyperparameters. The prior mean defaults to
    /// the sample mean of the targets.
    pub fn new(
        inputs: Matrix<T>,
        targets: Vec<T>,
        noise_var: Vec<T>,
        params: KernelParams<T>,
        prior_mean: Option<T>,
    ) -> Result<Self> {
        Self::with_jitter(inputs, targets, noise_var, params, prior_mean, None)
    }

    pub(crate) fn with_jitter(
        inputs: Matrix<T>,
        targets: Vec<T>,
        noise_var: Vec<T>,
        params: KernelParams<T>,
        prior_mean: Option<T>,
        jitter: Option<T>,
    ) -> Result<Self> {
        let n = inputs.rows();
        if n == 0 {
            return Err(Error::input("GP needs at least one training point"));
        }
        Error::check_dim(n, targets.len())?;
        Error::check_dim(n, noise_var.len())?;
        Error::check_dim(params.dim(), inputs.cols())?;
        params.validate()?;
        if noise_var.iter().any(|v| !(v.is_finite() && *v >= T::zero())) {
            return Err(Error::input("noise variances must be finite and non-negative"));
        }
        if targets.iter().chain(inputs.as_slice()).any(|v| !v.is_finite()) {
            return Err(Error::input("training data must be finite"));
        }
        let prior_mean = prior_mean.unwrap_or_else(|| stats::mean(&targets));
        let Factor { chol, jitter } = factorize(&inputs, &noise_var, &params, jitter)?;
        let resid: Vec<T> = targets.iter().map(|y| *y - prior_mean).collect();
        let alpha = cho_solve(&chol, n, &resid);
        let (input_shift, input_scale) = standardization(&inputs);
        Ok(GpModel {
            inputs,
            targets,
            prior_mean,
            params,
            noise_var,
            jitter,
            chol,
            alpha,
            input_shift,
            input_scale,
            clamped: AtomicUsize::new(0),
        })
    }

    pub fn inputs(&self) -> &Matrix<T> {
        &self.inputs
    }

    pub fn targets(&self) -> &[T] {
        &self.targets
    }

    pub fn prior_mean(&self) -> T {
        self.prior_mean
    }

    pub fn params(&self) -> &KernelParams<T> {
        &self.params
    }

    pub fn noise_var(&self) -> &[T] {
        &self.noise_var
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Per-feature mean and standard deviation of the training inputs. The
    /// optimizer searches lengthscales relative to these scales.
    pub fn standardization(&self) -> (&[T], &[T]) {
        (&self.input_shift, &self.input_scale)
    }

    pub(crate) fn set_standardization(&mut self, shift: Vec<T>, scale: Vec<T>) {
        self.input_shift = shift;
        self.input_scale = scale;
    }

    /// Number of predictions whose variance was clamped up to zero.
    pub fn clamped_variances(&self) -> usize {
        self.clamped.load(Ordering::Relaxed)
    }

    /// `-1/2 r^T (K+S)^{-1} r - 1/2 log|K+S| - n/2 log 2 pi`, `r = y - m`.
    pub fn log_marginal_likelihood(&self) -> T {
        let n = self.targets.len();
        let fit: T = self
            .targets
            .iter()
            .zip(&self.alpha)
            .map(|(y, a)| (*y - self.prior_mean) * *a)
            .sum();
        let log_det: T = (0..n).map(|i| self.chol[i * n + i].ln()).sum::<T>() * T::lit(2.0);
        let two_pi = T::lit(2.0 * std::f64::consts::PI);
        -(fit + log_det + T::from_usize_lossy(n) * two_pi.ln()) / T::lit(2.0)
    }

    /// Posterior mean and variance before clamping.
    pub fn predict_unclamped(&self, x: &[T]) -> Result<(T, T)> {
        Error::check_dim(self.input_dim(), x.len())?;
        let n = self.targets.len();
        let mut kx: Vec<T> =
            self.inputs.iter_rows().map(|xi| self.params.eval_unchecked(x, xi)).collect();
        let mean = self.prior_mean + kx.iter().zip(&self.alpha).map(|(k, a)| *k * *a).sum::<T>();
        solve_lower(&self.chol, n, &mut kx);
        let explained: T = kx.iter().map(|v| *v * *v).sum();
        Ok((mean, self.params.amplitude() - explained))
    }

    /// Posterior mean and variance, the variance clamped at zero.
    pub fn predict(&self, x: &[T]) -> Result<(T, T)> {
        let (mean, var) = self.predict_unclamped(x)?;
        if var < T::zero() {
            self.clamped.fetch_add(1, Ordering::Relaxed);
            if var < T::lit(NEGATIVE_VARIANCE_TOLERANCE) * self.params.amplitude().max(T::one()) {
                log::warn!("posterior variance {var} clamped to zero at {x:?}");
            }
            return Ok((mean, T::zero()));
        }
        Ok((mean, var))
    }
}

pub(crate) fn standardization<T: Real>(inputs: &Matrix<T>) -> (Vec<T>, Vec<T>) {
    (0..inputs.cols())
        .map(|d| {
            let col = inputs.col_values(d);
            let m = stats::mean(&col);
            let s = if col.len() > 1 { stats::std_dev(&col) } else { T::zero() };
            (m, if s > T::zero() && s.is_finite() { s } else { T::one() })
        })
        .unzip()
}
