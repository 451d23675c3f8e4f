use rand::Rng as _;
use rayon::prelude::*;

use super::kernel::KernelParams;
use super::linalg::{cho_inverse, cho_solve};
use super::model::{factorize, standardization, Factor, GpModel};
use super::optim::minimize_bounded;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::real::Real;
use crate::seeds;
use crate::stats;

/// Multi-start settings for [`fit`].
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Lengthscale search range, relative to each feature's standard deviation.
    pub lengthscale_range: (f64, f64),
    /// Output-scale search range, relative to the target standard deviation.
    pub amplitude_range: (f64, f64),
    pub parallel: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 8,
            seed: 0,
            max_iter: 200,
            lengthscale_range: (1e-2, 1e2),
            amplitude_range: (1e-3, 1e2),
            parallel: true,
        }
    }
}

/// Outcome of every start, for reporting.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub best_start: usize,
    pub start_values: Vec<Option<f64>>,
    /// Objective values along the accepted steps of the winning start.
    pub trace: Vec<f64>,
}

/// Log marginal likelihood and its gradient with respect to
/// `(ln theta0, ln l_1, ..., ln l_k)`.
pub fn lml_with_gradient<T: Real>(
    inputs: &Matrix<T>,
    targets: &[T],
    prior_mean: T,
    noise_var: &[T],
    params: &KernelParams<T>,
) -> Result<(T, Vec<T>)> {
    let n = inputs.rows();
    let k = inputs.cols();
    let Factor { chol, jitter } = factorize(inputs, noise_var, params, None)?;
    let resid: Vec<T> = targets.iter().map(|y| *y - prior_mean).collect();
    let alpha = cho_solve(&chol, n, &resid);
    let inv = cho_inverse(&chol, n);

    let two = T::lit(2.0);
    let fit: T = resid.iter().zip(&alpha).map(|(r, a)| *r * *a).sum();
    let log_det: T = (0..n).map(|i| chol[i * n + i].ln()).sum::<T>() * two;
    let log_2pi = T::lit((2.0 * std::f64::consts::PI).ln());
    let lml = -(fit + log_det + T::from_usize_lossy(n) * log_2pi) / two;

    // d lml = 1/2 tr((alpha alpha^T - inv) dK)
    let sqrt3 = T::lit(3f64.sqrt());
    let amp = params.amplitude();
    let mut grad = vec![T::zero(); k + 1];
    for a in 0..n {
        for b in 0..n {
            let w = alpha[a] * alpha[b] - inv[a * n + b];
            let xa = inputs.row(a);
            let xb = inputs.row(b);
            let r = params.distance(xa, xb);
            let e = (-sqrt3 * r).exp();
            // jitter scales with theta0^2 as well
            let kab = amp * (T::one() + sqrt3 * r) * e + if a == b { jitter } else { T::zero() };
            grad[0] += w * two * kab;
            for d in 0..k {
                let l = params.lengthscales[d];
                let diff = (xa[d] - xb[d]) / l;
                grad[d + 1] += w * T::lit(3.0) * amp * e * diff * diff;
            }
        }
    }
    grad.iter_mut().for_each(|g| *g /= two);
    Ok((lml, grad))
}

/// Fits Matérn-3/2 hyperparameters by maximizing the log marginal
/// likelihood from `options.restarts` starts in log-parameter space. The
/// prior mean is the sample mean of `targets`.
pub fn fit<T: Real>(
    inputs: Matrix<T>,
    targets: Vec<T>,
    noise_var: Vec<T>,
    options: &FitOptions,
) -> Result<(GpModel<T>, FitReport)> {
    let n = inputs.rows();
    let k = inputs.cols();
    if n < 2 {
        return Err(Error::Fit(format!("need at least 2 training points, got {n}")));
    }
    Error::check_dim(n, targets.len())?;
    Error::check_dim(n, noise_var.len())?;
    check_duplicates(&inputs, &targets, &noise_var)?;

    let prior_mean = stats::mean(&targets);
    let (shift, scale) = standardization(&inputs);
    let y_sd = stats::std_dev(&targets).as_f64();
    let y_scale = if y_sd > 0.0 && y_sd.is_finite() { y_sd } else { 1.0 };

    let mut lower = vec![(y_scale * options.amplitude_range.0).ln()];
    let mut upper = vec![(y_scale * options.amplitude_range.1).ln()];
    for _ in 0..k {
        lower.push(options.lengthscale_range.0.ln());
        upper.push(options.lengthscale_range.1.ln());
    }

    let restarts = options.restarts.max(1);
    let starts: Vec<Vec<f64>> = (0..restarts)
        .map(|s| {
            if s == 0 {
                let mut x = vec![y_scale.ln()];
                x.extend(std::iter::repeat_n(0.0, k));
                x
            } else {
                let mut rng = seeds::rng(seeds::derive(options.seed, seeds::STREAM_RESTART, s as u64));
                (0..=k)
                    .map(|i| {
                        // keep random starts away from the box edges
                        let (lo, hi) = (lower[i], upper[i]);
                        let pad = 0.25 * (hi - lo);
                        rng.random_range(lo + pad..hi - pad)
                    })
                    .collect()
            }
        })
        .collect();

    let to_params = |x: &[f64]| -> KernelParams<T> {
        KernelParams {
            theta0: T::lit(x[0].exp()),
            lengthscales: (0..k).map(|d| T::lit(x[d + 1].exp()) * scale[d]).collect(),
        }
    };
    let run = |x0: &Vec<f64>| {
        minimize_bounded(
            |x| {
                let p = to_params(x);
                let (v, g) = lml_with_gradient(&inputs, &targets, prior_mean, &noise_var, &p).ok()?;
                Some((-v.as_f64(), g.iter().map(|gi| -gi.as_f64()).collect()))
            },
            x0,
            &lower,
            &upper,
            options.max_iter,
        )
    };
    let results: Vec<_> =
        if options.parallel { starts.par_iter().map(run).collect() } else { starts.iter().map(run).collect() };

    // lowest objective wins; ties go to the lowest start index
    let mut best: Option<(usize, &super::optim::Minimum)> = None;
    for (i, r) in results.iter().enumerate() {
        if let Some(m) = r {
            if m.value.is_finite() && best.is_none_or(|(_, b)| m.value < b.value) {
                best = Some((i, m));
            }
        }
    }
    let Some((best_start, best_min)) = best else {
        return Err(Error::Fit(format!(
            "objective non-finite at all {restarts} starts (n = {n}, target sd = {y_sd:e})"
        )));
    };
    let report = FitReport {
        best_start,
        start_values: results.iter().map(|r| r.as_ref().map(|m| -m.value)).collect(),
        trace: best_min.trace.iter().map(|v| -v).collect(),
    };
    let mut model = GpModel::new(inputs, targets, noise_var, to_params(&best_min.x), Some(prior_mean))?;
    model.set_standardization(shift, scale);
    Ok((model, report))
}

fn check_duplicates<T: Real>(inputs: &Matrix<T>, targets: &[T], noise: &[T]) -> Result<()> {
    for i in 0..inputs.rows() {
        for j in 0..i {
            if inputs.row(i) == inputs.row(j)
                && targets[i] != targets[j]
                && (noise[i] == T::zero() || noise[j] == T::zero())
            {
                return Err(Error::Fit(format!(
                    "rows {j} and {i} share inputs but differ in target without noise"
                )));
            }
        }
    }
    Ok(())
}
