use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Matérn-3/2 hyperparameters: output scale `theta0` (property units) and
/// one lengthscale per input dimension (feature units).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams<T> {
    pub theta0: T,
    pub lengthscales: Vec<T>,
}

impl<T: Real> KernelParams<T> {
    pub fn new(theta0: T, lengthscales: Vec<T>) -> Result<Self> {
        let p = KernelParams { theta0, lengthscales };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: &T| v.is_finite() && *v > T::zero();
        if self.lengthscales.is_empty() {
            return Err(Error::input("kernel needs at least one lengthscale"));
        }
        if !ok(&self.theta0) || !self.lengthscales.iter().all(ok) {
            return Err(Error::input("kernel hyperparameters must be strictly positive"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Prior variance `k(x, x) = theta0^2`.
    pub fn amplitude(&self) -> T {
        self.theta0 * self.theta0
    }

    /// Scaled distance `r = sqrt(sum_i ((x_i - y_i) / l_i)^2)`.
    #[inline]
    pub(crate) fn distance(&self, x: &[T], y: &[T]) -> T {
        x.iter()
            .zip(y)
            .zip(&self.lengthscales)
            .map(|((a, b), l)| {
                let d = (*a - *b) / *l;
                d * d
            })
            .sum::<T>()
            .sqrt()
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[T], y: &[T]) -> T {
        let s = T::lit(3f64.sqrt()) * self.distance(x, y);
        self.amplitude() * (T::one() + s) * (-s).exp()
    }
}

/// `k(x, x') = theta0^2 (1 + sqrt(3) r) exp(-sqrt(3) r)`.
pub fn matern32<T: Real>(x: &[T], xp: &[T], params: &KernelParams<T>) -> Result<T> {
    params.validate()?;
    Error::check_dim(params.dim(), x.len())?;
    Error::check_dim(params.dim(), xp.len())?;
    Ok(params.eval_unchecked(x, xp))
}
