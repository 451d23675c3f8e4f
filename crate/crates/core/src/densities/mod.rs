//! Probability densities over a k-dimensional feature or property space.
//!
//! [`Density`] covers the initial, target, push-forward and updated
//! densities: uniform boxes, uniform on the ordered region of a cube,
//! diagonal normals, the scalar log-normal grain-size law, and Gaussian
//! product-kernel density estimates ([`Kde`]).
//!
//! The KDE applies no boundary correction: estimating a uniform density
//! smooths its edges over a few bandwidths, which shows up as ringing near
//! the edges of uniform targets in plots.

mod kde;

pub use kde::{fit_kde, BandwidthRule, Kde, KdeEvaluation};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::real::Real;
use crate::seeds;

/// Axis-aligned box `lower[i] < upper[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds<T> {
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Real> Bounds<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::input("box must have at least one dimension"));
        }
        Error::check_dim(lower.len(), upper.len())?;
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::input(format!(
                    "box dimension {i}: need finite lower < upper, got [{l}, {u}]"
                )));
            }
        }
        Ok(Bounds { lower, upper })
    }

    pub fn interval(lower: T, upper: T) -> Result<Self> {
        Self::new(vec![lower], vec![upper])
    }

    /// The cube `[lower, upper]^dim`.
    pub fn cube(lower: T, upper: T, dim: usize) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| v >= l && v <= u)
    }

    pub fn contains_box(&self, other: &Bounds<T>) -> bool {
        other.dim() == self.dim()
            && (0..self.dim())
                .all(|i| other.lower[i] >= self.lower[i] && other.upper[i] <= self.upper[i])
    }

    pub fn volume(&self) -> T {
        self.lower.iter().zip(&self.upper).fold(T::one(), |acc, (l, u)| acc * (*u - *l))
    }
}

#[derive(Debug, Clone)]
pub enum Density<T: Real> {
    /// Uniform on a box.
    Uniform(Bounds<T>),
    /// Uniform on `{x in [a, b]^k : x_0 >= x_1 >= ... >= x_{k-1}}`.
    OrderedUniform(Bounds<T>),
    /// Independent normals (diagonal covariance).
    Normal { mean: Vec<T>, sd: Vec<T> },
    /// Scalar log-normal: `ln x ~ N(mu, sigma^2)`.
    LogNormal { mu: T, sigma: T },
    Kde(Kde<T>),
}

impl<T: Real> Density<T> {
    pub fn uniform(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        Ok(Density::Uniform(Bounds::new(lower, upper)?))
    }

    pub fn ordered_uniform(lower: T, upper: T, dim: usize) -> Result<Self> {
        Ok(Density::OrderedUniform(Bounds::cube(lower, upper, dim)?))
    }

    pub fn normal(mean: Vec<T>, sd: Vec<T>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::input("normal density needs at least one dimension"));
        }
        Error::check_dim(mean.len(), sd.len())?;
        if mean.iter().any(|m| !m.is_finite()) || sd.iter().any(|s| !(s.is_finite() && *s > T::zero()))
        {
            return Err(Error::input("normal density needs finite means and positive sds"));
        }
        Ok(Density::Normal { mean, sd })
    }

    pub fn log_normal(mu: T, sigma: T) -> Result<Self> {
        if !mu.is_finite() || !(sigma.is_finite() && sigma > T::zero()) {
            return Err(Error::input("log-normal density needs finite mu and positive sigma"));
        }
        Ok(Density::LogNormal { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        match self {
            Density::Uniform(b) | Density::OrderedUniform(b) => b.dim(),
            Density::Normal { mean, .. } => mean.len(),
            Density::LogNormal { .. } => 1,
            Density::Kde(k) => k.dim(),
        }
    }

    /// Bounding box of the support, `None` when the support is unbounded.
    pub fn support(&self) -> Option<&Bounds<T>> {
        match self {
            Density::Uniform(b) | Density::OrderedUniform(b) => Some(b),
            _ => None,
        }
    }

    pub fn pdf(&self, x: &[T]) -> Result<T> {
        Error::check_dim(self.dim(), x.len())?;
        Ok(match self {
            Density::Uniform(b) => {
                if b.contains(x) {
                    b.volume().recip()
                } else {
                    T::zero()
                }
            }
            Density::OrderedUniform(b) => {
                let ordered = x.windows(2).all(|w| w[0] >= w[1]);
                if ordered && b.contains(x) {
                    // the ordered region is 1/k! of the cube
                    let fact = (1..=b.dim()).fold(T::one(), |a, i| a * T::from_usize_lossy(i));
                    fact / b.volume()
                } else {
                    T::zero()
                }
            }
            Density::Normal { mean, sd } => x
                .iter()
                .zip(mean.iter().zip(sd))
                .fold(T::one(), |acc, (&v, (&m, &s))| acc * std_normal_pdf((v - m) / s) / s),
            Density::LogNormal { mu, sigma } => {
                let v = x[0];
                if v <= T::zero() {
                    T::zero()
                } else {
                    std_normal_pdf((v.ln() - *mu) / *sigma) / (*sigma * v)
                }
            }
            Density::Kde(k) => k.pdf_exact(x),
        })
    }

    /// Evaluates the density at every row of `points`.
    ///
    /// For large KDE workloads this may use the binned approximation (see
    /// [`KdeEvaluation`]); for a given density and point set the result is
    /// always the same.
    pub fn pdf_batch(&self, points: &Matrix<T>) -> Result<Vec<T>> {
        Error::check_dim(self.dim(), points.cols())?;
        match self {
            Density::Kde(k) => Ok(k.pdf_batch(points)),
            _ => (0..points.rows()).into_par_iter().map(|i| self.pdf(points.row(i))).collect(),
        }
    }

    /// Draws `n` i.i.d. samples. The output is a pure function of
    /// `(self, n, seed)`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Matrix<T>> {
        if n == 0 {
            return Err(Error::input("sample count must be at least 1"));
        }
        let k = self.dim();
        let mut rng = seeds::rng(seed);
        let mut out = Matrix::zeros(n, k);
        for i in 0..n {
            let row = out.row_mut(i);
            match self {
                Density::Uniform(b) => {
                    for (d, v) in row.iter_mut().enumerate() {
                        let u: f64 = rng.random();
                        *v = b.lower[d] + (b.upper[d] - b.lower[d]) * T::lit(u);
                    }
                }
                Density::OrderedUniform(b) => {
                    // sorted i.i.d. uniforms are uniform on the ordered region
                    for (d, v) in row.iter_mut().enumerate() {
                        let u: f64 = rng.random();
                        *v = b.lower[d] + (b.upper[d] - b.lower[d]) * T::lit(u);
                    }
                    row.sort_by(|a, b| b.partial_cmp(a).expect("finite samples"));
                }
                Density::Normal { mean, sd } => {
                    for (d, v) in row.iter_mut().enumerate() {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v = mean[d] + sd[d] * T::lit(z);
                    }
                }
                Density::LogNormal { mu, sigma } => {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    row[0] = (*mu + *sigma * T::lit(z)).exp();
                }
                Density::Kde(kde) => kde.sample_into(&mut rng, row),
            }
        }
        Ok(out)
    }

    pub fn as_kde(&self) -> Option<&Kde<T>> {
        match self {
            Density::Kde(k) => Some(k),
            _ => None,
        }
    }
}

#[inline]
pub(crate) fn std_normal_pdf<T: Real>(z: T) -> T {
    let inv_sqrt_2pi = T::lit(0.398_942_280_401_432_7);
    inv_sqrt_2pi * (-(z * z) / T::lit(2.0)).exp()
}
