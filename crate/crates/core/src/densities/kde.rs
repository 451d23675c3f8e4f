use std::sync::OnceLock;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{std_normal_pdf, Density};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::real::Real;
use crate::seeds::Rng;
use crate::stats;

/// Kernels are truncated this many bandwidths from their centre on the grid.
const KERNEL_CUTOFF: f64 = 8.0;

/// Sample-count times query-count above which `Auto` switches to binning.
const AUTO_BINNING_WORK: usize = 2_000_000;

/// Per-dimension bandwidth selection.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum BandwidthRule<T> {
    /// `h_i = sd_i * n^(-1/(k+4))`
    #[default]
    Scott,
    /// `h_i = sd_i * (4 / ((k+2) n))^(1/(k+4))`
    Silverman,
    Fixed(Vec<T>),
}

/// How [`Kde::pdf_batch`] evaluates many points at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KdeEvaluation {
    /// Binned for large workloads in one or two dimensions, exact otherwise.
    #[default]
    Auto,
    /// Direct sum over all kernels.
    Exact,
    /// Linear binning onto a regular grid, separable kernel convolution and
    /// multilinear interpolation. Relative error is O((grid step / h)^2).
    Binned,
}

/// Gaussian product-kernel density estimate.
#[derive(Debug, Clone)]
pub struct Kde<T: Real> {
    samples: Matrix<T>,
    bandwidths: Vec<T>,
    evaluation: KdeEvaluation,
    grid: OnceLock<Option<BinnedGrid<T>>>,
}

impl<T: Real> Kde<T> {
    pub fn new(samples: Matrix<T>, bandwidths: Vec<T>) -> Result<Self> {
        if samples.rows() == 0 || samples.cols() == 0 {
            return Err(Error::input("KDE needs at least one sample of dimension >= 1"));
        }
        Error::check_dim(samples.cols(), bandwidths.len())?;
        if bandwidths.iter().any(|h| !(h.is_finite() && *h > T::zero())) {
            return Err(Error::input("KDE bandwidths must be positive and finite"));
        }
        if samples.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::input("KDE samples must be finite"));
        }
        Ok(Kde { samples, bandwidths, evaluation: KdeEvaluation::Auto, grid: OnceLock::new() })
    }

    pub fn with_evaluation(mut self, evaluation: KdeEvaluation) -> Self {
        self.evaluation = evaluation;
        self
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    pub fn samples(&self) -> &Matrix<T> {
        &self.samples
    }

    pub fn bandwidths(&self) -> &[T] {
        &self.bandwidths
    }

    /// One-dimensional KDE of coordinate `dim` with the same bandwidth.
    pub fn marginal(&self, dim: usize) -> Result<Kde<T>> {
        if dim >= self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: dim + 1 });
        }
        Kde::new(Matrix::column(self.samples.col_values(dim)), vec![self.bandwidths[dim]])
    }

    pub fn pdf_exact(&self, x: &[T]) -> T {
        let norm = self.bandwidths.iter().fold(T::from_usize_lossy(self.len()), |a, h| a * *h);
        let mut sum = T::zero();
        for s in self.samples.iter_rows() {
            let mut k = T::one();
            for ((xi, si), hi) in x.iter().zip(s).zip(&self.bandwidths) {
                k *= std_normal_pdf((*xi - *si) / *hi);
            }
            sum += k;
        }
        sum / norm
    }

    pub fn pdf_batch(&self, points: &Matrix<T>) -> Vec<T> {
        let use_grid = match self.evaluation {
            KdeEvaluation::Exact => false,
            KdeEvaluation::Binned => true,
            KdeEvaluation::Auto => self.len().saturating_mul(points.rows()) > AUTO_BINNING_WORK,
        };
        let grid = if use_grid { self.grid().as_ref() } else { None };
        (0..points.rows())
            .into_par_iter()
            .map(|i| {
                let x = points.row(i);
                grid.and_then(|g| g.interpolate(x)).unwrap_or_else(|| self.pdf_exact(x))
            })
            .collect()
    }

    fn grid(&self) -> &Option<BinnedGrid<T>> {
        self.grid.get_or_init(|| BinnedGrid::build(self))
    }

    pub(crate) fn sample_into(&self, rng: &mut Rng, row: &mut [T]) {
        let j = rng.random_range(0..self.len());
        let centre = self.samples.row(j);
        for (d, v) in row.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            *v = centre[d] + self.bandwidths[d] * T::lit(z);
        }
    }
}

/// Fits a Gaussian KDE with per-dimension bandwidths from `rule`.
pub fn fit_kde<T: Real>(samples: Matrix<T>, rule: &BandwidthRule<T>) -> Result<Density<T>> {
    let n = samples.rows();
    let k = samples.cols();
    let bandwidths = match rule {
        BandwidthRule::Fixed(h) => h.clone(),
        BandwidthRule::Scott | BandwidthRule::Silverman => {
            if n < 2 {
                return Err(Error::input("bandwidth rules need at least two samples"));
            }
            let nf = n as f64;
            let kf = k as f64;
            let factor = match rule {
                BandwidthRule::Scott => nf.powf(-1.0 / (kf + 4.0)),
                _ => (4.0 / ((kf + 2.0) * nf)).powf(1.0 / (kf + 4.0)),
            };
            (0..k)
                .map(|d| {
                    let sd = stats::std_dev(&samples.col_values(d));
                    if !(sd > T::zero()) {
                        Err(Error::DegenerateSamples { dim: d })
                    } else {
                        Ok(sd * T::lit(factor))
                    }
                })
                .collect::<Result<Vec<T>>>()?
        }
    };
    Ok(Density::Kde(Kde::new(samples, bandwidths)?))
}

#[derive(Debug, Clone)]
struct BinnedGrid<T> {
    lo: Vec<T>,
    step: Vec<T>,
    sizes: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> BinnedGrid<T> {
    fn build(kde: &Kde<T>) -> Option<Self> {
        let k = kde.dim();
        let nodes = match k {
            1 => 8192,
            2 => 512,
            _ => return None,
        };
        let cutoff = T::lit(KERNEL_CUTOFF);
        let mut lo = Vec::with_capacity(k);
        let mut step = Vec::with_capacity(k);
        for d in 0..k {
            let col = kde.samples.col_values(d);
            let min = col.iter().copied().fold(T::infinity(), T::min);
            let max = col.iter().copied().fold(T::neg_infinity(), T::max);
            let h = kde.bandwidths[d];
            let l = min - cutoff * h;
            lo.push(l);
            step.push((max + cutoff * h - l) / T::from_usize_lossy(nodes - 1));
        }
        let sizes = vec![nodes; k];
        let total: usize = sizes.iter().product();
        let mut counts = vec![T::zero(); total];

        // linear binning, sequential so the grid is reproducible
        let corners = 1usize << k;
        let mut base = vec![0usize; k];
        let mut frac = vec![T::zero(); k];
        for s in kde.samples.iter_rows() {
            for d in 0..k {
                let p = (s[d] - lo[d]) / step[d];
                let i = p.floor().to_usize().unwrap_or(0).min(nodes - 2);
                base[d] = i;
                frac[d] = p - T::from_usize_lossy(i);
            }
            for c in 0..corners {
                let mut idx = 0;
                let mut w = T::one();
                for d in 0..k {
                    let up = (c >> d) & 1 == 1;
                    idx = idx * nodes + base[d] + usize::from(up);
                    w *= if up { frac[d] } else { T::one() - frac[d] };
                }
                counts[idx] += w;
            }
        }

        let mut values = counts;
        for axis in 0..k {
            let h = kde.bandwidths[axis];
            let reach = (cutoff * h / step[axis]).ceil().to_usize().unwrap_or(0).min(nodes - 1);
            let kernel: Vec<T> = (0..=reach)
                .map(|j| std_normal_pdf(T::from_usize_lossy(j) * step[axis] / h) / h)
                .collect();
            values = convolve_axis(&values, &sizes, axis, &kernel);
        }
        let n = T::from_usize_lossy(kde.len());
        values.iter_mut().for_each(|v| *v /= n);
        Some(BinnedGrid { lo, step, sizes, values })
    }

    /// Multilinear interpolation; `None` outside the grid.
    fn interpolate(&self, x: &[T]) -> Option<T> {
        let k = self.sizes.len();
        let mut base = [0usize; 2];
        let mut frac = [T::zero(); 2];
        for d in 0..k {
            let p = (x[d] - self.lo[d]) / self.step[d];
            if !(p >= T::zero()) || p > T::from_usize_lossy(self.sizes[d] - 1) {
                return None;
            }
            let i = p.floor().to_usize()?.min(self.sizes[d] - 2);
            base[d] = i;
            frac[d] = p - T::from_usize_lossy(i);
        }
        let mut acc = T::zero();
        for c in 0..(1usize << k) {
            let mut idx = 0;
            let mut w = T::one();
            for d in 0..k {
                let up = (c >> d) & 1 == 1;
                idx = idx * self.sizes[d] + base[d] + usize::from(up);
                w *= if up { frac[d] } else { T::one() - frac[d] };
            }
            acc += w * self.values[idx];
        }
        Some(acc.max(T::zero()))
    }
}

/// Symmetric convolution of a row-major grid along one axis.
fn convolve_axis<T: Real>(values: &[T], sizes: &[usize], axis: usize, kernel: &[T]) -> Vec<T> {
    let stride: usize = sizes[axis + 1..].iter().product();
    let len = sizes[axis];
    let reach = kernel.len() - 1;
    (0..values.len())
        .into_par_iter()
        .map(|idx| {
            let pos = (idx / stride) % len;
            let line_start = idx - pos * stride;
            let from = pos.saturating_sub(reach);
            let to = (pos + reach).min(len - 1);
            let mut acc = T::zero();
            for j in from..=to {
                let dist = pos.abs_diff(j);
                acc += kernel[dist] * values[line_start + j * stride];
            }
            acc
        })
        .collect()
}
