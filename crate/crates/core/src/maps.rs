//! Forward structure-property maps `lambda -> Q(lambda)`.
//!
//! Every map exposes a deterministic [`SurrogateMap::evaluate`] and a
//! stochastic [`SurrogateMap::evaluate_realization`] whose randomness is
//! derived only from the per-call seed, so maps are freely shareable
//! between threads.
//!
//! Units: the Hall-Petch input is `mu_D`, the log of the mean grain
//! diameter in micrometres. The Hall-Petch constant is in MPa m^(1/2), so
//! the diameter is converted to metres inside [`hall_petch_eval`].

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::densities::Bounds;
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::matrix::Matrix;
use crate::real::Real;
use crate::seeds;
use crate::stats;

/// Hall-Petch friction stress, MPa.
pub const HALL_PETCH_SIGMA0: f64 = 482.14;
/// Hall-Petch coefficient, MPa m^(1/2).
pub const HALL_PETCH_K: f64 = 0.0995;
/// Documented input range of `mu_D`.
pub const HALL_PETCH_RANGE: (f64, f64) = (0.25, 2.75);
/// SVE count per ensemble average.
pub const DEFAULT_N_SVE: usize = 25;

/// Realization sd scale: about 10 MPa per SVE at `mu_D = 2.75`.
pub fn default_grain_noise_s0() -> f64 {
    10.0 * (-1.5 * HALL_PETCH_RANGE.1).exp()
}

pub trait SurrogateMap<T: Real>: Send + Sync {
    fn input_dim(&self) -> usize;

    fn output_dim(&self) -> usize;

    /// Documented input box; evaluating outside it is extrapolation.
    fn domain(&self) -> &Bounds<T>;

    fn evaluate(&self, x: &[T]) -> Result<Vec<T>>;

    /// One stochastic realization; identical `(x, seed)` give identical output.
    fn evaluate_realization(&self, x: &[T], seed: u64) -> Result<Vec<T>>;
}

impl<T: Real, M: SurrogateMap<T> + ?Sized> SurrogateMap<T> for Box<M> {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn domain(&self) -> &Bounds<T> {
        (**self).domain()
    }
    fn evaluate(&self, x: &[T]) -> Result<Vec<T>> {
        (**self).evaluate(x)
    }
    fn evaluate_realization(&self, x: &[T], seed: u64) -> Result<Vec<T>> {
        (**self).evaluate_realization(x, seed)
    }
}

impl<T: Real, M: SurrogateMap<T> + ?Sized> SurrogateMap<T> for Arc<M> {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn domain(&self) -> &Bounds<T> {
        (**self).domain()
    }
    fn evaluate(&self, x: &[T]) -> Result<Vec<T>> {
        (**self).evaluate(x)
    }
    fn evaluate_realization(&self, x: &[T], seed: u64) -> Result<Vec<T>> {
        (**self).evaluate_realization(x, seed)
    }
}

/// `sigma_Y = sigma0 + k / sqrt(D)`, `D = exp(mu_D)` micrometres.
pub fn hall_petch_eval<T: Real>(mu_d: T) -> T {
    let diameter_m = mu_d.exp() * T::lit(1e-6);
    T::lit(HALL_PETCH_SIGMA0) + T::lit(HALL_PETCH_K) / diameter_m.sqrt()
}

/// Deterministic Hall-Petch yield stress as a function of `mu_D`.
#[derive(Debug, Clone)]
pub struct HallPetchMap<T: Real> {
    pub sigma0: T,
    pub k_hp: T,
    domain: Bounds<T>,
}

impl<T: Real> Default for HallPetchMap<T> {
    fn default() -> Self {
        HallPetchMap {
            sigma0: T::lit(HALL_PETCH_SIGMA0),
            k_hp: T::lit(HALL_PETCH_K),
            domain: Bounds::interval(T::lit(HALL_PETCH_RANGE.0), T::lit(HALL_PETCH_RANGE.1))
                .expect("valid range"),
        }
    }
}

impl<T: Real> HallPetchMap<T> {
    pub fn new(sigma0: T, k_hp: T) -> Self {
        HallPetchMap { sigma0, k_hp, ..Default::default() }
    }
}

impl<T: Real> SurrogateMap<T> for HallPetchMap<T> {
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn domain(&self) -> &Bounds<T> {
        &self.domain
    }
    fn evaluate(&self, x: &[T]) -> Result<Vec<T>> {
        Error::check_dim(1, x.len())?;
        let d = x[0].exp() * T::lit(1e-6);
        Ok(vec![self.sigma0 + self.k_hp / d.sqrt()])
    }
    fn evaluate_realization(&self, x: &[T], _seed: u64) -> Result<Vec<T>> {
        self.evaluate(x)
    }
}

/// SVE-to-SVE scatter growing as the grain count `~ exp(-3 mu_D)` falls:
/// `sd(mu_D) = s0 exp(1.5 mu_D)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrainNoiseModel<T> {
    pub s0: T,
}

impl<T: Real> GrainNoiseModel<T> {
    pub fn new(s0: T) -> Result<Self> {
        if !(s0.is_finite() && s0 >= T::zero()) {
            return Err(Error::input("noise scale s0 must be finite and non-negative"));
        }
        Ok(GrainNoiseModel { s0 })
    }

    pub fn sd(&self, mu_d: T) -> T {
        self.s0 * (T::lit(1.5) * mu_d).exp()
    }
}

impl<T: Real> Default for GrainNoiseModel<T> {
    fn default() -> Self {
        GrainNoiseModel { s0: T::lit(default_grain_noise_s0()) }
    }
}

/// Realization noise added on top of a deterministic map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel<T> {
    /// Driven by the first input coordinate through [`GrainNoiseModel`].
    Grain(GrainNoiseModel<T>),
    Constant(T),
}

impl<T: Real> NoiseModel<T> {
    pub fn sd(&self, x: &[T]) -> T {
        match self {
            NoiseModel::Grain(g) => g.sd(x[0]),
            NoiseModel::Constant(s) => *s,
        }
    }
}

/// Deterministic map plus zero-mean Gaussian realization noise.
#[derive(Debug, Clone)]
pub struct NoisyMap<M, T> {
    pub base: M,
    pub noise: NoiseModel<T>,
}

impl<T: Real, M: SurrogateMap<T>> NoisyMap<M, T> {
    pub fn new(base: M, noise: NoiseModel<T>) -> Self {
        NoisyMap { base, noise }
    }
}

impl<T: Real, M: SurrogateMap<T>> SurrogateMap<T> for NoisyMap<M, T> {
    fn input_dim(&self) -> usize {
        self.base.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.base.output_dim()
    }
    fn domain(&self) -> &Bounds<T> {
        self.base.domain()
    }
    fn evaluate(&self, x: &[T]) -> Result<Vec<T>> {
        self.base.evaluate(x)
    }
    fn evaluate_realization(&self, x: &[T], seed: u64) -> Result<Vec<T>> {
        let mut q = self.base.evaluate(x)?;
        let sd = self.noise.sd(x);
        if sd > T::zero() {
            let mut rng = seeds::rng(seed);
            for v in q.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += sd * T::lit(z);
            }
        }
        Ok(q)
    }
}

/// Average of `n_sve` independent realizations of a stochastic map.
#[derive(Debug, Clone)]
pub struct EnsembleAverageMap<M> {
    pub base: M,
    pub n_sve: usize,
}

impl<M> EnsembleAverageMap<M> {
    pub fn new(base: M, n_sve: usize) -> Result<Self> {
        if n_sve == 0 {
            return Err(Error::input("ensemble size must be at least 1"));
        }
        Ok(EnsembleAverageMap { base, n_sve })
    }
}

impl<T: Real, M: SurrogateMap<T>> SurrogateMap<T> for EnsembleAverageMap<M> {
    fn input_dim(&self) -> usize {
        self.base.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.base.output_dim()
    }
    fn domain(&self) -> &Bounds<T> {
        self.base.domain()
    }
    fn evaluate(&self, x: &[T]) -> Result<Vec<T>> {
        self.base.evaluate(x)
    }
    fn evaluate_realization(&self, x: &[T], seed: u64) -> Result<Vec<T>> {
        let draws = realizations(&self.base, x, self.n_sve, seed)?;
        Ok(column_means(&draws, self.base.output_dim()))
    }
}

/// `n_sve` realizations at one input, keyed by `(seed, SVE index)`.
pub fn realizations<T: Real, M: SurrogateMap<T> + ?Sized>(
    map: &M,
    x: &[T],
    n_sve: usize,
    seed: u64,
) -> Result<Vec<Vec<T>>> {
    (0..n_sve)
        .map(|i| map.evaluate_realization(x, seeds::derive(seed, seeds::STREAM_SVE, i as u64)))
        .collect()
}

fn column_means<T: Real>(draws: &[Vec<T>], m: usize) -> Vec<T> {
    (0..m)
        .map(|j| stats::mean(&draws.iter().map(|d| d[j]).collect::<Vec<T>>()))
        .collect()
}

/// Sample variance of the ensemble mean (`s^2 / n_sve`) at each grid point,
/// one column per map output. Grid point `j` uses the realizations of
/// [`realizations`] with seed `derive(seed, REALIZATION, j)`.
pub fn estimate_noise_variances<T: Real, M: SurrogateMap<T> + ?Sized>(
    map: &M,
    grid: &Matrix<T>,
    n_sve: usize,
    seed: u64,
) -> Result<Matrix<T>> {
    if n_sve < 2 {
        return Err(Error::input("noise variance estimation needs n_sve >= 2"));
    }
    let m = map.output_dim();
    let mut out = Matrix::zeros(grid.rows(), m);
    let n = T::from_usize_lossy(n_sve);
    for (j, x) in grid.iter_rows().enumerate() {
        let draws = realizations(map, x, n_sve, point_seed(seed, j))?;
        for d in 0..m {
            let col: Vec<T> = draws.iter().map(|r| r[d]).collect();
            out.row_mut(j)[d] = stats::variance(&col) / n;
        }
    }
    Ok(out)
}

/// Seed of the realization ensemble at grid point `index`.
pub fn point_seed(seed: u64, index: usize) -> u64 {
    seeds::derive(seed, seeds::STREAM_REALIZATION, index as u64)
}

/// Synthetic yield stress (MPa) over grain aspect ratios `(b/a, c/a)`.
///
/// With `u = 4 pi (b/a - 1/4)` and `v = 4 pi (c/a - 1/4)`:
///
/// ```text
/// sigma_Y = 83.1 + 0.85 cos(u) cos(v) - 2.8 sin(u)^2 sin(v)^2
/// ```
///
/// on the triangle `0.25 <= c/a <= b/a <= 1`. On the 0.25-spaced sampling
/// grid the value alternates between 82.25 and 83.95 MPa; between grid
/// nodes three isolated wells dip to 80.3 MPa, so level sets such as
/// 82.5 MPa break into several disconnected pieces. This is a smooth
/// stand-in with plausible range and topology, not a fit to any data.
#[derive(Debug, Clone)]
pub struct AspectRatioMap<T: Real> {
    domain: Bounds<T>,
}

impl<T: Real> Default for AspectRatioMap<T> {
    fn default() -> Self {
        AspectRatioMap { domain: Bounds::cube(T::lit(0.25), T::one(), 2).expect("valid box") }
    }
}

/// Evaluates [`AspectRatioMap`] at `(b/a, c/a)`.
pub fn synthetic_aspect_ratio_eval<T: Real>(b_over_a: T, c_over_a: T) -> Result<T> {
    let lo = T::lit(0.25);
    let in_range = |v: T| v >= lo && v <= T::one();
    if !in_range(b_over_a) || !in_range(c_over_a) {
        return Err(Error::input(format!(
            "aspect ratios ({b_over_a}, {c_over_a}) outside [0.25, 1]"
        )));
    }
    if c_over_a > b_over_a {
        return Err(Error::input(format!(
            "aspect ratios must satisfy c/a <= b/a, got ({b_over_a}, {c_over_a})"
        )));
    }
    let four_pi = T::lit(4.0 * std::f64::consts::PI);
    let u = four_pi * (b_over_a - lo);
    let v = four_pi * (c_over_a - lo);
    let (su, sv) = (u.sin(), v.sin());
    Ok(T::lit(83.1) + T::lit(0.85) * u.cos() * v.cos() - T::lit(2.8) * su * su * sv * sv)
}

impl<T: Real> SurrogateMap<T> for AspectRatioMap<T> {
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn domain(&self) -> &Bounds<T> {
        &self.domain
    }
    fn evaluate(&self, x: &[T]) -> Result<Vec<T>> {
        Error::check_dim(2, x.len())?;
        Ok(vec![synthetic_aspect_ratio_eval(x[0], x[1])?])
    }
    fn evaluate_realization(&self, x: &[T], _seed: u64) -> Result<Vec<T>> {
        self.evaluate(x)
    }
}

/// Map backed by one GP per output. Realizations add the given noise model,
/// or draw from the latent posterior when none is set.
#[derive(Debug, Clone)]
pub struct GpMap<T: Real> {
    models: Vec<GpModel<T>>,
    domain: Bounds<T>,
    noise: Option<NoiseModel<T>>,
}

impl<T: Real> GpMap<T> {
    /// The domain defaults to the bounding box of the training inputs.
    pub fn new(models: Vec<GpModel<T>>, domain: Option<Bounds<T>>, noise: Option<NoiseModel<T>>) -> Result<Self> {
        let first = models.first().ok_or_else(|| Error::input("GP map needs at least one model"))?;
        let k = first.input_dim();
        if models.iter().any(|m| m.input_dim() != k) {
            return Err(Error::input("all GP outputs must share the input dimension"));
        }
        let domain = match domain {
            Some(d) => {
                Error::check_dim(k, d.dim())?;
                d
            }
            None => {
                let x = first.inputs();
                let (lo, hi): (Vec<T>, Vec<T>) = (0..k)
                    .map(|d| {
                        let c = x.col_values(d);
                        (c.iter().copied().fold(T::infinity(), T::min), c.iter().copied().fold(T::neg_infinity(), T::max))
                    })
                    .unzip();
                Bounds::new(lo, hi)?
            }
        };
        Ok(GpMap { models, domain, noise })
    }

    pub fn models(&self) -> &[GpModel<T>] {
        &self.models
    }
}

impl<T: Real> SurrogateMap<T> for GpMap<T> {
    fn input_dim(&self) -> usize {
        self.domain.dim()
    }
    fn output_dim(&self) -> usize {
        self.models.len()
    }
    fn domain(&self) -> &Bounds<T> {
        &self.domain
    }
    fn evaluate(&self, x: &[T]) -> Result<Vec<T>> {
        self.models.iter().map(|m| m.predict(x).map(|(mu, _)| mu)).collect()
    }
    fn evaluate_realization(&self, x: &[T], seed: u64) -> Result<Vec<T>> {
        let mut rng = seeds::rng(seed);
        self.models
            .iter()
            .map(|m| {
                let (mu, var) = m.predict(x)?;
                let sd = match &self.noise {
                    Some(n) => n.sd(x),
                    None => var.sqrt(),
                };
                let z: f64 = StandardNormal.sample(&mut rng);
                Ok(mu + sd * T::lit(z))
            })
            .collect()
    }
}

/// Deterministic map from a closure.
pub struct FnMap<T: Real, F> {
    domain: Bounds<T>,
    output_dim: usize,
    f: F,
}

impl<T: Real, F> FnMap<T, F>
where
    F: Fn(&[T]) -> Vec<T> + Send + Sync,
{
    pub fn new(domain: Bounds<T>, output_dim: usize, f: F) -> Self {
        FnMap { domain, output_dim, f }
    }
}

impl<T: Real, F> SurrogateMap<T> for FnMap<T, F>
where
    F: Fn(&[T]) -> Vec<T> + Send + Sync,
{
    fn input_dim(&self) -> usize {
        self.domain.dim()
    }
    fn output_dim(&self) -> usize {
        self.output_dim
    }
    fn domain(&self) -> &Bounds<T> {
        &self.domain
    }
    fn evaluate(&self, x: &[T]) -> Result<Vec<T>> {
        Error::check_dim(self.input_dim(), x.len())?;
        let q = (self.f)(x);
        Error::check_dim(self.output_dim, q.len())?;
        Ok(q)
    }
    fn evaluate_realization(&self, x: &[T], _seed: u64) -> Result<Vec<T>> {
        self.evaluate(x)
    }
}
