//! Data-consistent inversion by acceptance-rejection.
//!
//! The updated density is the initial density reweighted by
//! `r(lambda) = pi_obs(Q(lambda)) / pi_pred(Q(lambda))`, where `pi_pred` is
//! a KDE of the push-forward of the initial density. [`invert`] runs the
//! whole pipeline:
//!
//! 1. [`push_forward`]: draw `P` initial samples, evaluate the map, fit the
//!    predicted-density KDE;
//! 2. [`compute_ratios`]: evaluate `r` at every sample;
//! 3. [`rejection_sample`]: accept sample `i` iff `u_i < r_i / M`, with `M`
//!    the (optionally inflated) maximum ratio of the batch;
//! 4. [`diagnostics`]: integral of the updated density, KL divergence from
//!    the initial density and acceptance statistics.
//!
//! When more accepted samples are requested than one batch yields, fresh
//! batches of `P` initial samples are drawn but the predicted density of the
//! first batch is kept, so every batch targets the same updated density.
//!
//! All randomness is keyed by `(seed, stream, batch, sample index)`; serial
//! and parallel execution produce bit-identical results.

mod diagnostics;
mod push;
mod ratios;
mod rejection;

use std::sync::Arc;

pub use diagnostics::{diagnostics, DiagnosticsReport};
pub use push::{propagate, push_forward, PushForward};
pub use ratios::{compute_ratios, Ratios};
pub use rejection::{accept, rejection_sample, UpdatedEnsemble};

use crate::densities::{BandwidthRule, Density};
use crate::error::{Error, Result};
use crate::maps::SurrogateMap;
use crate::real::Real;

/// Minimum batch size for meaningful diagnostics.
pub const MIN_P_SAMPLES: usize = 100;

/// Whether the map is sampled through `evaluate` or `evaluate_realization`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MapMode {
    #[default]
    Deterministic,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Everything runs on a single-thread pool.
    Serial,
    #[default]
    Parallel,
}

impl Execution {
    pub(crate) fn run<R: Send>(self, f: impl FnOnce() -> R + Send) -> Result<R> {
        match self {
            Execution::Parallel => Ok(f()),
            Execution::Serial => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(1)
                    .build()
                    .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
                Ok(pool.install(f))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct InversionSettings<T: Real> {
    pub bandwidth: BandwidthRule<T>,
    /// Predicted densities below this fraction of their sample maximum count
    /// as zero.
    pub ratio_floor: T,
    /// Multiplier on the sample-maximum estimate of `M`.
    pub safety_factor: T,
    /// `predictability_ok` requires `|integral - 1|` at most this.
    pub predictability_threshold: T,
    /// Keep drawing batches until this many samples are accepted (0: one batch).
    pub min_accepted: usize,
    pub max_batches: usize,
    pub execution: Execution,
    /// Replaces the KDE of the push-forward, for oracle comparisons.
    pub predicted_override: Option<Density<T>>,
}

impl<T: Real> Default for InversionSettings<T> {
    fn default() -> Self {
        InversionSettings {
            bandwidth: BandwidthRule::Scott,
            ratio_floor: T::lit(1e-12),
            safety_factor: T::one(),
            predictability_threshold: T::lit(0.05),
            min_accepted: 0,
            max_batches: 1000,
            execution: Execution::Parallel,
            predicted_override: None,
        }
    }
}

/// Everything needed to run one inversion.
#[derive(Clone)]
pub struct InversionProblem<T: Real> {
    pub initial: Density<T>,
    pub target: Density<T>,
    pub map: Arc<dyn SurrogateMap<T>>,
    pub mode: MapMode,
    pub p_samples: usize,
    pub seed: u64,
    pub settings: InversionSettings<T>,
}

impl<T: Real> InversionProblem<T> {
    pub fn new(
        initial: Density<T>,
        target: Density<T>,
        map: Arc<dyn SurrogateMap<T>>,
        mode: MapMode,
        p_samples: usize,
        seed: u64,
    ) -> Self {
        InversionProblem { initial, target, map, mode, p_samples, seed, settings: InversionSettings::default() }
    }

    pub fn with_settings(mut self, settings: InversionSettings<T>) -> Self {
        self.settings = settings;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_samples < MIN_P_SAMPLES {
            return Err(Error::input(format!(
                "p_samples = {} is below the minimum of {MIN_P_SAMPLES}",
                self.p_samples
            )));
        }
        if self.initial.dim() != self.map.input_dim() {
            return Err(Error::input(format!(
                "initial density has dimension {}, map expects {} inputs",
                self.initial.dim(),
                self.map.input_dim()
            )));
        }
        if self.target.dim() != self.map.output_dim() {
            return Err(Error::input(format!(
                "target density has dimension {}, map produces {} outputs",
                self.target.dim(),
                self.map.output_dim()
            )));
        }
        if let Some(support) = self.initial.support() {
            if !self.map.domain().contains_box(support) {
                return Err(Error::input("initial density support extends outside the map input box"));
            }
        }
        if let Some(p) = &self.settings.predicted_override {
            Error::check_dim(self.map.output_dim(), p.dim())?;
        }
        let s = &self.settings;
        if !(s.safety_factor > T::zero()) || !(s.ratio_floor >= T::zero()) || !(s.predictability_threshold >= T::zero())
        {
            return Err(Error::input("safety factor must be positive; floor and threshold non-negative"));
        }
        if s.max_batches == 0 {
            return Err(Error::input("max_batches must be at least 1"));
        }
        Ok(())
    }
}

/// Push-forward, ratios, rejection sampling and diagnostics in one call.
pub fn invert<T: Real>(problem: &InversionProblem<T>) -> Result<(UpdatedEnsemble<T>, DiagnosticsReport<T>)> {
    problem.settings.execution.run(|| {
        let ensemble = rejection_sample(problem)?;
        let report = diagnostics(&ensemble, problem.settings.predictability_threshold);
        Ok((ensemble, report))
    })?
}
