use rand::Rng as _;

use super::push::propagate;
use super::ratios::compute_ratios;
use super::InversionProblem;
use crate::densities::{fit_kde, Density};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::real::Real;
use crate::seeds;

/// Batches without a single acceptance before giving up.
const MAX_EMPTY_BATCHES: usize = 10;
/// First-batch acceptance rate below which a warning is raised.
pub const LOW_ACCEPTANCE: f64 = 1e-4;

/// All proposals of an inversion run with their ratios and decisions.
#[derive(Debug, Clone)]
pub struct UpdatedEnsemble<T: Real> {
    pub samples: Matrix<T>,
    pub q_values: Matrix<T>,
    pub ratios: Vec<T>,
    pub batch: Vec<usize>,
    pub accepted: Vec<bool>,
    pub violations: Vec<bool>,
    pub extrapolated: Vec<bool>,
    /// `M` used in each batch.
    pub batch_bounds: Vec<T>,
    pub p_samples: usize,
    /// KDE of the first batch's push-forward; absent when reloaded from disk.
    pub predicted: Option<Density<T>>,
}

impl<T: Real> UpdatedEnsemble<T> {
    pub fn len(&self) -> usize {
        self.ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratios.is_empty()
    }

    pub fn batches(&self) -> usize {
        self.batch_bounds.len()
    }

    /// Largest `M` over all batches.
    pub fn bound_m(&self) -> T {
        self.batch_bounds.iter().copied().fold(T::zero(), T::max)
    }

    pub fn accepted_indices(&self) -> Vec<usize> {
        self.accepted.iter().enumerate().filter(|(_, a)| **a).map(|(i, _)| i).collect()
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted.iter().filter(|a| **a).count()
    }

    pub fn accepted_samples(&self) -> Matrix<T> {
        self.samples.select_rows(&self.accepted_indices())
    }

    pub fn accepted_q_values(&self) -> Matrix<T> {
        self.q_values.select_rows(&self.accepted_indices())
    }

    /// Rebuilds `M` per batch as `safety * max ratio`.
    pub fn bounds_from_ratios(ratios: &[T], batch: &[usize], safety: T) -> Vec<T> {
        let n = batch.iter().copied().max().map_or(0, |b| b + 1);
        let mut bounds = vec![T::zero(); n];
        for (r, b) in ratios.iter().zip(batch) {
            bounds[*b] = bounds[*b].max(*r);
        }
        bounds.into_iter().map(|m| m * safety).collect()
    }
}

/// Accepts index `i` iff `u_i < r_i / bound`, one uniform per index drawn in
/// order from `seed`.
pub fn accept<T: Real>(ratios: &[T], bound: T, seed: u64) -> Vec<bool> {
    let mut rng = seeds::rng(seed);
    ratios
        .iter()
        .map(|r| {
            let u: f64 = rng.random();
            T::lit(u) < *r / bound
        })
        .collect()
}

/// Draws batches of `P` initial samples and accepts them with probability
/// `r / M` until `min_accepted` samples are accepted.
pub fn rejection_sample<T: Real>(problem: &InversionProblem<T>) -> Result<UpdatedEnsemble<T>> {
    problem.validate()?;
    let s = &problem.settings;
    let p = problem.p_samples;
    let map = problem.map.as_ref();

    let first = propagate(map, &problem.initial, p, problem.seed, 0, problem.mode)?;
    let predicted = match &s.predicted_override {
        Some(d) => d.clone(),
        None => fit_kde(first.1.clone(), &s.bandwidth)?,
    };

    let mut ens = UpdatedEnsemble {
        samples: Matrix::zeros(0, 0),
        q_values: Matrix::zeros(0, 0),
        ratios: Vec::new(),
        batch: Vec::new(),
        accepted: Vec::new(),
        violations: Vec::new(),
        extrapolated: Vec::new(),
        batch_bounds: Vec::new(),
        p_samples: p,
        predicted: Some(predicted.clone()),
    };

    let mut pending = Some(first);
    for b in 0..s.max_batches {
        let (samples, q, extrapolated) = match pending.take() {
            Some(batch) => batch,
            None => propagate(map, &problem.initial, p, problem.seed, b, problem.mode)?,
        };
        let ratios = compute_ratios(&problem.target, &predicted, &q, s.ratio_floor)?;
        let max_r = ratios.values.iter().copied().fold(T::zero(), T::max);
        let bound = max_r * s.safety_factor;
        let decisions = accept(&ratios.values, bound, seeds::derive(problem.seed, seeds::STREAM_ACCEPT, b as u64));

        let n_acc = decisions.iter().filter(|a| **a).count();
        if b == 0 && (n_acc as f64) < LOW_ACCEPTANCE * p as f64 {
            log::warn!(
                "acceptance rate {:.3e} in the first batch; an initial density closer to the updated one would help",
                n_acc as f64 / p as f64
            );
        }

        ens.samples.append(&samples)?;
        ens.q_values.append(&q)?;
        ens.ratios.extend(ratios.values);
        ens.batch.extend(std::iter::repeat_n(b, p));
        ens.accepted.extend(decisions);
        ens.violations.extend(ratios.violations);
        ens.extrapolated.extend(extrapolated);
        ens.batch_bounds.push(bound);

        let total = ens.accepted_count();
        if total >= s.min_accepted {
            return Ok(ens);
        }
        if total == 0 && b + 1 >= MAX_EMPTY_BATCHES {
            return Err(Error::NoAcceptance { batches: b + 1 });
        }
    }
    log::warn!(
        "stopped after {} batches with {} of {} requested samples accepted",
        s.max_batches,
        ens.accepted_count(),
        s.min_accepted
    );
    Ok(ens)
}
