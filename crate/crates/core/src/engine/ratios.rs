use crate::densities::Density;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::real::Real;

/// Ratios `r_i = pi_obs(q_i) / pi_pred(q_i)` and the samples where the
/// predicted density vanished under a positive target.
#[derive(Debug, Clone)]
pub struct Ratios<T> {
    pub values: Vec<T>,
    pub violations: Vec<bool>,
}

impl<T> Ratios<T> {
    pub fn violation_count(&self) -> usize {
        self.violations.iter().filter(|v| **v).count()
    }
}

/// Evaluates the density ratio at every row of `q_values`.
///
/// A predicted density below `floor * max_i pi_pred(q_i)` is treated as zero:
/// the ratio is set to 0 and, if the target is positive there, the sample is
/// flagged as a predictability violation.
pub fn compute_ratios<T: Real>(
    target: &Density<T>,
    predicted: &Density<T>,
    q_values: &Matrix<T>,
    floor: T,
) -> Result<Ratios<T>> {
    let obs = target.pdf_batch(q_values)?;
    let pred = predicted.pdf_batch(q_values)?;
    let peak = pred.iter().copied().fold(T::zero(), T::max);
    let cutoff = floor * peak;
    let mut values = Vec::with_capacity(obs.len());
    let mut violations = Vec::with_capacity(obs.len());
    for (o, p) in obs.iter().zip(&pred) {
        if *p <= T::zero() || *p < cutoff {
            values.push(T::zero());
            violations.push(*o > T::zero());
        } else {
            values.push(*o / *p);
            violations.push(false);
        }
    }
    let out = Ratios { values, violations };
    if out.values.iter().all(|r| *r == T::zero()) {
        return Err(Error::Unreachable { samples: out.values.len(), violations: out.violation_count() });
    }
    if out.violation_count() > 0 {
        log::warn!("{} samples violate predictability; their ratios were set to 0", out.violation_count());
    }
    Ok(out)
}
