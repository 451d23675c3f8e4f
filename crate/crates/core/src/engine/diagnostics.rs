use serde::{Deserialize, Serialize};

use super::rejection::{UpdatedEnsemble, LOW_ACCEPTANCE};
use crate::real::{compensated_sum, Real};

/// Monte Carlo diagnostics of an inversion run.
///
/// Sums run over all proposals in index order with compensated summation,
/// so the report is reproducible bit for bit from the stored ratios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport<T> {
    /// `(1/N) sum r_i`, the integral of the updated density.
    pub integral: T,
    /// `(1/N) sum r_i ln r_i` with `0 ln 0 = 0`: KL(updated || initial).
    pub kl: T,
    pub m_bound: T,
    pub acceptance_rate: T,
    pub p_samples: usize,
    pub n_accepted: usize,
    pub predictability_ok: bool,
    pub predictability_threshold: T,
    pub warnings: Vec<String>,
}

pub fn diagnostics<T: Real>(ens: &UpdatedEnsemble<T>, threshold: T) -> DiagnosticsReport<T> {
    let n = T::from_usize_lossy(ens.len().max(1));
    let integral = compensated_sum(ens.ratios.iter().copied()) / n;
    let kl = compensated_sum(
        ens.ratios.iter().map(|&r| if r > T::zero() { r * r.ln() } else { T::zero() }),
    ) / n;
    let n_accepted = ens.accepted_count();
    let acceptance_rate = T::from_usize_lossy(n_accepted) / n;
    let predictability_ok = (integral - T::one()).abs() <= threshold;

    let mut warnings = Vec::new();
    let violations = ens.violations.iter().filter(|v| **v).count();
    if violations > 0 {
        warnings.push(format!(
            "{violations} samples violate predictability (negligible predicted density where the target is positive); their ratios were set to 0"
        ));
    }
    let extrapolated = ens.extrapolated.iter().filter(|v| **v).count();
    if extrapolated > 0 {
        warnings.push(format!("{extrapolated} initial samples lie outside the map domain (extrapolated)"));
    }
    let first_batch = ens.batch.iter().filter(|b| **b == 0).count();
    let first_accepted = ens.batch.iter().zip(&ens.accepted).filter(|(b, a)| **b == 0 && **a).count();
    if first_batch > 0 && (first_accepted as f64) < LOW_ACCEPTANCE * first_batch as f64 {
        warnings.push(format!(
            "first-batch acceptance rate {:.3e} is below {LOW_ACCEPTANCE:e}; consider an initial density closer to the updated density",
            first_accepted as f64 / first_batch as f64
        ));
    }
    let above = ens.ratios.iter().zip(&ens.batch).filter(|(r, b)| **r > ens.batch_bounds[**b]).count();
    if above > 0 {
        warnings.push(format!("{above} ratios exceed the bound M of their batch"));
    }
    if !predictability_ok {
        warnings.push(format!(
            "integral of the updated density {integral} differs from 1 by more than {threshold}; the predictability assumption may not hold"
        ));
    }

    DiagnosticsReport {
        integral,
        kl,
        m_bound: ens.bound_m(),
        acceptance_rate,
        p_samples: ens.p_samples,
        n_accepted,
        predictability_ok,
        predictability_threshold: threshold,
        warnings,
    }
}
