use rayon::prelude::*;

use super::MapMode;
use crate::densities::{fit_kde, BandwidthRule, Density};
use crate::error::{Error, Result};
use crate::maps::SurrogateMap;
use crate::matrix::Matrix;
use crate::real::Real;
use crate::seeds;

/// Initial samples, their images under the map, and the fitted KDE of
/// those images.
#[derive(Debug, Clone)]
pub struct PushForward<T: Real> {
    pub samples: Matrix<T>,
    pub q_values: Matrix<T>,
    pub extrapolated: Vec<bool>,
    pub predicted: Density<T>,
}

/// Draws batch `batch` of `p` initial samples and maps them. Stochastic
/// maps get one sub-seed per sample, derived from `(seed, batch, index)`.
pub fn propagate<T: Real, M: SurrogateMap<T> + ?Sized>(
    map: &M,
    density: &Density<T>,
    p: usize,
    seed: u64,
    batch: usize,
    mode: MapMode,
) -> Result<(Matrix<T>, Matrix<T>, Vec<bool>)> {
    Error::check_dim(map.input_dim(), density.dim())?;
    let samples = density.sample(p, seeds::derive(seed, seeds::STREAM_INITIAL, batch as u64))?;
    let realization_seed = seeds::derive(seed, seeds::STREAM_REALIZATION, batch as u64);
    let m = map.output_dim();
    let outputs: Vec<Result<Vec<T>>> = (0..p)
        .into_par_iter()
        .map(|i| {
            let x = samples.row(i);
            match mode {
                MapMode::Deterministic => map.evaluate(x),
                MapMode::Stochastic => map.evaluate_realization(
                    x,
                    seeds::derive(realization_seed, seeds::STREAM_REALIZATION, i as u64),
                ),
            }
        })
        .collect();
    let mut q = Matrix::zeros(p, m);
    for (i, out) in outputs.into_iter().enumerate() {
        let lambda = || samples.row(i).iter().map(|v| v.as_f64()).collect::<Vec<f64>>();
        let out = out.map_err(|e| Error::MapEvaluation { lambda: lambda(), message: e.to_string() })?;
        if out.len() != m || out.iter().any(|v| !v.is_finite()) {
            return Err(Error::MapEvaluation { lambda: lambda(), message: "non-finite or mis-sized output".into() });
        }
        q.row_mut(i).copy_from_slice(&out);
    }
    let extrapolated = samples.iter_rows().map(|x| !map.domain().contains(x)).collect();
    Ok((samples, q, extrapolated))
}

/// Forward UQ: propagates `p` samples of `density` (batch 0 of `seed`)
/// through `map` and fits a KDE to the images.
pub fn push_forward<T: Real, M: SurrogateMap<T> + ?Sized>(
    map: &M,
    density: &Density<T>,
    p: usize,
    seed: u64,
    mode: MapMode,
    bandwidth: &BandwidthRule<T>,
) -> Result<PushForward<T>> {
    if p < super::MIN_P_SAMPLES {
        return Err(Error::input(format!("push-forward needs at least {} samples", super::MIN_P_SAMPLES)));
    }
    let (samples, q_values, extrapolated) = propagate(map, density, p, seed, 0, mode)?;
    let predicted = fit_kde(q_values.clone(), bandwidth)?;
    Ok(PushForward { samples, q_values, extrapolated, predicted })
}
