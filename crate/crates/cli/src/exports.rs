//! Plot-ready histogram and KDE-grid tables.

use std::path::Path;

use dcinv_core::densities::{fit_kde, BandwidthRule, Density};
use dcinv_core::io::{fmt_f64, write_csv_atomic};
use dcinv_core::matrix::Matrix;
use dcinv_core::stats::linspace;
use dcinv_core::Result;

/// Density-normalized histogram over `[lo, hi]`; values outside are
/// counted in the normalization but not binned.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in values {
        if *v >= lo && *v <= hi {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
    }
    let norm = values.len().max(1) as f64 * width;
    counts.into_iter().map(|c| c as f64 / norm).collect()
}

fn range(columns: &[&[f64]]) -> (f64, f64) {
    let lo = columns.iter().flat_map(|c| c.iter()).copied().fold(f64::INFINITY, f64::min);
    let hi = columns.iter().flat_map(|c| c.iter()).copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// KDE of one column, or `None` when it cannot be fitted (too few or
/// identical values).
fn column_kde(values: &[f64]) -> Option<Density<f64>> {
    if values.len() < 2 {
        return None;
    }
    fit_kde(Matrix::column(values.to_vec()), &BandwidthRule::Scott).ok()
}

fn eval_grid(d: Option<&Density<f64>>, grid: &Matrix<f64>) -> Result<Vec<f64>> {
    match d {
        Some(d) => d.pdf_batch(grid),
        None => Ok(vec![f64::NAN; grid.rows()]),
    }
}

/// A set of named 1-D sample sets and analytic curves written side by side.
pub struct Panel<'a> {
    pub samples: Vec<(&'a str, &'a [f64])>,
    /// Curves evaluated on the KDE grid only.
    pub curves: Vec<(&'a str, &'a Density<f64>)>,
}

pub fn write_panel(dir: &Path, name: &str, panel: &Panel, bins: usize, grid_points: usize) -> Result<()> {
    let cols: Vec<&[f64]> = panel.samples.iter().map(|(_, v)| *v).collect();
    let (lo, hi) = range(&cols);

    let mut header = vec!["bin_lower".to_string(), "bin_upper".to_string()];
    header.extend(panel.samples.iter().map(|(n, _)| n.to_string()));
    let hists: Vec<Vec<f64>> = cols.iter().map(|c| histogram(c, lo, hi, bins)).collect();
    let width = (hi - lo) / bins as f64;
    let rows: Vec<Vec<String>> = (0..bins)
        .map(|b| {
            let mut r = vec![fmt_f64(lo + b as f64 * width), fmt_f64(lo + (b + 1) as f64 * width)];
            r.extend(hists.iter().map(|h| fmt_f64(h[b])));
            r
        })
        .collect();
    write_csv_atomic(&dir.join(format!("hist_{name}.csv")), &header, &rows)?;

    let kdes: Vec<Option<Density<f64>>> = cols.iter().map(|c| column_kde(c)).collect();
    let mut header = vec!["x".to_string()];
    header.extend(panel.samples.iter().map(|(n, _)| format!("{n}_kde")));
    header.extend(panel.curves.iter().map(|(n, _)| n.to_string()));
    let xs = linspace(lo, hi, grid_points);
    let grid = Matrix::column(xs.clone());
    let mut values = Vec::new();
    for k in &kdes {
        values.push(eval_grid(k.as_ref(), &grid)?);
    }
    for (_, d) in &panel.curves {
        values.push(eval_grid(Some(d), &grid)?);
    }
    let rows: Vec<Vec<String>> = xs
        .iter()
        .enumerate()
        .map(|(i, x)| std::iter::once(fmt_f64(*x)).chain(values.iter().map(|v| fmt_f64(v[i]))).collect())
        .collect();
    write_csv_atomic(&dir.join(format!("kde_{name}.csv")), &header, &rows)
}
