//! Box-constrained quasi-Newton minimizer used for hyperparameter fitting.

pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    /// Objective values at accepted iterates, starting with `f(x0)`.
    pub trace: Vec<f64>,
}

/// Projected BFGS with Armijo backtracking. `objective` returns the value
/// and gradient; non-finite values make the line search back off.
pub(crate) fn minimize_bounded<F>(
    mut objective: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    max_iter: usize,
) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let clamp = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut x = x0.to_vec();
    clamp(&mut x);
    let (mut f, mut g) = objective(&x).filter(|(f, g)| f.is_finite() && g.iter().all(|v| v.is_finite()))?;
    let mut h = identity(n);
    let mut trace = vec![f];

    for _ in 0..max_iter {
        // projected gradient norm
        let pg = (0..n)
            .map(|i| {
                let moved = (x[i] - g[i]).clamp(lower[i], upper[i]);
                (moved - x[i]).abs()
            })
            .fold(0.0, f64::max);
        if pg < 1e-7 {
            break;
        }
        let mut d: Vec<f64> = (0..n).map(|i| -(0..n).map(|j| h[i][j] * g[j]).sum::<f64>()).collect();
        // variables pinned at a bound with the gradient pushing outward stay put
        for i in 0..n {
            if (x[i] <= lower[i] && d[i] < 0.0) || (x[i] >= upper[i] && d[i] > 0.0) {
                d[i] = 0.0;
            }
        }
        if d.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() >= 0.0 {
            // not a descent direction; fall back to steepest descent
            h = identity(n);
            d = g.iter().map(|v| -v).collect();
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<f64> = (0..n).map(|i| x[i] + step * d[i]).collect();
            clamp(&mut xn);
            let decrease: f64 = (0..n).map(|i| g[i] * (xn[i] - x[i])).sum();
            if let Some((fn_, gn)) = objective(&xn) {
                if fn_.is_finite() && gn.iter().all(|v| v.is_finite()) && fn_ <= f + 1e-4 * decrease {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fn_, gn)) = accepted else { break };

        let s: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| gn[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-12 {
            bfgs_update(&mut h, &s, &y, sy);
        } else {
            h = identity(n);
        }
        let improvement = f - fn_;
        x = xn;
        f = fn_;
        g = gn;
        trace.push(f);
        if improvement.abs() <= 1e-12 * (1.0 + f.abs()) {
            break;
        }
    }
    Some(Minimum { x, value: f, trace })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Inverse-Hessian update `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
