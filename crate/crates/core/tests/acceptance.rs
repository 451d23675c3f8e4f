//! End-to-end acceptance checks. Prints one PASS/FAIL line per check and
//! exits non-zero if any binding check fails. Lines marked `soft` are
//! reported but do not affect the exit status.

use std::sync::Arc;
use std::time::Instant;

use dcinv_core::densities::{fit_kde, BandwidthRule, Density};
use dcinv_core::engine::{
    diagnostics, invert, push_forward, DiagnosticsReport, Execution, InversionProblem, InversionSettings,
    MapMode, UpdatedEnsemble,
};
use dcinv_core::gp::{self, FitOptions, GpModel, KernelParams};
use dcinv_core::maps::{
    default_grain_noise_s0, hall_petch_eval, AspectRatioMap, FnMap, GrainNoiseModel, HallPetchMap, NoiseModel,
    NoisyMap, SurrogateMap, HALL_PETCH_K,
};
use dcinv_core::matrix::Matrix;
use dcinv_core::stats::{self, ks_two_sample, linspace, trapezoid};
use dcinv_core::Bounds;
use rand::Rng;

#[derive(Default)]
struct Report {
    failed: usize,
    soft_failed: usize,
}

impl Report {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed += 1;
        }
    }

    fn soft(&mut self, name: &str, ok: bool, detail: String) {
        println!("{} {name} (soft): {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.soft_failed += 1;
        }
    }
}

fn within(x: f64, centre: f64, tol: f64) -> bool {
    (x - centre).abs() <= tol
}

fn hall_petch_initial() -> Density<f64> {
    Density::uniform(vec![0.25], vec![2.75]).unwrap()
}

fn run(
    map: Arc<dyn SurrogateMap<f64>>,
    initial: Density<f64>,
    target: Density<f64>,
    mode: MapMode,
    p: usize,
    seed: u64,
    execution: Execution,
) -> (UpdatedEnsemble<f64>, DiagnosticsReport<f64>) {
    let settings = InversionSettings { execution, ..InversionSettings::default() };
    let problem = InversionProblem::new(initial, target, map, mode, p, seed).with_settings(settings);
    invert(&problem).expect("inversion")
}

fn accepted_q(ens: &UpdatedEnsemble<f64>) -> Vec<f64> {
    ens.accepted_q_values().col_values(0)
}

fn fraction_inside(xs: &[f64], lo: f64, hi: f64) -> f64 {
    xs.iter().filter(|x| (lo..=hi).contains(*x)).count() as f64 / xs.len() as f64
}

fn hall_petch_case(r: &mut Report) {
    let map: Arc<dyn SurrogateMap<f64>> = Arc::new(HallPetchMap::default());
    let target = Density::normal(vec![540.0], vec![10.0]).unwrap();
    let start = Instant::now();
    let (ens, d) = run(map, hall_petch_initial(), target, MapMode::Deterministic, 100_000, 1, Execution::Serial);
    let secs = start.elapsed().as_secs_f64();
    let q = accepted_q(&ens);
    let (m, s) = (stats::mean(&q), stats::std_dev(&q));
    r.check("hall-petch normal target, push-forward mean", within(m, 540.0, 0.5), format!("{m:.3} (540 +/- 0.5)"));
    r.check("hall-petch normal target, push-forward sd", within(s, 9.9, 0.5), format!("{s:.3} (9.9 +/- 0.5)"));
    r.check(
        "hall-petch normal target, integral",
        within(d.integral, 0.995, 0.02),
        format!("{:.4} (0.995 +/- 0.02)", d.integral),
    );
    r.soft("hall-petch normal target, KL", within(d.kl, 0.629, 0.05), format!("{:.4} (0.629 +/- 0.05)", d.kl));
    r.check("hall-petch normal target, serial runtime", secs < 60.0, format!("{secs:.2} s (< 60 s)"));
}

fn hall_petch_uniform_case(r: &mut Report) {
    let map: Arc<dyn SurrogateMap<f64>> = Arc::new(HallPetchMap::default());
    let target = Density::uniform(vec![530.0], vec![550.0]).unwrap();
    let (ens, d) = run(map, hall_petch_initial(), target, MapMode::Deterministic, 100_000, 2, Execution::Parallel);
    let frac = fraction_inside(&accepted_q(&ens), 530.0, 550.0);
    r.check("hall-petch uniform target, mass in [530, 550]", frac >= 0.95, format!("{frac:.4} (>= 0.95)"));
    r.check("hall-petch uniform target, integral", within(d.integral, 1.0, 0.05), format!("{:.4} (1 +/- 0.05)", d.integral));
}

fn noisy_hall_petch() -> Arc<dyn SurrogateMap<f64>> {
    let noise = NoiseModel::Grain(GrainNoiseModel::new(default_grain_noise_s0()).unwrap());
    Arc::new(NoisyMap::new(HallPetchMap::default(), noise))
}

fn stochastic_case(r: &mut Report) {
    let target = Density::normal(vec![540.0], vec![10.0]).unwrap();
    let (ens, d) =
        run(noisy_hall_petch(), hall_petch_initial(), target.clone(), MapMode::Stochastic, 100_000, 1, Execution::Parallel);
    let q = accepted_q(&ens);
    let (m, s) = (stats::mean(&q), stats::std_dev(&q));
    r.check("stochastic map, push-forward mean", within(m, 540.0, 0.5), format!("{m:.3} (540 +/- 0.5)"));
    r.check("stochastic map, push-forward sd", within(s, 10.0, 0.5), format!("{s:.3} (10.0 +/- 0.5)"));
    r.check("stochastic map, integral", within(d.integral, 0.994, 0.02), format!("{:.4} (0.994 +/- 0.02)", d.integral));

    let mut pairs = Vec::new();
    for seed in 11..16 {
        let det = run(
            Arc::new(HallPetchMap::default()),
            hall_petch_initial(),
            target.clone(),
            MapMode::Deterministic,
            100_000,
            seed,
            Execution::Parallel,
        )
        .1
        .kl;
        let sto =
            run(noisy_hall_petch(), hall_petch_initial(), target.clone(), MapMode::Stochastic, 100_000, seed, Execution::Parallel)
                .1
                .kl;
        pairs.push((sto, det));
    }
    let ok = pairs.iter().all(|(s, d)| s < d);
    let detail = pairs.iter().map(|(s, d)| format!("{s:.3}<{d:.3}")).collect::<Vec<_>>().join(" ");
    r.check("stochastic map, KL below deterministic on 5 seeds", ok, detail);
}

fn aspect_ratio_case(r: &mut Report) {
    let map: Arc<dyn SurrogateMap<f64>> = Arc::new(AspectRatioMap::default());
    let initial = Density::ordered_uniform(0.25, 1.0, 2).unwrap();
    let target = Density::normal(vec![82.5], vec![0.5]).unwrap();
    let (ens, d) = run(map.clone(), initial.clone(), target, MapMode::Deterministic, 200_000, 3, Execution::Parallel);
    let q = accepted_q(&ens);
    let (m, s) = (stats::mean(&q), stats::std_dev(&q));
    r.check("aspect-ratio normal target, push-forward mean", within(m, 82.5, 0.1), format!("{m:.4} (82.5 +/- 0.1)"));
    r.check("aspect-ratio normal target, push-forward sd", within(s, 0.5, 0.05), format!("{s:.4} (0.5 +/- 0.05)"));
    r.check(
        "aspect-ratio normal target, integral",
        (0.95..=1.02).contains(&d.integral),
        format!("{:.4} ([0.95, 1.02])", d.integral),
    );
    r.check("aspect-ratio normal target, KL", d.kl > 0.1, format!("{:.4} (> 0.1)", d.kl));

    let target = Density::uniform(vec![82.5], vec![83.0]).unwrap();
    let (ens, d) = run(map, initial, target, MapMode::Deterministic, 200_000, 4, Execution::Parallel);
    let frac = fraction_inside(&accepted_q(&ens), 82.5, 83.0);
    r.check("aspect-ratio uniform target, mass in [82.5, 83]", frac >= 0.93, format!("{frac:.4} (>= 0.93)"));
    r.check(
        "aspect-ratio uniform target, integral",
        (0.95..=1.02).contains(&d.integral),
        format!("{:.4} ([0.95, 1.02])", d.integral),
    );
}

fn random_problem(i: u64) -> (Density<f64>, Arc<dyn SurrogateMap<f64>>) {
    let mut rng = dcinv_core::seeds::rng(1000 + i);
    let k = if i.is_multiple_of(2) { 1 } else { 2 };
    let lower: Vec<f64> = (0..k).map(|_| rng.random_range(-2.0..0.0)).collect();
    let upper: Vec<f64> = lower.iter().map(|l| l + rng.random_range(0.5..3.0)).collect();
    let domain = Bounds::new(lower.clone(), upper.clone()).unwrap();
    let initial = if rng.random_bool(0.5) {
        Density::uniform(lower, upper).unwrap()
    } else {
        let mean: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| 0.5 * (l + u)).collect();
        let sd: Vec<f64> = lower.iter().zip(&upper).map(|(l, u)| 0.1 * (u - l)).collect();
        Density::normal(mean, sd).unwrap()
    };
    let a: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
    let b: f64 = rng.random_range(-1.0..1.0);
    let map = FnMap::new(domain, 1, move |x: &[f64]| {
        vec![x.iter().zip(&a).map(|(x, a)| a * x + b * x * x).sum::<f64>()]
    });
    (initial, Arc::new(map))
}

fn self_consistency_suite(r: &mut Report) {
    let (mut worst_rate, mut worst_kl, mut worst_int, mut worst_p) = (1.0f64, 0.0f64, 1.0f64, 1.0f64);
    let mut ok = true;
    for i in 0..10 {
        let (initial, map) = random_problem(i);
        let seed = 500 + i;
        let p = 20_000;
        let pf = push_forward(map.as_ref(), &initial, p, seed, MapMode::Deterministic, &BandwidthRule::Scott).unwrap();
        let problem = InversionProblem::new(initial.clone(), pf.predicted, map, MapMode::Deterministic, p, seed);
        let (ens, d) = invert(&problem).unwrap();
        let fresh = initial.sample(p, seed + 10_000).unwrap();
        let acc = ens.accepted_samples();
        let p_min = (0..initial.dim())
            .map(|j| ks_two_sample(&acc.col_values(j), &fresh.col_values(j)).p_value)
            .fold(1.0, f64::min);
        ok &= d.acceptance_rate > 0.95
            && d.kl < 0.01
            && (0.98..=1.02).contains(&d.integral)
            && p_min > 0.01;
        worst_rate = worst_rate.min(d.acceptance_rate);
        worst_kl = worst_kl.max(d.kl.abs());
        worst_int = if (d.integral - 1.0).abs() > (worst_int - 1.0).abs() { d.integral } else { worst_int };
        worst_p = worst_p.min(p_min);
    }
    r.check(
        "self-consistency on 10 random problems",
        ok,
        format!("min acceptance {worst_rate:.4}, max |KL| {worst_kl:.2e}, worst integral {worst_int:.4}, min KS p {worst_p:.3}"),
    );
}

fn l1_distance(f: &[f64], g: &[f64], dx: f64) -> f64 {
    let diff: Vec<f64> = f.iter().zip(g).map(|(a, b)| (a - b).abs()).collect();
    trapezoid(&diff, dx)
}

fn change_of_variables_oracle(r: &mut Report) {
    let map: Arc<dyn SurrogateMap<f64>> = Arc::new(HallPetchMap::default());
    let target = Density::normal(vec![540.0], vec![10.0]).unwrap();
    let (ens, _) = run(map, hall_petch_initial(), target.clone(), MapMode::Deterministic, 100_000, 5, Execution::Parallel);
    let kde = fit_kde(ens.accepted_samples(), &BandwidthRule::Scott).unwrap();
    let grid = linspace(0.25, 2.75, 2001);
    let dx = grid[1] - grid[0];
    let est: Vec<f64> = grid.iter().map(|x| kde.pdf(&[*x]).unwrap()).collect();
    let exact: Vec<f64> = grid
        .iter()
        .map(|&mu| {
            let dq = 0.5 * HALL_PETCH_K / (mu.exp() * 1e-6).sqrt();
            target.pdf(&[hall_petch_eval(mu)]).unwrap() * dq
        })
        .collect();
    let l1 = l1_distance(&est, &exact, dx);
    r.check("change-of-variables oracle, L1", l1 < 0.1, format!("{l1:.4} (< 0.1)"));
}

fn hall_petch_training() -> (Matrix<f64>, Vec<f64>) {
    let x = linspace(0.25, 2.75, 11);
    let y = x.iter().map(|m| hall_petch_eval(*m)).collect();
    (Matrix::column(x), y)
}

fn gp_interpolation(r: &mut Report) {
    let (x, y) = hall_petch_training();
    let (model, _) = gp::fit(x.clone(), y.clone(), vec![0.0; 11], &FitOptions::default()).unwrap();
    let err = x
        .iter_rows()
        .zip(&y)
        .map(|(xi, yi)| (model.predict(xi).unwrap().0 - yi).abs())
        .fold(0.0, f64::max);
    r.check("GP noiseless interpolation", err < 1e-6, format!("max error {err:.2e} (< 1e-6)"));
}

/// Determinant and solve by Gaussian elimination with partial pivoting.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> (f64, Vec<f64>) {
    let n = b.len();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|i, j| a[*i][c].abs().total_cmp(&a[*j][c].abs())).unwrap();
        if p != c {
            a.swap(p, c);
            b.swap(p, c);
            det = -det;
        }
        det *= a[c][c];
        for i in c + 1..n {
            let f = a[i][c] / a[c][c];
            for j in c..n {
                a[i][j] -= f * a[c][j];
            }
            b[i] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|j| a[i][j] * x[j]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    (det, x)
}

fn lml_oracle(r: &mut Report) {
    let mut worst = 0.0f64;
    let mut rng = dcinv_core::seeds::rng(77);
    for n in 1..=5 {
        let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.7 + rng.random_range(0.0..0.3)).collect();
        let y: Vec<f64> = x.iter().map(|v| v.sin() * 3.0 + 1.0).collect();
        let noise: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.5)).collect();
        let params = KernelParams::new(1.7, vec![0.9]).unwrap();
        let model = GpModel::new(Matrix::column(x.clone()), y.clone(), noise.clone(), params.clone(), Some(0.5)).unwrap();
        let k: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let kij = gp::matern32(&[x[i]], &[x[j]], &params).unwrap();
                        kij + if i == j { noise[i] + model.jitter() } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        let resid: Vec<f64> = y.iter().map(|v| v - 0.5).collect();
        let (det, alpha) = dense_solve(k, resid.clone());
        let fit: f64 = resid.iter().zip(&alpha).map(|(a, b)| a * b).sum();
        let exact = -0.5 * fit - 0.5 * det.ln() - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
        worst = worst.max((model.log_marginal_likelihood() - exact).abs());
    }
    r.check("log marginal likelihood vs dense oracle, n <= 5", worst < 1e-8, format!("max error {worst:.2e} (< 1e-8)"));
}

fn diagnostics_formulas(r: &mut Report) {
    let ratios = vec![0.5f64, 1.5];
    let batch = vec![0, 0];
    let ens = UpdatedEnsemble {
        samples: Matrix::zeros(2, 1),
        q_values: Matrix::zeros(2, 1),
        batch_bounds: UpdatedEnsemble::bounds_from_ratios(&ratios, &batch, 1.0),
        ratios,
        batch,
        accepted: vec![true, true],
        violations: vec![false; 2],
        extrapolated: vec![false; 2],
        p_samples: 2,
        predicted: None,
    };
    let d = diagnostics(&ens, 0.05);
    let kl = (0.5f64 * 0.5f64.ln() + 1.5 * 1.5f64.ln()) / 2.0;
    let ok = (d.integral - 1.0).abs() < 1e-10 && (d.kl - kl).abs() < 1e-10 && (d.kl - 0.13081).abs() < 1e-5;
    r.check("diagnostics hand computation", ok, format!("integral {}, KL {:.10}", d.integral, d.kl));
}

fn variance_hygiene(r: &mut Report) {
    let (x, y) = hall_petch_training();
    let noise: Vec<f64> = x.as_slice().iter().map(|m| (0.16 * (1.5 * m).exp()).powi(2) / 25.0).collect();
    let (model, _) = gp::fit(x, y, noise, &FitOptions::default()).unwrap();
    let mut rng = dcinv_core::seeds::rng(9);
    let min = (0..10_000)
        .map(|_| model.predict_unclamped(&[rng.random_range(0.0..3.0)]).unwrap().1)
        .fold(f64::INFINITY, f64::min);
    r.check("posterior variance before clamping, 1e4 queries", min >= -1e-8, format!("min {min:.3e} (>= -1e-8)"));
}

fn kde_normalization(r: &mut Report) {
    let s1 = Density::normal(vec![540.0], vec![10.0]).unwrap().sample(5_000, 1).unwrap();
    let k1 = fit_kde(s1.clone(), &BandwidthRule::Scott).unwrap();
    let h = k1.as_kde().unwrap().bandwidths()[0];
    let col = s1.col_values(0);
    let lo = col.iter().copied().fold(f64::INFINITY, f64::min) - 8.0 * h;
    let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 8.0 * h;
    let g = linspace(lo, hi, 4001);
    let v: Vec<f64> = g.iter().map(|x| k1.pdf(&[*x]).unwrap()).collect();
    let i1 = trapezoid(&v, g[1] - g[0]);

    let s2 = Density::normal(vec![0.0, 1.0], vec![1.0, 0.5]).unwrap().sample(2_000, 2).unwrap();
    let k2 = fit_kde(s2, &BandwidthRule::Scott).unwrap();
    let gx = linspace(-6.0, 6.0, 241);
    let gy = linspace(-2.0, 4.0, 241);
    let rows: Vec<f64> = gx
        .iter()
        .map(|x| {
            let v: Vec<f64> = gy.iter().map(|y| k2.pdf(&[*x, *y]).unwrap()).collect();
            trapezoid(&v, gy[1] - gy[0])
        })
        .collect();
    let i2 = trapezoid(&rows, gx[1] - gx[0]);
    r.check("KDE normalization 1-D", within(i1, 1.0, 1e-2), format!("{i1:.6} (1 +/- 1e-2)"));
    r.check("KDE normalization 2-D", within(i2, 1.0, 3e-2), format!("{i2:.6} (1 +/- 3e-2)"));
}

fn serial_parallel_identity(r: &mut Report) {
    let target = Density::normal(vec![540.0], vec![10.0]).unwrap();
    let go = |exec| run(noisy_hall_petch(), hall_petch_initial(), target.clone(), MapMode::Stochastic, 20_000, 8, exec);
    let (a, da) = go(Execution::Serial);
    let (b, db) = go(Execution::Parallel);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let ok = bits(a.samples.as_slice()) == bits(b.samples.as_slice())
        && bits(a.q_values.as_slice()) == bits(b.q_values.as_slice())
        && bits(&a.ratios) == bits(&b.ratios)
        && a.accepted == b.accepted
        && da.integral.to_bits() == db.integral.to_bits()
        && da.kl.to_bits() == db.kl.to_bits();

    let (x, y) = hall_petch_training();
    let fit = |parallel| {
        gp::fit(x.clone(), y.clone(), vec![1e-2; 11], &FitOptions { parallel, ..FitOptions::default() }).unwrap().0
    };
    let (ga, gb) = (fit(false), fit(true));
    let gp_ok = ga.params().theta0.to_bits() == gb.params().theta0.to_bits()
        && bits(&ga.params().lengthscales) == bits(&gb.params().lengthscales);
    r.check(
        "serial vs parallel bit-identity",
        ok && gp_ok,
        format!("inversion {}, GP fit {}", if ok { "identical" } else { "differs" }, if gp_ok { "identical" } else { "differs" }),
    );
}

fn main() {
    let mut r = Report::default();
    hall_petch_case(&mut r);
    hall_petch_uniform_case(&mut r);
    stochastic_case(&mut r);
    aspect_ratio_case(&mut r);
    self_consistency_suite(&mut r);
    change_of_variables_oracle(&mut r);
    gp_interpolation(&mut r);
    lml_oracle(&mut r);
    diagnostics_formulas(&mut r);
    variance_hygiene(&mut r);
    kde_normalization(&mut r);
    serial_parallel_identity(&mut r);
    println!(
        "acceptance: {} binding failures, {} soft failures",
        r.failed, r.soft_failed
    );
    if r.failed > 0 {
        std::process::exit(1);
    }
}
