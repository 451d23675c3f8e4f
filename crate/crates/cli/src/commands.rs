use std::path::{Path, PathBuf};

use dcinv_core::engine::{diagnostics, invert, DiagnosticsReport, InversionProblem, UpdatedEnsemble};
use dcinv_core::gp::{self, FitOptions, GpModelFile};
use dcinv_core::io::{fmt_f64, read_table, write_atomic, write_csv_atomic, Table};
use dcinv_core::maps::{point_seed, realizations};
use dcinv_core::matrix::Matrix;
use dcinv_core::stats;

use crate::config::Loaded;
use crate::error::{CliError, CliResult};
use crate::exports::{write_panel, Panel};
use crate::lock::DirLock;
use crate::pipeline::{self, Names};

/// Options shared by every subcommand.
pub struct Run {
    pub cfg: Loaded,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub validate_only: bool,
}

impl Run {
    pub fn new(config: &Path, seed: Option<u64>, out_dir: Option<PathBuf>, validate_only: bool) -> CliResult<Self> {
        let cfg = Loaded::read(config)?;
        let seed = seed.unwrap_or(cfg.config.seed);
        let out_dir = pipeline::out_dir(&cfg, out_dir);
        Ok(Run { cfg, seed, out_dir, validate_only })
    }

    fn validated(&self) -> bool {
        if self.validate_only {
            println!("{}: configuration is valid", self.cfg.path.display());
        }
        self.validate_only
    }
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

fn grid_points(run: &Run, dim: usize) -> CliResult<Vec<Vec<f64>>> {
    let cfg = &run.cfg;
    let g = &cfg.config.generate;
    if let Some(points) = &g.points {
        if let Some(bad) = points.iter().find(|p| p.len() != dim) {
            return Err(cfg.error(
                Some("generate"),
                Some("points"),
                format!("point {bad:?} has {} coordinates, the map takes {dim}", bad.len()),
            ));
        }
        return Ok(points.clone());
    }
    let (Some(start), Some(stop), Some(step)) = (g.grid_start, g.grid_stop, g.grid_step) else {
        return Err(cfg.error(Some("generate"), None, "give either points or grid_start, grid_stop and grid_step"));
    };
    if !(step > 0.0 && stop >= start) {
        return Err(cfg.error(Some("generate"), Some("grid_step"), "need grid_step > 0 and grid_stop >= grid_start"));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
    let axis: Vec<f64> = (0..n).map(|i| start + i as f64 * step).collect();
    let mut points: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..dim {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |a| {
                    let mut q = p.clone();
                    q.push(*a);
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

pub fn generate(run: &Run) -> CliResult<()> {
    let (map, names) = pipeline::realization_map(&run.cfg)?;
    let points = grid_points(run, names.features.len())?;
    let n_sve = run.cfg.config.generate.n_sve;
    if n_sve == 0 {
        return Err(run.cfg.error(Some("generate"), Some("n_sve"), "n_sve must be at least 1"));
    }
    if run.validated() {
        return Ok(());
    }
    let _lock = DirLock::acquire(&run.out_dir)?;

    let mut header = names.features.clone();
    header.extend([names.target.clone(), "variance".into(), "noise_variance".into()]);
    let mut real_header = vec!["point".to_string(), "sve".to_string()];
    real_header.extend(names.features.iter().cloned());
    real_header.push(names.target.clone());

    let mut rows = Vec::new();
    let mut real_rows = Vec::new();
    let mut skipped = 0;
    for (j, x) in points.iter().enumerate() {
        if map.evaluate(x).is_err() {
            skipped += 1;
            continue;
        }
        let draws = realizations(map.as_ref(), x, n_sve, point_seed(run.seed, j))?;
        let q: Vec<f64> = draws.iter().map(|r| r[0]).collect();
        let var = if n_sve > 1 { stats::variance(&q) } else { 0.0 };
        let mut row: Vec<String> = x.iter().map(|v| fmt_f64(*v)).collect();
        row.extend([fmt_f64(stats::mean(&q)), fmt_f64(var), fmt_f64(var / n_sve as f64)]);
        rows.push(row);
        let point = rows.len() - 1;
        for (s, v) in q.iter().enumerate() {
            let mut r = vec![point.to_string(), s.to_string()];
            r.extend(x.iter().map(|v| fmt_f64(*v)));
            r.push(fmt_f64(*v));
            real_rows.push(r);
        }
    }
    if skipped > 0 {
        log::info!("skipped {skipped} grid points outside the map's valid region");
    }
    write_csv_atomic(&run.out_dir.join("dataset.csv"), &header, &rows)?;
    write_csv_atomic(&run.out_dir.join("realizations.csv"), &real_header, &real_rows)?;
    println!("wrote {} points x {n_sve} realizations to {}", rows.len(), run.out_dir.display());
    Ok(())
}

pub fn fit(run: &Run) -> CliResult<()> {
    let cfg = &run.cfg;
    let spec = pipeline::fit_spec(cfg)?;
    let path = cfg.require_file("fit", "dataset_file", &spec.dataset_file)?;
    let table = read_table(&path)?;
    let column = |c: &String| {
        table.column(c).map_err(|_| cfg.error(Some("fit"), None, format!("column '{c}' not found in {}", path.display())))
    };
    let x = {
        for c in &spec.features {
            column(c)?;
        }
        table.columns(&spec.features)?
    };
    let y = column(&spec.target)?;
    let noise = match &spec.noise_variance {
        Some(c) => column(c)?,
        None => vec![0.0; y.len()],
    };
    if spec.restarts == 0 {
        return Err(cfg.error(Some("fit"), Some("restarts"), "restarts must be at least 1"));
    }
    if run.validated() {
        return Ok(());
    }
    let _lock = DirLock::acquire(&run.out_dir)?;
    let opts = FitOptions {
        restarts: spec.restarts,
        max_iter: spec.max_iter,
        seed: run.seed,
        parallel: spec.parallel,
        ..FitOptions::default()
    };
    let (model, report) = gp::fit(x, y, noise, &opts).map_err(CliError::from_fit)?;
    let file = GpModelFile::from_model(&model, spec.features.clone(), spec.target.clone());
    write_atomic(&run.out_dir.join(&spec.model_file), file.to_json()?.as_bytes())?;
    println!("log marginal likelihood: {}", file.log_marginal_likelihood);
    println!("theta0: {}", file.theta0);
    println!("lengthscales: {:?}", file.lengthscales);
    println!("jitter: {:e}", file.jitter);
    println!("best start: {} of {}", report.best_start, report.start_values.len());
    Ok(())
}

fn problem(run: &Run, names_only: bool) -> CliResult<Option<(InversionProblem<f64>, Names)>> {
    let cfg = &run.cfg;
    let names = pipeline::map_names(cfg)?;
    let initial = pipeline::build_density(cfg, "initial_density", names.features.len())?;
    let target = pipeline::build_density(cfg, "target_density", 1)?;
    let (settings, mode) = pipeline::settings(cfg)?;
    if names_only {
        return Ok(None);
    }
    let (map, names) = pipeline::build_map(cfg, run.seed)?;
    let p = cfg.config.inversion.p_samples;
    let problem = InversionProblem::new(initial, target, map, mode, p, run.seed).with_settings(settings);
    problem.validate().map_err(|e| cfg.error(Some("initial_density"), None, e.to_string()))?;
    Ok(Some((problem, names)))
}

fn report_json(report: &DiagnosticsReport<f64>) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(report).map_err(dcinv_core::Error::from)? + "\n")
}

pub fn invert_cmd(run: &Run) -> CliResult<()> {
    let dataset_map = pipeline::map_spec(&run.cfg)?.kind == crate::config::MapKind::Dataset;
    if run.validate_only {
        // dataset maps would need a GP fit to check more
        problem(run, dataset_map)?;
        run.validated();
        return Ok(());
    }
    let (problem, names) = problem(run, false)?.expect("built");
    let _lock = DirLock::acquire(&run.out_dir)?;
    let (ens, report) = invert(&problem)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    write_samples(&run.out_dir, &ens, &names)?;
    write_atomic(&run.out_dir.join("diagnostics.json"), report_json(&report)?.as_bytes())?;
    write_exports(run, &problem, &ens, &names)?;
    print!("{}", report_json(&report)?);
    Ok(())
}

fn write_samples(dir: &Path, ens: &UpdatedEnsemble<f64>, names: &Names) -> CliResult<()> {
    let mut header = names.features.clone();
    header.push(names.target.clone());
    header.push("ratio".into());
    let row = |i: usize| {
        let mut r: Vec<String> = ens.samples.row(i).iter().map(|v| fmt_f64(*v)).collect();
        r.extend(ens.q_values.row(i).iter().map(|v| fmt_f64(*v)));
        r.push(fmt_f64(ens.ratios[i]));
        r
    };
    let accepted: Vec<Vec<String>> = ens.accepted_indices().into_iter().map(row).collect();
    write_csv_atomic(&dir.join("accepted.csv"), &header, &accepted)?;

    let mut full_header = vec!["batch".to_string()];
    full_header.extend(header);
    full_header.extend(["accepted".into(), "violation".into(), "extrapolated".into()]);
    let all: Vec<Vec<String>> = (0..ens.len())
        .map(|i| {
            let mut r = vec![ens.batch[i].to_string()];
            r.extend(row(i));
            r.extend([flag(ens.accepted[i]), flag(ens.violations[i]), flag(ens.extrapolated[i])]);
            r
        })
        .collect();
    write_csv_atomic(&dir.join("ensemble.csv"), &full_header, &all)?;
    Ok(())
}

fn write_exports(run: &Run, problem: &InversionProblem<f64>, ens: &UpdatedEnsemble<f64>, names: &Names) -> CliResult<()> {
    let out = &run.cfg.config.outputs;
    let bins = out.histogram_bins.max(1);
    let grid = out.kde_grid_points.max(2);
    let accepted = ens.accepted_samples();
    // the proposals of the first batch are draws from the initial density
    let first: Vec<usize> = (0..ens.len()).filter(|i| ens.batch[*i] == 0).collect();
    let initial = ens.samples.select_rows(&first);
    for (j, name) in names.features.iter().enumerate() {
        let (a, b) = (initial.col_values(j), accepted.col_values(j));
        let panel = Panel { samples: vec![("initial", &a), ("updated", &b)], curves: vec![] };
        write_panel(&run.out_dir, name, &panel, bins, grid)?;
    }
    let predicted = ens.q_values.select_rows(&first).col_values(0);
    let updated = ens.accepted_q_values().col_values(0);
    let mut curves = vec![("target", &problem.target)];
    if let Some(p) = &ens.predicted {
        curves.push(("predicted", p));
    }
    let panel = Panel { samples: vec![("predicted", &predicted), ("updated", &updated)], curves };
    write_panel(&run.out_dir, &names.target, &panel, bins, grid)?;
    Ok(())
}

fn ensemble_from_table(table: &Table, safety: f64) -> CliResult<UpdatedEnsemble<f64>> {
    for c in ["ratio", "accepted", "batch"] {
        table.column_index(c)?;
    }
    let optional = |name: &str| -> Vec<bool> {
        table.column(name).map(|v| v.iter().map(|x| *x != 0.0).collect()).unwrap_or_else(|_| vec![false; table.data.rows()])
    };
    let ratios = table.column("ratio")?;
    let batch: Vec<usize> = table.column("batch")?.iter().map(|b| *b as usize).collect();
    let n = ratios.len();
    if n == 0 {
        return Err(CliError::input("ensemble has no rows"));
    }
    if ratios.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(CliError::input("ratios must be finite and non-negative"));
    }
    Ok(UpdatedEnsemble {
        samples: Matrix::zeros(n, 0),
        q_values: Matrix::zeros(n, 0),
        batch_bounds: UpdatedEnsemble::bounds_from_ratios(&ratios, &batch, safety),
        p_samples: batch.iter().filter(|b| **b == 0).count(),
        accepted: optional("accepted"),
        violations: optional("violation"),
        extrapolated: optional("extrapolated"),
        ratios,
        batch,
        predicted: None,
    })
}

pub fn diagnose(run: &Run, ensemble: Option<PathBuf>) -> CliResult<()> {
    let path = ensemble.unwrap_or_else(|| run.out_dir.join("ensemble.csv"));
    let inv = &run.cfg.config.inversion;
    pipeline::settings(&run.cfg)?;
    if run.validated() {
        return Ok(());
    }
    let table = read_table(&path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let ens = ensemble_from_table(&table, inv.safety_factor)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let report = diagnostics(&ens, inv.predictability_threshold);
    let json = report_json(&report)?;
    let _lock = DirLock::acquire(&run.out_dir)?;
    write_atomic(&run.out_dir.join("diagnose.json"), json.as_bytes())?;
    print!("{json}");
    Ok(())
}
