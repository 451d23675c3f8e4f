//! Turns config sections into densities, maps and inversion settings.

use std::path::PathBuf;
use std::sync::Arc;

use dcinv_core::densities::{fit_kde, BandwidthRule, Bounds, Density};
use dcinv_core::engine::{Execution, InversionSettings, MapMode};
use dcinv_core::gp::{self, FitOptions, GpModelFile};
use dcinv_core::io::read_table;
use dcinv_core::maps::{
    default_grain_noise_s0, AspectRatioMap, EnsembleAverageMap, GpMap, GrainNoiseModel, HallPetchMap, NoiseModel,
    NoisyMap, SurrogateMap,
};

use crate::config::{BandwidthSpec, DensityKind, DensitySpec, FitSpec, Loaded, MapKind, MapSpec, ModeSpec, NoiseKind};
use crate::error::{CliError, CliResult};

pub type DynMap = Arc<dyn SurrogateMap<f64>>;

/// Column names for a map's inputs and output.
#[derive(Debug, Clone)]
pub struct Names {
    pub features: Vec<String>,
    pub target: String,
}

pub fn map_spec(cfg: &Loaded) -> CliResult<&MapSpec> {
    cfg.config.map.as_ref().ok_or_else(|| cfg.error(None, None, "missing [map] section"))
}

pub fn fit_spec(cfg: &Loaded) -> CliResult<&FitSpec> {
    cfg.config.fit.as_ref().ok_or_else(|| cfg.error(None, None, "missing [fit] section"))
}

fn reject_keys(cfg: &Loaded, spec: &MapSpec, section: &str) -> CliResult<()> {
    let present: [(&str, bool); 13] = [
        ("sigma0", spec.sigma0.is_some()),
        ("k_hp", spec.k_hp.is_some()),
        ("noise", spec.noise.is_some()),
        ("s0", spec.s0.is_some()),
        ("noise_sd", spec.noise_sd.is_some()),
        ("n_sve", spec.n_sve.is_some()),
        ("model_file", spec.model_file.is_some()),
        ("dataset_file", spec.dataset_file.is_some()),
        ("features", spec.features.is_some()),
        ("target", spec.target.is_some()),
        ("noise_variance", spec.noise_variance.is_some()),
        ("domain_lower", spec.domain_lower.is_some()),
        ("domain_upper", spec.domain_upper.is_some()),
    ];
    let allowed: &[&str] = match spec.kind {
        MapKind::HallPetch => &["sigma0", "k_hp", "noise", "s0", "noise_sd", "n_sve"],
        MapKind::AspectRatio => &["noise", "noise_sd", "n_sve"],
        MapKind::GpModel => &["model_file", "noise", "s0", "noise_sd", "n_sve", "domain_lower", "domain_upper"],
        MapKind::Dataset => &[
            "dataset_file",
            "features",
            "target",
            "noise_variance",
            "noise",
            "s0",
            "noise_sd",
            "n_sve",
            "domain_lower",
            "domain_upper",
        ],
    };
    for (key, set) in present {
        if set && !allowed.contains(&key) {
            return Err(cfg.error(Some(section), Some(key), format!("'{key}' does not apply to this map kind")));
        }
    }
    Ok(())
}

/// Validates the `[map]` table and returns its column names without
/// building the map (no GP fitting).
pub fn map_names(cfg: &Loaded) -> CliResult<Names> {
    names_for(cfg, map_spec(cfg)?, "map")
}

fn names_for(cfg: &Loaded, spec: &MapSpec, section: &str) -> CliResult<Names> {
    reject_keys(cfg, spec, section)?;
    if spec.n_sve == Some(0) {
        return Err(cfg.error(Some(section), Some("n_sve"), "n_sve must be at least 1"));
    }
    match spec.kind {
        MapKind::HallPetch => Ok(Names { features: vec!["mu_d".into()], target: "sigma_y".into() }),
        MapKind::AspectRatio => {
            Ok(Names { features: vec!["b_over_a".into(), "c_over_a".into()], target: "sigma_y".into() })
        }
        MapKind::GpModel => {
            let file = load_model_file(cfg, spec, section)?;
            Ok(Names { features: file.feature_names, target: file.target_name })
        }
        MapKind::Dataset => {
            let path = required(cfg, section, "dataset_file", spec.dataset_file.as_ref())?;
            let path = cfg.require_file(section, "dataset_file", path)?;
            let features = required(cfg, section, "features", spec.features.as_ref())?.clone();
            let target = required(cfg, section, "target", spec.target.as_ref())?.clone();
            let table = read_table(&path)?;
            for c in features.iter().chain([&target]).chain(spec.noise_variance.as_ref()) {
                table.column_index(c).map_err(|_| {
                    cfg.error(Some(section), None, format!("column '{c}' not found in {}", path.display()))
                })?;
            }
            Ok(Names { features, target })
        }
    }
}

fn required<'a, T>(cfg: &Loaded, section: &str, key: &str, v: Option<&'a T>) -> CliResult<&'a T> {
    v.ok_or_else(|| cfg.error(Some(section), None, format!("missing '{key}' for this map kind")))
}

fn load_model_file(cfg: &Loaded, spec: &MapSpec, section: &str) -> CliResult<GpModelFile> {
    let path = required(cfg, section, "model_file", spec.model_file.as_ref())?;
    let path = cfg.require_file(section, "model_file", path)?;
    let text = std::fs::read_to_string(&path)?;
    GpModelFile::from_json(&text)
        .map_err(|e| cfg.error(Some(section), Some("model_file"), format!("{}: {e}", path.display())))
}

fn noise_model(cfg: &Loaded, spec: &MapSpec, section: &str, default: NoiseKind) -> CliResult<Option<NoiseModel<f64>>> {
    let kind = spec.noise.unwrap_or(default);
    let at = |key: &str, msg: &str| cfg.error(Some(section), Some(key), msg);
    match kind {
        NoiseKind::None => Ok(None),
        NoiseKind::Grain => {
            let s0 = spec.s0.unwrap_or_else(default_grain_noise_s0);
            let g = GrainNoiseModel::new(s0).map_err(|_| at("s0", "s0 must be finite and non-negative"))?;
            Ok(Some(NoiseModel::Grain(g)))
        }
        NoiseKind::Constant => {
            let sd = spec.noise_sd.ok_or_else(|| at("noise", "constant noise needs noise_sd"))?;
            if !(sd.is_finite() && sd >= 0.0) {
                return Err(at("noise_sd", "noise_sd must be finite and non-negative"));
            }
            Ok(Some(NoiseModel::Constant(sd)))
        }
    }
}

fn with_noise<M: SurrogateMap<f64> + 'static>(base: M, noise: Option<NoiseModel<f64>>, n_sve: usize) -> CliResult<DynMap> {
    let noisy = NoisyMap::new(base, noise.unwrap_or(NoiseModel::Constant(0.0)));
    Ok(if n_sve > 1 { Arc::new(EnsembleAverageMap::new(noisy, n_sve)?) } else { Arc::new(noisy) })
}

fn domain(cfg: &Loaded, spec: &MapSpec, section: &str) -> CliResult<Option<Bounds<f64>>> {
    match (&spec.domain_lower, &spec.domain_upper) {
        (None, None) => Ok(None),
        (Some(l), Some(u)) => Bounds::new(l.clone(), u.clone())
            .map(Some)
            .map_err(|e| cfg.error(Some(section), Some("domain_lower"), e.to_string())),
        _ => Err(cfg.error(Some(section), None, "domain_lower and domain_upper go together")),
    }
}

fn fit_options(cfg: &Loaded, seed: u64) -> FitOptions {
    let mut opts = FitOptions { seed, ..FitOptions::default() };
    if let Some(f) = &cfg.config.fit {
        opts.restarts = f.restarts;
        opts.max_iter = f.max_iter;
        opts.parallel = f.parallel;
    }
    opts
}

/// Builds the forward map. `dataset` maps fit a GP first.
pub fn build_map(cfg: &Loaded, seed: u64) -> CliResult<(DynMap, Names)> {
    let names = map_names(cfg)?;
    let spec = map_spec(cfg)?;
    let section = "map";
    let n_sve = spec.n_sve.unwrap_or(1);
    let map = match spec.kind {
        MapKind::HallPetch => {
            let d = HallPetchMap::<f64>::default();
            let base = HallPetchMap::new(spec.sigma0.unwrap_or(d.sigma0), spec.k_hp.unwrap_or(d.k_hp));
            with_noise(base, noise_model(cfg, spec, section, NoiseKind::Grain)?, n_sve)?
        }
        MapKind::AspectRatio => with_noise(AspectRatioMap::default(), noise_model(cfg, spec, section, NoiseKind::None)?, n_sve)?,
        MapKind::GpModel => {
            let model = load_model_file(cfg, spec, section)?.to_model::<f64>()?;
            gp_map(model, domain(cfg, spec, section)?, noise_model(cfg, spec, section, NoiseKind::None)?, n_sve)?
        }
        MapKind::Dataset => {
            let path = cfg.resolve(spec.dataset_file.as_ref().expect("checked"));
            let table = read_table(&path)?;
            let x = table.columns(&names.features)?;
            let y = table.column(&names.target)?;
            let noise = match &spec.noise_variance {
                Some(c) => table.column(c)?,
                None => vec![0.0; y.len()],
            };
            let (model, _) = gp::fit(x, y, noise, &fit_options(cfg, seed)).map_err(CliError::from_fit)?;
            log::info!("fitted surrogate, log marginal likelihood {}", model.log_marginal_likelihood());
            gp_map(model, domain(cfg, spec, section)?, noise_model(cfg, spec, section, NoiseKind::None)?, n_sve)?
        }
    };
    Ok((map, names))
}

fn gp_map(
    model: gp::GpModel<f64>,
    domain: Option<Bounds<f64>>,
    noise: Option<NoiseModel<f64>>,
    n_sve: usize,
) -> CliResult<DynMap> {
    let map = GpMap::new(vec![model], domain, noise)?;
    Ok(if n_sve > 1 { Arc::new(EnsembleAverageMap::new(map, n_sve)?) } else { Arc::new(map) })
}

pub fn bandwidth(cfg: &Loaded, section: &str, spec: &BandwidthSpec) -> CliResult<BandwidthRule<f64>> {
    match spec {
        BandwidthSpec::Rule(r) => match r.as_str() {
            "scott" => Ok(BandwidthRule::Scott),
            "silverman" => Ok(BandwidthRule::Silverman),
            other => Err(cfg.error(
                Some(section),
                Some("bandwidth"),
                format!("unknown bandwidth rule '{other}' (scott, silverman or a list of values)"),
            )),
        },
        BandwidthSpec::Fixed(h) => Ok(BandwidthRule::Fixed(h.clone())),
    }
}

/// Builds a density from its config table, checking its dimension.
pub fn build_density(cfg: &Loaded, section: &str, expected_dim: usize) -> CliResult<Density<f64>> {
    let spec: &DensitySpec = match section {
        "initial_density" => cfg.config.initial_density.as_ref(),
        _ => cfg.config.target_density.as_ref(),
    }
    .ok_or_else(|| cfg.error(None, None, format!("missing [{section}] section")))?;
    let err = |key: Option<&str>, msg: String| cfg.error(Some(section), key, msg);
    let need = |key: &str, present: bool| {
        if present {
            Ok(())
        } else {
            Err(cfg.error(Some(section), Some("kind"), format!("this density kind needs '{key}'")))
        }
    };
    let density = match spec.kind {
        DensityKind::Uniform => {
            need("lower", spec.lower.is_some())?;
            need("upper", spec.upper.is_some())?;
            Density::uniform(spec.lower.clone().unwrap(), spec.upper.clone().unwrap())
                .map_err(|e| err(Some("lower"), e.to_string()))?
        }
        DensityKind::OrderedUniform => {
            need("lower", spec.lower.is_some())?;
            need("upper", spec.upper.is_some())?;
            let (l, u) = (spec.lower.as_ref().unwrap(), spec.upper.as_ref().unwrap());
            if l.len() != 1 || u.len() != 1 {
                return Err(err(Some("lower"), "ordered_uniform takes one lower and one upper value".into()));
            }
            let dim = spec.dim.unwrap_or(expected_dim);
            Density::ordered_uniform(l[0], u[0], dim).map_err(|e| err(Some("lower"), e.to_string()))?
        }
        DensityKind::Normal => {
            need("mean", spec.mean.is_some())?;
            need("sd", spec.sd.is_some())?;
            Density::normal(spec.mean.clone().unwrap(), spec.sd.clone().unwrap())
                .map_err(|e| err(Some("sd"), e.to_string()))?
        }
        DensityKind::Lognormal => {
            need("mu", spec.mu.is_some())?;
            need("sigma", spec.sigma.is_some())?;
            Density::log_normal(spec.mu.unwrap(), spec.sigma.unwrap()).map_err(|e| err(Some("sigma"), e.to_string()))?
        }
        DensityKind::Kde => {
            need("samples_file", spec.samples_file.is_some())?;
            let path = cfg.require_file(section, "samples_file", spec.samples_file.as_ref().unwrap())?;
            let table = read_table(&path)?;
            let samples = match &spec.columns {
                Some(c) => table.columns(c).map_err(|e| err(Some("columns"), e.to_string()))?,
                None => table.data,
            };
            let rule = bandwidth(cfg, section, &spec.bandwidth.clone().unwrap_or_default())?;
            fit_kde(samples, &rule).map_err(|e| err(Some("samples_file"), e.to_string()))?
        }
    };
    if density.dim() != expected_dim {
        return Err(err(
            Some("kind"),
            format!("density has dimension {}, expected {expected_dim}", density.dim()),
        ));
    }
    Ok(density)
}

pub fn settings(cfg: &Loaded) -> CliResult<(InversionSettings<f64>, MapMode)> {
    let s = &cfg.config.inversion;
    let at = |key: &str, msg: &str| cfg.error(Some("inversion"), Some(key), msg);
    if s.p_samples < dcinv_core::engine::MIN_P_SAMPLES {
        return Err(at("p_samples", "p_samples must be at least 100"));
    }
    if !(s.safety_factor > 0.0 && s.safety_factor.is_finite()) {
        return Err(at("safety_factor", "safety_factor must be positive"));
    }
    if !(s.ratio_floor >= 0.0) {
        return Err(at("ratio_floor", "ratio_floor must be non-negative"));
    }
    if !(s.predictability_threshold >= 0.0) {
        return Err(at("predictability_threshold", "predictability_threshold must be non-negative"));
    }
    if s.max_batches == 0 {
        return Err(at("max_batches", "max_batches must be at least 1"));
    }
    let settings = InversionSettings {
        bandwidth: bandwidth(cfg, "inversion", &s.bandwidth)?,
        ratio_floor: s.ratio_floor,
        safety_factor: s.safety_factor,
        predictability_threshold: s.predictability_threshold,
        min_accepted: s.min_accepted,
        max_batches: s.max_batches,
        execution: if s.parallel { Execution::Parallel } else { Execution::Serial },
        predicted_override: None,
    };
    let mode = match s.mode {
        ModeSpec::Deterministic => MapMode::Deterministic,
        ModeSpec::Stochastic => MapMode::Stochastic,
    };
    Ok((settings, mode))
}

pub fn out_dir(cfg: &Loaded, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| cfg.resolve(&cfg.config.outputs.directory))
}

/// The analytic map with single-realization noise, for data generation.
/// `[generate.map]` takes precedence over `[map]`.
pub fn realization_map(cfg: &Loaded) -> CliResult<(DynMap, Names)> {
    let (spec, section) = match &cfg.config.generate.map {
        Some(m) => (m, "generate.map"),
        None => (map_spec(cfg)?, "map"),
    };
    let names = names_for(cfg, spec, section)?;
    let map = match spec.kind {
        MapKind::HallPetch => {
            let d = HallPetchMap::<f64>::default();
            let base = HallPetchMap::new(spec.sigma0.unwrap_or(d.sigma0), spec.k_hp.unwrap_or(d.k_hp));
            with_noise(base, noise_model(cfg, spec, section, NoiseKind::Grain)?, 1)?
        }
        MapKind::AspectRatio => with_noise(AspectRatioMap::default(), noise_model(cfg, spec, section, NoiseKind::None)?, 1)?,
        _ => {
            return Err(cfg.error(Some(section), Some("kind"), "generate needs an analytic map (hall_petch or aspect_ratio)"))
        }
    };
    Ok((map, names))
}
