//! Pipeline configuration: TOML with a `schema_version` and one table per
//! pipeline stage. Unknown keys are rejected; errors point at the line.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub map: Option<MapSpec>,
    pub initial_density: Option<DensitySpec>,
    pub target_density: Option<DensitySpec>,
    #[serde(default)]
    pub inversion: InversionSpec,
    #[serde(default)]
    pub generate: GenerateSpec,
    pub fit: Option<FitSpec>,
    #[serde(default)]
    pub outputs: OutputSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    HallPetch,
    AspectRatio,
    GpModel,
    Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Grain,
    Constant,
    None,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    pub kind: MapKind,
    pub sigma0: Option<f64>,
    pub k_hp: Option<f64>,
    pub noise: Option<NoiseKind>,
    pub s0: Option<f64>,
    pub noise_sd: Option<f64>,
    /// Realizations averaged per stochastic evaluation.
    pub n_sve: Option<usize>,
    pub model_file: Option<PathBuf>,
    pub dataset_file: Option<PathBuf>,
    pub features: Option<Vec<String>>,
    pub target: Option<String>,
    pub noise_variance: Option<String>,
    pub domain_lower: Option<Vec<f64>>,
    pub domain_upper: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityKind {
    Uniform,
    OrderedUniform,
    Normal,
    Lognormal,
    Kde,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum BandwidthSpec {
    Rule(String),
    Fixed(Vec<f64>),
}

impl Default for BandwidthSpec {
    fn default() -> Self {
        BandwidthSpec::Rule("scott".into())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitySpec {
    pub kind: DensityKind,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub dim: Option<usize>,
    pub mean: Option<Vec<f64>>,
    pub sd: Option<Vec<f64>>,
    pub mu: Option<f64>,
    pub sigma: Option<f64>,
    pub samples_file: Option<PathBuf>,
    pub columns: Option<Vec<String>>,
    pub bandwidth: Option<BandwidthSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    #[default]
    Deterministic,
    Stochastic,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionSpec {
    pub p_samples: usize,
    pub min_accepted: usize,
    pub max_batches: usize,
    pub mode: ModeSpec,
    pub bandwidth: BandwidthSpec,
    pub predictability_threshold: f64,
    pub safety_factor: f64,
    pub ratio_floor: f64,
    pub parallel: bool,
}

impl Default for InversionSpec {
    fn default() -> Self {
        InversionSpec {
            p_samples: 100_000,
            min_accepted: 0,
            max_batches: 1000,
            mode: ModeSpec::Deterministic,
            bandwidth: BandwidthSpec::default(),
            predictability_threshold: 0.05,
            safety_factor: 1.0,
            ratio_floor: 1e-12,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSpec {
    pub grid_start: Option<f64>,
    pub grid_stop: Option<f64>,
    pub grid_step: Option<f64>,
    pub points: Option<Vec<Vec<f64>>>,
    pub n_sve: usize,
    /// Map used for data generation, when it differs from `[map]`.
    pub map: Option<MapSpec>,
}

impl Default for GenerateSpec {
    fn default() -> Self {
        GenerateSpec { grid_start: None, grid_stop: None, grid_step: None, points: None, n_sve: 25, map: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    pub dataset_file: PathBuf,
    pub features: Vec<String>,
    pub target: String,
    pub noise_variance: Option<String>,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_model_file")]
    pub model_file: String,
    #[serde(default = "default_true")]
    pub parallel: bool,
}

fn default_restarts() -> usize {
    8
}
fn default_max_iter() -> usize {
    200
}
fn default_model_file() -> String {
    "model.json".into()
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub directory: PathBuf,
    pub histogram_bins: usize,
    pub kde_grid_points: usize,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { directory: PathBuf::from("output"), histogram_bins: 100, kde_grid_points: 512 }
    }
}

/// A parsed config with the source text kept for line-anchored errors.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: PipelineConfig,
    pub path: PathBuf,
    raw: String,
}

impl Loaded {
    pub fn read(path: &Path) -> CliResult<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("{}: cannot read config: {e}", path.display())))?;
        Self::parse(path, raw)
    }

    pub fn parse(path: &Path, raw: String) -> CliResult<Self> {
        let config: PipelineConfig = toml::from_str(&raw).map_err(|e| {
            let line = e.span().map(|s| line_of_offset(&raw, s.start));
            anchored(path, line, e.message())
        })?;
        let loaded = Loaded { config, path: path.to_path_buf(), raw };
        if loaded.config.schema_version != SCHEMA_VERSION {
            return Err(loaded.error(
                None,
                Some("schema_version"),
                format!("unsupported schema_version {}, expected {SCHEMA_VERSION}", loaded.config.schema_version),
            ));
        }
        Ok(loaded)
    }

    pub fn base_dir(&self) -> PathBuf {
        self.path.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    /// Resolves a path from the config relative to the config file.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir().join(p)
        }
    }

    /// Input error anchored at `key` inside `[section]` (or at the section
    /// header, or the top level).
    pub fn error(&self, section: Option<&str>, key: Option<&str>, msg: impl AsRef<str>) -> CliError {
        let line = locate(&self.raw, section, key);
        let prefix = section.map(|s| format!("[{s}] ")).unwrap_or_default();
        anchored(&self.path, line, &format!("{prefix}{}", msg.as_ref()))
    }

    pub fn require_file(&self, section: &str, key: &str, p: &Path) -> CliResult<PathBuf> {
        let full = self.resolve(p);
        if !full.is_file() {
            return Err(self.error(Some(section), Some(key), format!("file not found: {}", full.display())));
        }
        Ok(full)
    }
}

fn anchored(path: &Path, line: Option<usize>, msg: &str) -> CliError {
    match line {
        Some(l) => CliError::input(format!("{}:{l}: {msg}", path.display())),
        None => CliError::input(format!("{}: {msg}", path.display())),
    }
}

fn line_of_offset(raw: &str, offset: usize) -> usize {
    raw[..offset.min(raw.len())].matches('\n').count() + 1
}

fn locate(raw: &str, section: Option<&str>, key: Option<&str>) -> Option<usize> {
    let mut current: Option<String> = None;
    let mut header_line = None;
    for (i, line) in raw.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            current = Some(t.trim_matches(|c| c == '[' || c == ']').trim().to_string());
            if current.as_deref() == section {
                header_line = Some(i + 1);
            }
            continue;
        }
        if current.as_deref() != section {
            continue;
        }
        if let Some(k) = key {
            let name = t.split('=').next().unwrap_or("").trim();
            if t.contains('=') && name == k {
                return Some(i + 1);
            }
        }
    }
    header_line
}
