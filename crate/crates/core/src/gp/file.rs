use serde::{Deserialize, Serialize};

use super::kernel::KernelParams;
use super::model::GpModel;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::real::Real;

pub const MODEL_FORMAT: &str = "dcinv-gp-model";
pub const MODEL_VERSION: u32 = 1;

/// On-disk form of a fitted [`GpModel`]: everything needed to rebuild the
/// factorization without refitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModelFile {
    pub format: String,
    pub version: u32,
    pub kernel: String,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub theta0: f64,
    pub lengthscales: Vec<f64>,
    pub prior_mean: f64,
    pub jitter: f64,
    /// Mean and standard deviation of each feature; lengthscales were
    /// searched relative to these.
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub noise_var: Vec<f64>,
    pub log_marginal_likelihood: f64,
}

impl GpModelFile {
    pub fn from_model<T: Real>(model: &GpModel<T>, feature_names: Vec<String>, target_name: String) -> Self {
        let v = |s: &[T]| s.iter().map(|x| x.as_f64()).collect::<Vec<f64>>();
        let (shift, scale) = model.standardization();
        GpModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            kernel: "matern32".to_string(),
            feature_names,
            target_name,
            theta0: model.params().theta0.as_f64(),
            lengthscales: v(&model.params().lengthscales),
            prior_mean: model.prior_mean().as_f64(),
            jitter: model.jitter().as_f64(),
            input_shift: v(shift),
            input_scale: v(scale),
            inputs: model.inputs().iter_rows().map(v).collect(),
            targets: v(model.targets()),
            noise_var: v(model.noise_var()),
            log_marginal_likelihood: model.log_marginal_likelihood().as_f64(),
        }
    }

    pub fn to_model<T: Real>(&self) -> Result<GpModel<T>> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION || self.kernel != "matern32" {
            return Err(Error::input(format!(
                "unsupported model file ({} v{}, kernel {})",
                self.format, self.version, self.kernel
            )));
        }
        let c = |s: &[f64]| s.iter().map(|x| T::lit(*x)).collect::<Vec<T>>();
        let rows: Vec<Vec<T>> = self.inputs.iter().map(|r| c(r)).collect();
        let params = KernelParams::new(T::lit(self.theta0), c(&self.lengthscales))?;
        let mut model = GpModel::with_jitter(
            Matrix::from_rows(&rows)?,
            c(&self.targets),
            c(&self.noise_var),
            params,
            Some(T::lit(self.prior_mean)),
            Some(T::lit(self.jitter)),
        )?;
        model.set_standardization(c(&self.input_shift), c(&self.input_scale));
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
