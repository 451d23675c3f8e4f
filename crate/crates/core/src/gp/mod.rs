//! Gaussian-process regression with a Matérn-3/2 kernel.
//!
//! A [`GpModel`] is immutable once built. Noise enters as a per-training-
//! point variance vector, so homoscedastic noise is the special case of a
//! constant vector. Hyperparameters are found by [`fit`], which maximizes
//! the log marginal likelihood from several starts.

mod file;
mod fit;
mod kernel;
mod linalg;
mod model;
mod optim;

pub use file::GpModelFile;
pub use fit::{fit, lml_with_gradient, FitOptions, FitReport};
pub use kernel::{matern32, KernelParams};
pub use model::GpModel;
