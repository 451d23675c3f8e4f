//! Data-consistent stochastic inversion for structure-property linkages.
//!
//! Given a target density on material properties and a forward map from
//! microstructure features to properties, the [`engine`] draws samples from
//! the updated density on the features whose push-forward through the map
//! matches the target. The building blocks are:
//!
//! * [`densities`]: analytic densities and Gaussian kernel density estimates,
//! * [`gp`]: Matérn-3/2 Gaussian-process surrogates with per-point noise,
//! * [`maps`]: forward structure-property maps (Hall-Petch, a synthetic
//!   aspect-ratio surface, GP-backed maps, stochastic realizations),
//! * [`engine`]: push-forward, ratio computation, rejection sampling and
//!   diagnostics.
//!
//! All numerical code is generic over the scalar type through [`Real`];
//! the aliases below fix it to `f64`, which is what the CLI uses.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod densities;
pub mod engine;
pub mod error;
pub mod gp;
pub mod io;
pub mod maps;
pub mod matrix;
pub mod real;
pub mod seeds;
pub mod stats;

pub use error::{Error, Result};
pub use real::Real;

pub type Bounds = densities::Bounds<f64>;
pub type Density = densities::Density<f64>;
pub type Kde = densities::Kde<f64>;
pub type BandwidthRule = densities::BandwidthRule<f64>;
pub type Matrix = matrix::Matrix<f64>;
pub type KernelParams = gp::KernelParams<f64>;
pub type GpModel = gp::GpModel<f64>;
pub type HallPetchMap = maps::HallPetchMap<f64>;
pub type AspectRatioMap = maps::AspectRatioMap<f64>;
pub type InversionProblem = engine::InversionProblem<f64>;
pub type InversionSettings = engine::InversionSettings<f64>;
pub type UpdatedEnsemble = engine::UpdatedEnsemble<f64>;
pub type DiagnosticsReport = engine::DiagnosticsReport<f64>;

pub type Density32 = densities::Density<f32>;
pub type GpModel32 = gp::GpModel<f32>;
