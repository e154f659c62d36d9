//! Sparse-view CT reconstruction engine.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for callers that do not need the choice.

pub mod classical;
pub mod dosm;
pub mod error;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod real;
pub mod score;

pub use error::{Error, Result};
pub use real::Real;

pub type Image64 = geometry::Image<f64>;
pub type Image32 = geometry::Image<f32>;
pub type Sinogram64 = geometry::Sinogram<f64>;
pub type Sinogram32 = geometry::Sinogram<f32>;
pub type Ensemble64 = dosm::ChannelEnsemble<f64>;
pub type Ensemble32 = dosm::ChannelEnsemble<f32>;
pub type Denoiser64 = score::DenoiserModel<f64>;
pub type Denoiser32 = score::DenoiserModel<f32>;
