//! Baseline reconstructors.

mod fbp;
mod fista;
mod sirt;

pub use fbp::{fbp, ram_lak, RampFilter};
pub use fista::{
    divergence, fista_tv, fista_tv_search, geometric_grid, gradient, objective, power_iteration, total_variation,
    tv_prox, FistaConfig, FistaResult, LambdaSearch, StepSize, TV_PROX_ITERS,
};
pub use sirt::{sirt, sirt_step, weighted_mean};
