//! Numerical laboratory for steady-state diffusion approximations of scaled
//! Markov chain families.
//!
//! A [`chain::ChainFamily`] is centered and scaled into a
//! [`chain::ScaledChain`], from which the fluid model ([`fluid`]) and the
//! diffusion model ([`diffusion`]) are built. Stationary laws of both come
//! from [`steady`], Lyapunov certificates from [`lyapunov`], Poisson-equation
//! solutions and gradient bounds from [`poisson`], and sample paths from
//! [`simulate`]. [`lab`] ties them together into gap studies.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::type_complexity)]

use std::sync::Arc;

pub mod banded;
pub mod chain;
pub mod diffusion;
pub mod error;
pub mod expr;
pub mod fluid;
pub mod lab;
pub mod lyapunov;
pub mod model;
pub mod poisson;
pub mod quad;
pub mod simulate;
pub mod steady;
pub mod zoo;

pub use error::{Error, Result};

/// Version tag written into every CSV and JSON output.
pub const SCHEMA_VERSION: u32 = 1;

/// A vector field ℝ^d → ℝ^d.
pub type VectorField = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
