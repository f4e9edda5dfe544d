//! Fully discrete backward schemes for backward stochastic PDEs with
//! high-order spatial operators, together with error and Malliavin
//! diagnostics.
//!
//! The crate is organised bottom-up: [`grid`] holds partitions and difference
//! stencils, [`stochastics`] the Brownian ensemble and conditional-expectation
//! estimators, [`model`] problem definitions, [`solver`] the two backward
//! schemes and [`analysis`] the error criterion and diagnostics.

pub mod analysis;
pub mod grid;
pub mod model;
pub mod solver;
pub mod stochastics;

/// Library version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
