//! Optimization-based covariate balancing for causal effect estimation.
//!
//! Weights over one group are chosen so the weighted group resembles a
//! target group on pre-treatment covariates, without ever reading outcomes.
//! Effects are then estimated as weighted differences in outcome means.

pub mod cli;
pub mod data;
pub mod error;
pub mod estimation;
pub mod methods;
pub mod metrics;
pub mod sim;
pub mod solvers;
pub mod weights;

pub use error::{Error, Result};
