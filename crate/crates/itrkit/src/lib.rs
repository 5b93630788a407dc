//! Learning individualized treatment rules in three stages: kernel
//! covariate-balancing weights, gradient-based reduction of the covariates
//! to a treatment-effect-sufficient subspace, and a weighted hinge-loss
//! decision rule on the reduced representation. Includes synthetic data
//! generators with oracle access and the estimators used to evaluate
//! fitted rules.

pub mod balancing;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gkdr;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod owl;
pub mod pipeline;
pub mod pseudo;
pub mod simgen;

pub use error::{Error, Result};
