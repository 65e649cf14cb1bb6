//! Covariate selection for causal effect estimation via Markov and Bayesian
//! network structure learning, with the simulation study that evaluates it.

pub mod citest;
pub mod dataset;
pub mod dgp;
pub mod error;
pub mod estimators;
pub mod graphs;
pub mod harness;
pub mod par;
pub mod structure;
pub mod targets;

pub use error::{Error, Result};
