//! Reaction-center identification as sequential node selection.

pub mod agent;
pub mod baselines;
pub mod encoder;
pub mod env;
pub mod evalkit;
pub mod molgraph;
pub mod search;
