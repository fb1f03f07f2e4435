//! Bayesian hierarchical estimation and probabilistic projection of total
//! fertility rates.
//!
//! The pipeline reads raw observations and reference series ([`ingest`]),
//! detects phase markers ([`phases`]), fits observation bias and sd
//! ([`measurement`]), samples the transition and post-transition models
//! ([`phase2`], [`phase3`]) through the chain engine ([`engine`]), and
//! projects ([`projection`]) and summarizes ([`diagnostics`]) the results.

pub mod diagnostics;
pub mod dist;
pub mod engine;
pub mod error;
pub mod ingest;
pub mod measurement;
pub mod phase2;
pub mod phase3;
pub mod phases;
pub mod projection;
pub mod samplers;
pub mod stats;
pub mod synthetic;
pub mod types;

pub use error::{Error, Result};
