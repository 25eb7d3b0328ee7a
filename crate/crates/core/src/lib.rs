//! Estimation of peer contagion effects on networks whose ties are driven by
//! unobserved node attributes.
//!
//! The pipeline simulates treatments and outcomes on a graph, learns node
//! embeddings jointly with a linear outcome model, and averages the fitted
//! model under the interventions "everyone treated" and "nobody treated".
//! Two regression baselines and ground-truth estimands make the bias of each
//! estimator measurable.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod graph;
pub mod linalg;
pub mod relerm;
pub mod rng;
pub mod sampler;
pub mod simulate;

pub use error::{Error, Result};
