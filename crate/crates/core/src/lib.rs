//! Structured disentanglement evaluation for slot-based latent representations.

pub mod dataset;
pub mod joint;
pub mod metrics;
pub mod pipeline;
pub mod probing;
pub mod regressors;
pub mod schema;
pub mod theory;
