//! Federated Markov imputation.
//!
//! Clients discretize their time series with a shared [`binning::BinningScheme`],
//! count first-order bin transitions locally, and pool the counts through
//! pairwise-masked secure aggregation. The coordinator normalizes the sum into
//! a federated transition matrix, which every client then uses to fill its
//! missing cells with the most probable bin path.

pub mod binning;
pub mod dataset;
pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod federation;
pub mod imputer;
pub mod secure_agg;
pub mod transitions;

pub use binning::{BinningScheme, FeatureId, FeatureRange};
pub use dataset::{Dataset, TimeSeriesRecord};
pub use error::{Error, ErrorCategory, Result};
pub use exec::Execution;
pub use secure_agg::{ClientId, RingConfig};
pub use transitions::{LagPolicy, ProbMatrix, TransitionCounts, TransitionMatrix};
