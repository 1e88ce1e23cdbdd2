//! Extreme multi-label classification with probabilistic label trees.
//!
//! The crate covers the whole pipeline:
//!
//! - [`data`]: sparse vectors and the XMLC repository text format,
//! - [`propensity`]: empirical label propensities and a missing-label simulator,
//! - [`tree`]: label trees built by hierarchical balanced 2-means,
//! - [`train`]: one L2-regularized logistic classifier per tree node,
//! - [`inference`]: exact top-k by A* (propensity-scored) or uniform-cost
//!   search, approximate beam search, brute force and tree ensembles,
//! - [`metrics`]: precision@k and propensity-scored precision@k.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`, which the command-line tool uses.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod propensity;
pub mod scalar;
pub mod train;
pub mod tree;

pub use error::{Error, Result};
pub use scalar::Real;
pub use tree::LabelTree;

pub type SparseVec = data::SparseVector<f64>;
pub type SparseVec32 = data::SparseVector<f32>;
pub type Dataset = data::Dataset<f64>;
pub type Dataset32 = data::Dataset<f32>;
pub type PropensityTable = propensity::PropensityTable<f64>;
pub type PropensityTable32 = propensity::PropensityTable<f32>;
pub type NodeModel = train::NodeModel<f64>;
pub type PltModel = train::PltModel<f64>;
pub type PltModel32 = train::PltModel<f32>;
pub type HyperParams = train::HyperParams<f64>;
pub type ScoredLabel = inference::ScoredLabel<f64>;
pub type EvalReport = metrics::EvalReport<f64>;
