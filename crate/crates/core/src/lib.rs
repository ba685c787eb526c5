//! Quality-aware pseudo-label selection for semi-supervised table extraction.
//!
//! The pipeline scores each extracted table with a boosted-tree regressor over
//! engineered layout, content and context features, keeps predictions whose
//! predicted F1 clears a threshold, and picks a maximally diverse subset of them
//! to retrain the extractor on. Numeric building blocks (kernels, eigenvalues,
//! statistics, boosting) are generic over [`Scalar`]; the aliases below fix
//! them to `f64` for the document pipeline.

pub mod adapter;
pub mod boost;
pub mod corpus;
pub mod curation;
pub mod diversity;
pub mod error;
pub mod features;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod metrics;
pub mod quality;
pub mod scalar;
pub mod ssl;
pub mod stats;
pub mod synth;
pub mod transform;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Kernel = diversity::KernelMatrix<f64>;
pub type Stats = transform::FeatureStats<f64>;
pub type Vector = transform::FeatureVector<f64>;
pub type Decision = diversity::DiversityDecision<f64>;
pub type QualityModel = quality::QualityModel<f64>;
