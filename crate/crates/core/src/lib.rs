//! viewagg: view-aggregated open-vocabulary segmentation of Gaussian-splat
//! scenes.
//!
//! The pipeline trains per-Gaussian affinity features from multi-view masks,
//! decomposes the scene into objects, summarizes each object's multi-view
//! semantics as weighted descriptors, and answers text-embedding queries
//! with 3D foreground sets.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod decompose;
pub mod descriptors;
pub mod error;
pub mod eval;
pub mod hdbscan;
pub mod io;
pub mod kmeans;
pub mod linalg;
pub mod mask;
pub mod metrics;
pub mod pipeline;
pub mod query;
pub mod rng;
pub mod scene;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
