#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Clustering and classification of longitudinal outcome trajectories.
//!
//! Four complementary methods are provided: shape-respecting k-means over
//! the raw trajectories, Ward clustering of per-period rates of change,
//! spectral seriation of the rate matrix, and responder thresholding
//! against the control arm. Supporting modules cover imputation,
//! preprocessing, comparison statistics and a deterministic synthetic
//! cohort generator.

pub mod cohort_sim;
pub mod data_model;
pub mod error;
pub mod frechet;
pub mod hierarchical;
pub mod imputation;
pub mod inference;
pub mod preprocess;
pub mod responders;
pub mod rng;
pub mod seriation;
pub mod shape_kmeans;

pub use error::{Error, Result};
