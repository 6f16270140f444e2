//! Clustering against ground-truth categories: dataset handling, random
//! forest proximities, metric learning, diffusion embeddings, K-means and
//! evaluation metrics, tied together by a config-driven experiment runner.

pub mod dataset;
pub mod embed;
pub mod error;
pub mod forest;
pub mod kmeans;
pub mod linalg;
pub mod metrics;
pub mod mmc;
pub mod runner;
pub mod seed;

pub use error::{Error, Result};
