//! Clustered importance sampling (CRISP) for pretraining data selection.
//!
//! The pipeline resamples a large generalist corpus so that its cluster
//! histogram matches a small specialist corpus:
//!
//! 1. [`corpus`] tokenizes documents and cuts them into fixed-length windows.
//! 2. [`embed`] maps windows to unit-norm vectors (tf-idf + LSI, or imported).
//! 3. [`cluster`] trains a hierarchical balanced k-means tree and assigns
//!    windows to radix-path cluster ids.
//! 4. [`weights`] estimates per-cluster histograms and importance weights.
//! 5. [`sampler`] draws the resampled training stream.
//!
//! [`classifier`] implements the logistic-regression filtering baseline and
//! [`diagnostics`] the distance and per-cluster reports.

pub mod binio;
pub mod classifier;
pub mod cluster;
pub mod corpus;
pub mod diagnostics;
pub mod embed;
mod error;
pub mod sampler;
pub mod seed;
pub mod synth;
pub mod weights;

pub use error::{Error, Result};
