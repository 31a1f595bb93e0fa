//! Composite index estimation with relative PCA attributes and a pairwise
//! ranking network.
//!
//! A yearly run normalizes raw indicators, maps entities into the space of
//! relative-attribute ranking functions, clusters them, turns the cluster
//! structure (and, from the second year on, movement between clusters) into
//! pairwise target probabilities, trains a siamese ranking network on those
//! targets, and reports scores on a 1–7 scale.

pub mod dataset;
pub mod error;
pub mod numerics;
pub mod pipeline;
pub mod ranknet;
pub mod relarm;
pub mod target;

pub use error::{Error, Result, Stage};
