//! Curvature-guided, projection-based arbitrary-scale point cloud upsampling.
//!
//! The pipeline: estimate per-point umbrella curvature on a sparse cloud,
//! build a ladder of progressively smaller high-curvature subsets, encode each
//! level, and train a network to predict the unsigned distance from a query
//! point to the underlying surface. Upsampling seeds jittered queries around
//! the input and walks them down the predicted field's gradient.
//!
//! Analytic shapes ([`shapes`]) provide exact distance fields, so every stage
//! can be checked against ground truth.

pub mod cli;
pub mod config;
pub mod curvature;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod pipeline;
pub mod geometry;
pub mod io;
pub mod plse;
pub mod shapes;
pub mod training;
pub mod upsampler;

pub use error::{Error, Result};
pub use geometry::{NeighborIndex, Neighbor, NormalizationTransform, Point3, PointCloud, Rotation3};
