//! Equivariant set-to-k-edge networks with exact geometric oracles.
//!
//! The crate bundles everything needed to run the synthetic experiments:
//!
//! - [`tensor`]: dense 64-bit tensors with reverse-mode autodiff;
//! - [`layers`]: DeepSets set-to-set layers, attention pooling, the
//!   non-learnable broadcasting lifts, and row-wise MLPs;
//! - [`model`]: the model variants (S2G, S2G+, S2G-k3, SIAM, MLP baseline)
//!   and their checkpoint format;
//! - [`geometry`]: brute-force Delaunay / convex-hull ground truth and
//!   dataset samplers;
//! - [`dataset`]: JSON-lines dataset generation and IO;
//! - [`metrics`]: edge/partition/ranking metrics (F1, RI, ARI, AUC-ROC);
//! - [`train`]: losses, Adam, early stopping, and the training loop.

pub mod dataset;
pub mod geometry;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;
