//! Adversarial group discovery trained jointly with group distributionally
//! robust optimization, on synthetic datasets with planted spurious
//! correlations.
//!
//! The crate is organized around the stages of one experiment:
//!
//! - [`data`]: synthetic benchmark generation: spurious attributes,
//!   ground-truth groups (hidden from training), K-fold ids, an OOD split
//!   with the correlation reversed.
//! - [`nn`]: the differentiable classifier: weighted softmax cross-entropy,
//!   hand-derived gradients, a finite-difference oracle.
//! - [`features`]: ERM training and the K-fold out-of-fold feature pipeline
//!   that builds grouper inputs.
//! - [`slice`]: error-aware mixture model over (embedding, label,
//!   prediction) fit by EM; its responsibilities initialize the grouper.
//! - [`grouper`]: the adversary network mapping features to a soft group
//!   distribution, KL-pretrained against slice responsibilities.
//! - [`robust`]: greedy worst-group optimization over hard groups, and the
//!   alternating primary/adversary rounds over soft groups.
//! - [`eval`]: worst-group metrics and unsupervised checkpoint selection.
//!
//! Everything is `f64` and deterministic: a fixed experiment seed fixes all
//! artifacts bit for bit.

pub mod benchmark;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod grouper;
pub mod matrix;
pub mod nn;
pub mod pca;
pub mod robust;
pub mod seeds;
pub mod slice;

pub use error::{Error, Result};
pub use matrix::Matrix;
