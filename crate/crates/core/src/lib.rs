//! PL-CL: partial-label learning with a complementary classifier.
//!
//! Each training sample carries a set of candidate labels of which exactly
//! one is correct. This crate disambiguates the candidates by jointly
//! training an ordinary classifier on the candidate labels, a complementary
//! classifier on the non-candidate labels (the two are coupled through an
//! adversarial `P + Q ≈ 1` prior), and an adaptive local similarity graph
//! shared between the feature and label manifolds. Training alternates
//! closed-form and constrained-QP block updates, so the joint objective
//! decreases monotonically.
//!
//! Entry points:
//! - [`model::fit`] trains a model on a [`data::PartialDataset`];
//! - [`model::FittedModel::predict`] classifies unseen rows;
//! - [`data`] holds loaders, the corruption protocol and blob generation;
//! - [`eval`] holds metrics, the PL-KNN baseline and significance tests.

pub mod data;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod qp;

pub use data::{make_blobs, split, synthesize_candidates, CorruptionMode, CorruptionSpec, PartialDataset};
pub use error::{Error, Result};
pub use model::{fit, FittedModel, HyperParams, PartialLabelMatrix, Solver};
