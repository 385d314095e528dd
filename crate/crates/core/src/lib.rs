//! Latent subcategory models (LSMs) and their multitask "undoing dataset bias"
//! extension.
//!
//! A latent subcategory model is a union of `K` linear half-spaces: a point is
//! positive when at least one subclassifier scores it above zero. This crate
//! provides
//!
//! * [`dataio`]: sparse text datasets, stratified splits and a biased synthetic
//!   generator,
//! * [`model`]: single-dataset and multitask parameter containers,
//! * [`objective`]: exact evaluators for the LSM, assignment-fixed, surrogate
//!   and multitask objectives together with the clustering sandwich bound,
//! * [`cluster_init`]: K-means / K-medians / exemplar-LDA similarity
//!   clustering and the initializers built on them,
//! * [`optim`]: Pegasos SVM, alternating minimization and the stochastic
//!   subgradient trainer for the multitask objective,
//! * [`eval`]: average precision, seen/unseen protocols and grid search,
//! * [`patchsel`]: discriminative patch scoring, selection, calibration and
//!   box pooling over abstract detection records.

pub mod cluster_init;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod optim;
pub mod patchsel;

pub use cluster_init::{ClusterInit, NegStats};
pub use dataio::{Dataset, DatasetCollection, Label, LabeledExample, SplitSpec, SynthConfig};
pub use error::{Error, Result};
pub use model::{Augmented, LsmModel, MultiTaskModel};
pub use objective::{LsmHyper, MtlHyper, Partition, Regularizer};
pub use optim::{SgdConfig, TraceRecord};
