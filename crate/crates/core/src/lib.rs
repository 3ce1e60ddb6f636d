//! Energy estimation for HEVC software encoding from bit-stream feature counts.
//!
//! The crate covers the whole workflow: the feature catalog, ingestion of
//! feature-count and measurement tables, reduction of power traces, the
//! feature-based and baseline estimators, bounded least-squares training,
//! cross-validated evaluation, and a synthetic corpus generator for
//! desk-scale verification.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchgen;
pub mod catalog;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod fitting;
pub mod measurement;
pub mod models;
mod student_t;

pub use catalog::{build_catalog, FeatureCatalog, FeatureVector, Variant};
pub use dataset::{Dataset, Preset, StreamKey, StreamRecord};
pub use error::{Error, Result};
pub use models::{FittedModel, Model, ModelKind};
