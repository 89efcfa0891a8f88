//! Real-world evidence pipeline for drug repurposing on hospital cohorts.

pub mod causal;
pub mod cohort;
pub mod error;
pub mod explain;
pub mod futility;
pub mod gbdt;
pub mod pipeline;
pub mod stats;
pub mod survival;
pub mod synth;
pub mod teml;

pub use cohort::{AdmissionRecord, Drug, FeatureMatrix, FeatureRole, FeatureVector};
pub use error::{Error, Result};
