//! Cohort construction: records, derived composites, treatment and outcome
//! labels, selection and partitioning, lab harmonization and features.

pub mod composite;
pub mod features;
pub mod io;
pub mod labs;
pub mod record;
pub mod select;
pub mod treatment;

pub use composite::CompositeVariables;
pub use features::{FeatureMatrix, FeatureRole, FeatureSchema, FeatureVector};
pub use labs::{cluster_lab_names, ClusterReport, ClusterThresholds, LabCluster};
pub use record::{AdmissionRecord, DoseEvent, LabObservation};
pub use select::{partition_cohort, select_covid_admissions, Partition};
pub use treatment::{ascertain_treatment, label_outcome, Drug, OutcomeLabel, TeClass, TreatmentAssignment};
