//! End-to-end orchestration: one analysis per drug, a consolidated report
//! and the scoring service behind the what-if console.

mod report;
mod run;
mod scoring;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::causal::PropensityConfig;
use crate::cohort::{ClusterThresholds, Drug};
use crate::error::{Error, Result};
use crate::futility::FutilityConfig;
use crate::teml::TeConfig;

pub use report::{
    BalanceSummary, CohortSummary, DrugOutcome, DrugReport, FutilityOutcome, RunReport, SurvivalClaim, REPORT_FORMAT,
    REPORT_VERSION,
};
pub use run::{
    prepare_cohort, prepare_drug, run, run_records, DrugArtifacts, DrugData, PreparedCohort, RunArtifacts, StageError,
};
pub use scoring::{DrugInfo, FieldError, ScoreError, ScoreRequest, ScoreResponse, ScoringService};

/// Which covariates enter the adjusted Cox models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdjustmentConfig {
    /// Propensity covariates whose unweighted |SMD| exceeds this are kept.
    pub smd_threshold: f64,
    pub max_covariates: usize,
}

impl Default for AdjustmentConfig {
    fn default() -> Self {
        Self { smd_threshold: 0.1, max_covariates: 10 }
    }
}

/// When the dummy-outcome protocol runs for a drug.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FutilityTrigger {
    /// Only after a significant benefit in the adjusted indicated test group.
    #[default]
    Significant,
    Always,
    Never,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub inputs: Vec<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub drugs: Vec<Drug>,
    pub held_out_departments: BTreeSet<String>,
    /// Departments allowed in training; all others when unset.
    pub training_departments: Option<BTreeSet<String>>,
    pub train_fraction: f64,
    pub seed: u64,
    /// Static measures to use as inputs besides the built-in ones.
    pub extra_statics: Vec<String>,
    pub lab_clustering: ClusterThresholds,
    pub propensity: PropensityConfig,
    pub te: TeConfig,
    pub adjustment: AdjustmentConfig,
    pub futility: FutilityConfig,
    pub futility_trigger: FutilityTrigger,
    pub top_features: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            inputs: Vec::new(),
            output_dir: None,
            drugs: Drug::ALL.to_vec(),
            held_out_departments: ["17", "19"].into_iter().map(String::from).collect(),
            training_departments: None,
            train_fraction: 0.8,
            seed: 42,
            extra_statics: Vec::new(),
            lab_clustering: ClusterThresholds::default(),
            propensity: PropensityConfig::default(),
            te: TeConfig::default(),
            adjustment: AdjustmentConfig::default(),
            futility: FutilityConfig::default(),
            futility_trigger: FutilityTrigger::default(),
            top_features: 10,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Read { path: path.to_path_buf(), source })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in &mut cfg.inputs {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(out) = &mut cfg.output_dir {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.held_out_departments.is_empty() {
            return Err(Error::Config("no held-out departments given".into()));
        }
        if let Some(train) = &self.training_departments {
            let overlap: Vec<&String> = train.intersection(&self.held_out_departments).collect();
            if !overlap.is_empty() {
                return Err(Error::Config(format!("departments {overlap:?} are both held out and used for training")));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train fraction {} outside (0, 1)", self.train_fraction)));
        }
        let mut seen = BTreeSet::new();
        for d in &self.drugs {
            if !seen.insert(d) {
                return Err(Error::Config(format!("drug `{d}` listed twice")));
            }
        }
        self.propensity.clip.validate()?;
        self.propensity.params.validate()?;
        self.te.params.validate()?;
        if !(self.te.threshold > 0.0 && self.te.threshold < 1.0) {
            return Err(Error::Config(format!("indication threshold {} outside (0, 1)", self.te.threshold)));
        }
        Ok(())
    }
}
