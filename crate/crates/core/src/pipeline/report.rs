use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RunConfig;
use crate::causal::BalanceReport;
use crate::cohort::{AdmissionRecord, Drug};
use crate::error::Result;
use crate::explain::FeatureImportance;
use crate::futility::FutilityVerdict;
use crate::stats::{mean, median, std_dev};
use crate::survival::{Subgroup, SurvivalCell, SurvivalTable};

pub const REPORT_FORMAT: &str = "rwe-run-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: RunConfig,
    pub cohort: CohortSummary,
    /// Raw lab name to canonical name.
    pub lab_mapping: BTreeMap<String, String>,
    pub drugs: Vec<DrugOutcome>,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn drug(&self, drug: Drug) -> Option<&DrugOutcome> {
        self.drugs.iter().find(|d| d.drug() == drug)
    }
}

/// Descriptive statistics of the selected cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n_input: usize,
    pub n_selected: usize,
    /// Selected records whose composite variables could not be derived.
    pub n_invalid: usize,
    pub invalid_examples: Vec<String>,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub age_mean: Option<f64>,
    pub age_sd: Option<f64>,
    pub age_median: Option<f64>,
    pub gender: BTreeMap<String, usize>,
    pub deaths_in_hospital: usize,
    pub in_hospital_mortality: Option<f64>,
    pub icu_admissions: usize,
    pub icu_days_mean: Option<f64>,
    pub length_of_stay_median: Option<f64>,
}

impl CohortSummary {
    pub fn describe(records: &[AdmissionRecord]) -> Self {
        let ages: Vec<f64> = records.iter().map(|r| f64::from(r.age)).collect();
        let mut gender = BTreeMap::new();
        for r in records {
            *gender.entry(r.gender.clone()).or_insert(0) += 1;
        }
        let deaths = records.iter().filter(|r| r.death_in_hospital).count();
        let icu: Vec<f64> = records.iter().filter_map(|r| r.icu_days).map(f64::from).collect();
        let los: Vec<f64> = records.iter().map(|r| f64::from(r.length_of_stay())).collect();
        Self {
            n_input: records.len(),
            n_selected: records.len(),
            n_invalid: 0,
            invalid_examples: Vec::new(),
            n_train: 0,
            n_valid: 0,
            n_test: 0,
            age_mean: mean(&ages),
            age_sd: std_dev(&ages),
            age_median: median(&ages),
            gender,
            deaths_in_hospital: deaths,
            in_hospital_mortality: (!records.is_empty()).then(|| deaths as f64 / records.len() as f64),
            icu_admissions: icu.len(),
            icu_days_mean: mean(&icu),
            length_of_stay_median: median(&los),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceSummary {
    pub n_covariates: usize,
    pub max_smd_before: Option<f64>,
    pub max_smd_after: Option<f64>,
    pub ess_treated: f64,
    pub ess_control: f64,
    pub degenerate_weights: bool,
}

impl From<&BalanceReport> for BalanceSummary {
    fn from(b: &BalanceReport) -> Self {
        Self {
            n_covariates: b.covariates.len(),
            max_smd_before: b.max_smd_before,
            max_smd_after: b.max_smd_after,
            ess_treated: b.ess_treated,
            ess_control: b.ess_control,
            degenerate_weights: b.degenerate_weights,
        }
    }
}

/// A significant survival result with everything needed to judge it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalClaim {
    pub subgroup: Subgroup,
    pub adjusted: bool,
    pub n: usize,
    pub events: usize,
    pub hr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p: f64,
    /// Rounded for display: HR and CI to two decimals, p to three.
    pub display: String,
}

impl SurvivalClaim {
    pub fn from_cell(c: &SurvivalCell) -> Option<Self> {
        if !c.significant {
            return None;
        }
        let (hr, lo, hi, p) = (c.hr?, c.ci_low?, c.ci_high?, c.p?);
        Some(Self {
            subgroup: c.subgroup,
            adjusted: c.adjusted,
            n: c.n,
            events: c.events,
            hr,
            ci_low: lo,
            ci_high: hi,
            p,
            display: format!("HR {hr:.2} (95% CI {lo:.2} to {hi:.2}), p = {p:.3}, n = {}, events = {}", c.n, c.events),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FutilityOutcome {
    NotRun { reason: String },
    Completed(Box<FutilityVerdict>),
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrugReport {
    pub drug: Drug,
    pub n_eligible: usize,
    pub n_treated: usize,
    pub n_excluded: usize,
    pub propensity_validation_auc: Option<f64>,
    pub treated_fraction: f64,
    pub te_validation_auc: Option<f64>,
    pub te_test_auc: Option<f64>,
    pub te_cv_mean_auc: Option<f64>,
    pub balance: BalanceSummary,
    pub adjustment_covariates: Vec<String>,
    pub subgroup_sizes: BTreeMap<Subgroup, usize>,
    /// Estimates without the full fit objects.
    pub survival: SurvivalTable,
    /// Significant cells; emptied when the futility check aborts the drug.
    pub claims: Vec<SurvivalClaim>,
    pub futility: FutilityOutcome,
    pub conclusions_suppressed: bool,
    pub top_features: Vec<FeatureImportance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DrugOutcome {
    Completed(Box<DrugReport>),
    Failed { drug: Drug, stage: String, error: String },
}

impl DrugOutcome {
    pub fn drug(&self) -> Drug {
        match self {
            DrugOutcome::Completed(r) => r.drug,
            DrugOutcome::Failed { drug, .. } => *drug,
        }
    }

    pub fn report(&self) -> Option<&DrugReport> {
        match self {
            DrugOutcome::Completed(r) => Some(r),
            DrugOutcome::Failed { .. } => None,
        }
    }
}
