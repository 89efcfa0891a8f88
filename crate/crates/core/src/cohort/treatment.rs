use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::composite::CompositeVariables;
use super::record::AdmissionRecord;
use crate::error::{Error, Result};

/// Last day (inclusive, counted from admission) on which a first dose still
/// classifies the admission as treated.
pub const TREATMENT_WINDOW_LAST_DAY: i32 = 4;

/// WHO score at or above which the last recorded status counts as worsened.
pub const WORSENED_WHO: u8 = 4;

/// COVID-19 pharmacotherapies tracked as daily dose arrays.
pub const PHARMACOTHERAPY: &[&str] = &[
    "anakinra",
    "azithromycin",
    "baricitinib",
    "bemiparin",
    "ciclosporin",
    "chloroquine",
    "convalescent_plasma",
    "systemic_corticosteroids",
    "darunavir_cobicistat",
    "eculizumab",
    "enoxaparin",
    "fosamprenavir",
    "g_csf",
    "heparin",
    "hydroxychloroquine",
    "immunoglobulins",
    "interferon_beta_1a",
    "interferon_beta_1b",
    "ivermectin",
    "lopinavir_ritonavir",
    "remdesivir",
    "ruxolitinib",
    "sarilumab",
    "siltuximab",
    "tacrolimus",
    "thiamine",
    "tocilizumab",
    "tofacitinib",
    "vitamin_c",
    "vitamin_d",
];

/// Normalizes a free-form drug code to the pharmacotherapy vocabulary:
/// lowercase, separators collapsed to `_`, and a few agent names folded
/// into their therapy group.
pub fn normalize_drug_code(code: &str) -> String {
    let mut out = String::with_capacity(code.len());
    for ch in code.trim().chars() {
        if ch.is_alphanumeric() {
            out.extend(ch.to_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    let out = out.trim_matches('_').to_string();
    match out.as_str() {
        "dexamethasone" | "dexametasone" | "methylprednisolone" | "metilprednisolone" | "corticosteroids" => {
            "systemic_corticosteroids".into()
        }
        "hidroxicloroquine" => "hydroxychloroquine".into(),
        "cloroquine" => "chloroquine".into(),
        "lopinavir_ritonavir_" | "lopinavir" => "lopinavir_ritonavir".into(),
        _ => out,
    }
}

/// The therapies analysed one at a time by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Drug {
    Azithromycin,
    Chloroquine,
    Corticosteroids,
    LopinavirRitonavir,
    Remdesivir,
    Tocilizumab,
}

impl Drug {
    pub const ALL: [Drug; 6] = [
        Drug::Azithromycin,
        Drug::Chloroquine,
        Drug::Corticosteroids,
        Drug::LopinavirRitonavir,
        Drug::Remdesivir,
        Drug::Tocilizumab,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            Drug::Azithromycin => "azithromycin",
            Drug::Chloroquine => "chloroquine",
            Drug::Corticosteroids => "corticosteroids",
            Drug::LopinavirRitonavir => "lopinavir_ritonavir",
            Drug::Remdesivir => "remdesivir",
            Drug::Tocilizumab => "tocilizumab",
        }
    }

    /// Pharmacotherapy codes that count as this drug.
    pub fn codes(self) -> &'static [&'static str] {
        match self {
            Drug::Azithromycin => &["azithromycin"],
            Drug::Chloroquine => &["chloroquine", "hydroxychloroquine"],
            Drug::Corticosteroids => &["systemic_corticosteroids"],
            Drug::LopinavirRitonavir => &["lopinavir_ritonavir"],
            Drug::Remdesivir => &["remdesivir"],
            Drug::Tocilizumab => &["tocilizumab"],
        }
    }

    pub fn covers_code(self, code: &str) -> bool {
        let code = normalize_drug_code(code);
        self.codes().contains(&code.as_str())
    }
}

impl fmt::Display for Drug {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for Drug {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let code = normalize_drug_code(s);
        Drug::ALL
            .into_iter()
            .find(|d| d.slug() == code || d.codes().contains(&code.as_str()))
            .ok_or_else(|| Error::UnknownDrug(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentStatus {
    Treated,
    Untreated,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentAssignment {
    pub drug: Drug,
    pub status: TreatmentStatus,
    pub first_dose_day: Option<i32>,
}

impl TreatmentAssignment {
    pub fn is_treated(&self) -> bool {
        self.status == TreatmentStatus::Treated
    }

    pub fn is_eligible(&self) -> bool {
        self.status != TreatmentStatus::Excluded
    }
}

/// Classifies an admission as treated (first systemic dose within the
/// window), excluded (first dose later) or untreated (never dosed).
pub fn ascertain_treatment(record: &AdmissionRecord, drug: Drug) -> Result<TreatmentAssignment> {
    let mut first: Option<i32> = None;
    for dose in record.treatments.iter().filter(|d| drug.covers_code(&d.drug)) {
        if dose.day < 0 {
            return Err(Error::PreAdmissionDose { drug: dose.drug.clone(), day: dose.day });
        }
        if dose.is_systemic() && dose.dose > 0.0 {
            first = Some(first.map_or(dose.day, |f| f.min(dose.day)));
        }
    }
    let status = match first {
        None => TreatmentStatus::Untreated,
        Some(day) if day <= TREATMENT_WINDOW_LAST_DAY => TreatmentStatus::Treated,
        Some(_) => TreatmentStatus::Excluded,
    };
    Ok(TreatmentAssignment { drug, status, first_dose_day: first })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeClass {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeLabel {
    pub improved: bool,
    pub te_class: TeClass,
}

impl OutcomeLabel {
    pub fn from_parts(treated: bool, improved: bool) -> Self {
        let te_class = if treated == improved { TeClass::Positive } else { TeClass::Negative };
        Self { improved, te_class }
    }

    pub fn is_positive(&self) -> bool {
        self.te_class == TeClass::Positive
    }
}

/// Treatment-response label: positive when treated and improved or when
/// untreated and worsened.
pub fn label_outcome(
    record: &AdmissionRecord,
    composite: &CompositeVariables,
    assignment: &TreatmentAssignment,
) -> Result<OutcomeLabel> {
    let treated = match assignment.status {
        TreatmentStatus::Treated => true,
        TreatmentStatus::Untreated => false,
        TreatmentStatus::Excluded => return Err(Error::ExcludedAssignment(record.admission_id.clone())),
    };
    let last = composite
        .last_who()
        .ok_or_else(|| Error::InvalidInput(format!("{}: empty WHO trajectory", record.admission_id)))?;
    Ok(OutcomeLabel::from_parts(treated, last < WORSENED_WHO))
}
