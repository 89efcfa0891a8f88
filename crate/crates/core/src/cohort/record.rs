use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Day index of the pre-admission baseline measurement in daily arrays.
pub const BASELINE_DAY: i32 = -1;

/// Names of the daily series the composite derivations read.
pub mod series {
    pub const SATO2: &str = "sato2";
    pub const FIO2: &str = "fio2";
    pub const SATO2_FIO2: &str = "sato2_fio2";
    pub const RESP_RATE: &str = "resp_rate";
    pub const HEART_RATE: &str = "heart_rate";
    pub const TEMPERATURE: &str = "temperature";
    pub const SYSTOLIC_BP: &str = "systolic_bp";
    pub const DIASTOLIC_BP: &str = "diastolic_bp";
    pub const GLUCOSE_CV: &str = "glucose_cv";
    /// Supplemental oxygen flow in L/min.
    pub const OXYGEN_FLOW: &str = "oxygen_flow";
    /// Device flags: any non-zero value means the device was in use that day.
    pub const HIGH_FLOW: &str = "high_flow";
    pub const NONINVASIVE_VENT: &str = "noninvasive_ventilation";
    pub const INVASIVE_VENT: &str = "invasive_ventilation";
    pub const ECMO: &str = "ecmo";
    /// Explicitly recorded WHO score; overrides nothing, kept for audit only.
    pub const WHO: &str = "who";
}

/// Static (non-daily) measurements carried in `static_measures`.
pub mod statics {
    pub const BARTHEL: &str = "barthel";
    pub const HEIGHT: &str = "height";
    pub const WEIGHT: &str = "weight";
    pub const CULTURE_POSITIVE: &str = "microbiological_culture_positive";
}

/// One laboratory result as extracted from the source system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabObservation {
    pub raw_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    pub value: f64,
    pub unit: String,
    pub day: i32,
}

/// One administration of a drug.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseEvent {
    pub drug: String,
    pub day: i32,
    pub dose: f64,
    /// Administration route; `None` is read as systemic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<String>,
}

impl DoseEvent {
    /// IV and oral administrations count as systemic.
    pub fn is_systemic(&self) -> bool {
        match self.route.as_deref() {
            None => true,
            Some(r) => {
                matches!(r.trim().to_ascii_lowercase().as_str(), "iv" | "po" | "oral" | "intravenous" | "systemic")
            }
        }
    }
}

/// A single hospital admission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionRecord {
    pub admission_id: String,
    pub patient_id: String,
    pub department: String,
    pub age: u32,
    pub gender: String,
    pub admit_date: NaiveDate,
    pub discharge_date: NaiveDate,
    pub discharge_destination: String,
    pub death_in_hospital: bool,
    pub last_followup_day: u32,
    #[serde(default)]
    pub death_day: Option<u32>,
    #[serde(default)]
    pub icu_days: Option<u32>,
    /// Discharged from the emergency ward without a hospital stay.
    #[serde(default)]
    pub emergency_only: bool,
    #[serde(default)]
    pub comorbidity_flags: BTreeMap<String, bool>,
    #[serde(default)]
    pub static_measures: BTreeMap<String, f64>,
    /// Variable name to `(day index, value)` pairs, day -1 being baseline.
    #[serde(default)]
    pub daily_series: BTreeMap<String, Vec<(i32, f64)>>,
    #[serde(default)]
    pub lab_observations: Vec<LabObservation>,
    #[serde(default)]
    pub treatments: Vec<DoseEvent>,
    #[serde(default)]
    pub radiological_covid_flag: bool,
    #[serde(default)]
    pub rtpcr_positive_days: Vec<i32>,
    #[serde(default)]
    pub covid_coded_diagnosis: bool,
}

impl AdmissionRecord {
    /// Length of stay in whole days.
    pub fn length_of_stay(&self) -> u32 {
        (self.discharge_date - self.admit_date).num_days().max(0) as u32
    }

    /// Value of a daily series on a given day; several entries on the same
    /// day resolve to the last one recorded.
    pub fn series_value(&self, name: &str, day: i32) -> Option<f64> {
        self.daily_series.get(name)?.iter().rev().find(|(d, _)| *d == day).map(|(_, v)| *v)
    }

    pub fn has_comorbidity(&self, name: &str) -> bool {
        self.comorbidity_flags.get(name).copied().unwrap_or(false)
    }

    /// Checks the structural invariants of a record.
    pub fn validate(&self) -> Result<()> {
        let id = &self.admission_id;
        if self.discharge_date < self.admit_date {
            return Err(Error::InvalidInput(format!("{id}: discharge date precedes admission date")));
        }
        if let Some(death) = self.death_day {
            if death > self.last_followup_day {
                return Err(Error::InvalidInput(format!(
                    "{id}: death day {death} after last follow-up {}",
                    self.last_followup_day
                )));
            }
        }
        let los = self.length_of_stay() as i32;
        for (name, points) in &self.daily_series {
            for (day, value) in points {
                if *day < BASELINE_DAY || *day > los {
                    return Err(Error::InvalidInput(format!(
                        "{id}: series `{name}` has day {day} outside [-1, {los}]"
                    )));
                }
                if !value.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "{id}: series `{name}` has a non-finite value on day {day}"
                    )));
                }
            }
        }
        for dose in &self.treatments {
            if !(dose.dose >= 0.0) {
                return Err(Error::InvalidInput(format!("{id}: negative dose of `{}` on day {}", dose.drug, dose.day)));
            }
        }
        Ok(())
    }
}
