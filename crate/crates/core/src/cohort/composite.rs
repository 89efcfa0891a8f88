//! Composite clinical variables derived from the raw admission record.

use serde::{Deserialize, Serialize};

use super::record::{series, AdmissionRecord};
use crate::error::{Error, Result};

/// Modified WHO outcome score for an acute-hospital transfer.
const TRANSFER_ACUTE: &[&str] =
    &["transfer to acute hospital", "transfer to another hospital", "transfer to another acute hospital"];

const CHRONIC_OR_HOME_HOSPITALIZATION: &[&str] = &[
    "transfer of residence or assisted socio-sanitary center",
    "residence or socio-sanitary center",
    "medium and long stay hospital",
    "home hospitalization unit",
    "medium long stay hospital transfer",
    "home care",
    "home hospitalization",
];

const OUTPATIENT: &[&str] = &[
    "primary care team",
    "outpatient consultations",
    "address",
    "day hospital",
    "specialty center",
    "voluntary discharge",
    "escaped",
    "general practitioner",
    "midwife",
    "mental health unit",
];

/// Oxygen flow at or above which a patient counts as critically ill (L/min).
pub const CRITICAL_FLOW_LPM: f64 = 10.0;

/// Room-air FiO2 in percent.
const ROOM_AIR_FIO2: f64 = 21.0;

/// Maximum length of stay (days) for the moderate severity grade.
const MODERATE_MAX_STAY: u32 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeVariables {
    pub who_daily: Vec<u8>,
    pub critical_respiratory_illness: bool,
    pub severity_grade: u8,
    pub charlson_index: u8,
    pub charlson_10y_survival: f64,
}

impl CompositeVariables {
    pub fn derive(record: &AdmissionRecord) -> Result<Self> {
        let (charlson_index, charlson_10y_survival) = derive_charlson(record);
        Ok(Self {
            who_daily: derive_who_daily(record)?,
            critical_respiratory_illness: derive_critical_respiratory(record),
            severity_grade: derive_severity_grade(record),
            charlson_index,
            charlson_10y_survival,
        })
    }

    /// Last recorded WHO score.
    pub fn last_who(&self) -> Option<u8> {
        self.who_daily.last().copied()
    }

    /// Any in-hospital day at score 4 or above before death or discharge.
    pub fn received_supplemental_oxygen(&self) -> bool {
        self.who_daily.iter().any(|&s| (4..=6).contains(&s))
    }
}

/// WHO surrogate score for a discharge destination, matched case-insensitively.
pub fn destination_score(destination: &str) -> Result<u8> {
    let key = destination.trim().to_lowercase();
    let key = key.split_whitespace().collect::<Vec<_>>().join(" ");
    if TRANSFER_ACUTE.contains(&key.as_str()) {
        Ok(3)
    } else if CHRONIC_OR_HOME_HOSPITALIZATION.contains(&key.as_str()) {
        Ok(2)
    } else if OUTPATIENT.contains(&key.as_str()) {
        Ok(1)
    } else {
        Err(Error::UnknownDestination(destination.to_string()))
    }
}

fn flag_on(record: &AdmissionRecord, name: &str, day: i32) -> bool {
    record.series_value(name, day).is_some_and(|v| v != 0.0)
}

/// Device/oxygen score for an in-hospital day, taking the most severe
/// criterion met.
fn in_hospital_score(record: &AdmissionRecord, day: i32) -> u8 {
    if flag_on(record, series::INVASIVE_VENT, day) || flag_on(record, series::ECMO, day) {
        return 6;
    }
    if flag_on(record, series::HIGH_FLOW, day) || flag_on(record, series::NONINVASIVE_VENT, day) {
        return 5;
    }
    let flow = record.series_value(series::OXYGEN_FLOW, day).unwrap_or(0.0);
    let fio2 = record.series_value(series::FIO2, day).unwrap_or(ROOM_AIR_FIO2);
    if flow > 0.0 || fio2 > ROOM_AIR_FIO2 {
        return 4;
    }
    3
}

/// Daily modified WHO score for days `0..=length_of_stay`.
pub fn derive_who_daily(record: &AdmissionRecord) -> Result<Vec<u8>> {
    let los = record.length_of_stay() as i32;
    let death_from =
        if record.death_in_hospital { Some(record.death_day.map_or(los, |d| (d as i32).min(los))) } else { None };
    let discharge_score = match death_from {
        Some(_) => None,
        None => Some(destination_score(&record.discharge_destination)?),
    };
    Ok((0..=los)
        .map(|day| match (death_from, discharge_score) {
            (Some(death), _) if day >= death => 7,
            (_, Some(score)) if day == los => score,
            _ => in_hospital_score(record, day),
        })
        .collect())
}

fn any_day(record: &AdmissionRecord, name: &str, pred: impl Fn(f64) -> bool) -> bool {
    record.daily_series.get(name).is_some_and(|points| points.iter().any(|(_, v)| pred(*v)))
}

fn any_ventilation(record: &AdmissionRecord) -> bool {
    [series::NONINVASIVE_VENT, series::INVASIVE_VENT, series::ECMO]
        .iter()
        .any(|name| any_day(record, name, |v| v != 0.0))
}

pub fn derive_critical_respiratory(record: &AdmissionRecord) -> bool {
    record.death_in_hospital
        || any_day(record, series::OXYGEN_FLOW, |v| v >= CRITICAL_FLOW_LPM)
        || any_day(record, series::HIGH_FLOW, |v| v != 0.0)
        || any_day(record, series::NONINVASIVE_VENT, |v| v != 0.0)
        || any_day(record, series::INVASIVE_VENT, |v| v != 0.0)
}

/// Severity grade 1 (mild) to 5 (fatal).
pub fn derive_severity_grade(record: &AdmissionRecord) -> u8 {
    if record.death_in_hospital {
        5
    } else if record.icu_days.is_some() || any_ventilation(record) {
        4
    } else if record.emergency_only {
        1
    } else if record.length_of_stay() <= MODERATE_MAX_STAY {
        2
    } else {
        3
    }
}

/// Charlson condition weights. Aliases for the comorbidity flags carried by
/// the cohort extraction map onto their closest Charlson condition; flags
/// sharing a `group` are counted once at the group's highest weight.
const CHARLSON_WEIGHTS: &[(&str, &str, u8)] = &[
    ("myocardial_infarction", "mi", 1),
    ("congestive_heart_failure", "chf", 1),
    ("heart_chronic_disease", "chf", 1),
    ("peripheral_vascular_disease", "pvd", 1),
    ("cerebrovascular_disease", "cvd", 1),
    ("dementia", "dementia", 1),
    ("chronic_pulmonary_disease", "copd", 1),
    ("respiratory_chronic_disease", "copd", 1),
    ("connective_tissue_disease", "ctd", 1),
    ("peptic_ulcer_disease", "ulcer", 1),
    ("mild_liver_disease", "liver", 1),
    ("liver_chronic_disease", "liver", 1),
    ("diabetes", "diabetes", 1),
    ("diabetes_type_1", "diabetes", 1),
    ("diabetes_type_2", "diabetes", 1),
    ("hemiplegia", "hemiplegia", 2),
    ("renal_disease", "renal", 2),
    ("renal_chronic_disease", "renal", 2),
    ("diabetes_end_organ_damage", "diabetes", 2),
    ("tumor", "tumor", 2),
    ("active_malignancy", "tumor", 2),
    ("leukemia", "leukemia", 2),
    ("lymphoma", "lymphoma", 2),
    ("moderate_severe_liver_disease", "liver", 3),
    ("metastatic_solid_tumor", "tumor", 6),
    ("aids", "aids", 6),
];

pub const CHARLSON_MAX: u8 = 24;

/// Age points of the combined age-comorbidity score: one per decade from 50.
pub fn charlson_age_points(age: u32) -> u8 {
    match age {
        0..=49 => 0,
        50..=59 => 1,
        60..=69 => 2,
        70..=79 => 3,
        _ => 4,
    }
}

/// Expected 10-year survival (percent) for a Charlson index.
pub fn charlson_survival(index: u8) -> f64 {
    100.0 * 0.983_f64.powf((0.9 * f64::from(index)).exp())
}

/// Charlson index (capped at 24) and its expected 10-year survival.
pub fn derive_charlson(record: &AdmissionRecord) -> (u8, f64) {
    let mut groups: std::collections::BTreeMap<&str, u8> = Default::default();
    for &(name, group, weight) in CHARLSON_WEIGHTS {
        if record.has_comorbidity(name) {
            let entry = groups.entry(group).or_insert(0);
            *entry = (*entry).max(weight);
        }
    }
    let total: u32 = groups.values().map(|&w| u32::from(w)).sum::<u32>() + u32::from(charlson_age_points(record.age));
    let index = total.min(u32::from(CHARLSON_MAX)) as u8;
    (index, charlson_survival(index))
}
