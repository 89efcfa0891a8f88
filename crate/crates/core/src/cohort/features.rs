//! Model inputs: feature vectors and matrices with an explicit missing
//! state, and the schema that turns an admission into one.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::composite::CompositeVariables;
use super::record::{series, statics, AdmissionRecord, BASELINE_DAY};
use super::treatment::{normalize_drug_code, Drug, PHARMACOTHERAPY};
use crate::error::{Error, Result};

/// Day index of the first 24 in-hospital hours, exported with a `_day1` suffix.
pub const FIRST_DAY: i32 = 0;

/// Comorbidity flags used as model inputs.
pub const COMORBIDITIES: &[&str] = &[
    "lipidemias",
    "tobacco_use",
    "high_blood_pressure",
    "diabetes_type_1",
    "diabetes_type_2",
    "heart_chronic_disease",
    "immunocompromised",
    "liver_chronic_disease",
    "renal_chronic_disease",
    "respiratory_chronic_disease",
    "active_malignancy",
];

/// Daily arrays contributing their baseline and first-day values.
pub const SERIES_FEATURES: &[&str] = &[
    series::SATO2,
    series::FIO2,
    series::SATO2_FIO2,
    series::RESP_RATE,
    series::HEART_RATE,
    series::TEMPERATURE,
    series::SYSTOLIC_BP,
    series::DIASTOLIC_BP,
    series::GLUCOSE_CV,
];

pub const STATIC_FEATURES: &[&str] = &[statics::BARTHEL, statics::HEIGHT, statics::WEIGHT, statics::CULTURE_POSITIVE];

/// Fields that carry outcome information and must never become inputs.
pub const LEAKAGE_DENYLIST: &[&str] = &[
    "length_of_stay",
    "icu_days",
    "icu_length_of_stay",
    "days_to_icu",
    "days_to_readmission",
    "discharge_date",
    "discharge_destination",
    "death_in_hospital",
    "death_day",
    "last_followup_day",
    "who_daily",
    "who_last",
    "severity_grade",
    "critical_respiratory_illness",
    "outcome",
    "improved",
    "te_class",
];

/// Cardinality up to which categoricals are one-hot encoded.
pub const ONE_HOT_MAX_CARDINALITY: usize = 16;

const ADMISSION_EPOCH: (i32, u32, u32) = (2020, 1, 1);

/// True when a feature name is on the denylist or refers to a day after
/// the first 24 hours.
pub fn is_leaky(name: &str) -> bool {
    if LEAKAGE_DENYLIST.contains(&name) {
        return true;
    }
    match name.rsplit_once("_day") {
        Some((_, suffix)) => suffix.parse::<u32>().is_ok_and(|d| d >= 2),
        None => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRole {
    /// Inputs of the treatment-effect model.
    TeFeature,
    /// Confounders fed to the propensity model.
    PropensityCovariate,
}

impl FromStr for FeatureRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "te_feature" | "te" | "i" => Ok(FeatureRole::TeFeature),
            "propensity_covariate" | "propensity" | "c" => Ok(FeatureRole::PropensityCovariate),
            _ => Err(Error::UnknownRole(s.to_string())),
        }
    }
}

impl fmt::Display for FeatureRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureRole::TeFeature => "te_feature",
            FeatureRole::PropensityCovariate => "propensity_covariate",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleMask {
    pub te_feature: bool,
    pub propensity_covariate: bool,
}

impl RoleMask {
    pub fn has(&self, role: FeatureRole) -> bool {
        match role {
            FeatureRole::TeFeature => self.te_feature,
            FeatureRole::PropensityCovariate => self.propensity_covariate,
        }
    }
}

/// Named feature values; `None` is missing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub names: Vec<String>,
    pub values: Vec<Option<f64>>,
    pub role_mask: Vec<RoleMask>,
}

impl FeatureVector {
    pub fn new(names: Vec<String>, values: Vec<Option<f64>>) -> Result<Self> {
        if names.len() != values.len() {
            return Err(Error::InvalidInput(format!("{} names for {} values", names.len(), values.len())));
        }
        let role_mask = vec![RoleMask::default(); names.len()];
        Ok(Self { names, values, role_mask })
    }

    pub fn from_pairs<S: Into<String>>(pairs: impl IntoIterator<Item = (S, Option<f64>)>) -> Self {
        let (names, values): (Vec<String>, Vec<Option<f64>>) = pairs.into_iter().map(|(n, v)| (n.into(), v)).unzip();
        let role_mask = vec![RoleMask::default(); names.len()];
        Self { names, values, role_mask }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<Option<f64>> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    pub fn set(&mut self, name: &str, value: Option<f64>) {
        match self.names.iter().position(|n| n == name) {
            Some(i) => self.values[i] = value,
            None => {
                self.names.push(name.to_string());
                self.values.push(value);
                self.role_mask.push(RoleMask::default());
            }
        }
    }
}

/// Row-major numeric matrix with named columns and a missing state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    names: Vec<String>,
    n_rows: usize,
    values: Vec<Option<f64>>,
}

impl FeatureMatrix {
    pub fn new(names: Vec<String>) -> Self {
        Self { names, n_rows: 0, values: Vec::new() }
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let mut m = Self::new(names);
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    /// Stacks vectors, aligning each on the first vector's names. Names the
    /// first vector lacks are an error; columns a later vector lacks are missing.
    pub fn from_vectors(vectors: &[FeatureVector]) -> Result<Self> {
        let Some(first) = vectors.first() else {
            return Ok(Self::new(Vec::new()));
        };
        let mut m = Self::new(first.names.clone());
        for v in vectors {
            let row = m.align(v)?;
            m.push_row(&row)?;
        }
        Ok(m)
    }

    /// Reorders a vector onto this matrix's columns.
    pub fn align(&self, v: &FeatureVector) -> Result<Vec<Option<f64>>> {
        align_to(&self.names, v)
    }

    pub fn push_row(&mut self, row: &[Option<f64>]) -> Result<()> {
        if row.len() != self.names.len() {
            return Err(Error::InvalidInput(format!("row of width {} for {} columns", row.len(), self.names.len())));
        }
        if let Some(bad) = row.iter().flatten().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite feature value {bad}")));
        }
        self.values.extend_from_slice(row);
        self.n_rows += 1;
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.values[row * self.names.len() + col]
    }

    pub fn row(&self, row: usize) -> &[Option<f64>] {
        let w = self.names.len();
        &self.values[row * w..(row + 1) * w]
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = Option<f64>> + '_ {
        (0..self.n_rows).map(move |r| self.get(r, col))
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn row_vector(&self, row: usize) -> FeatureVector {
        FeatureVector::from_pairs(self.names.iter().cloned().zip(self.row(row).iter().copied()))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.names.len());
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        Self { names: self.names.clone(), n_rows: rows.len(), values }
    }

    /// Writes the matrix as CSV with an id column; missing cells are empty.
    pub fn write_csv<W: std::io::Write>(&self, ids: &[String], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["admission_id".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for (r, id) in ids.iter().enumerate().take(self.n_rows) {
            let mut rec = vec![id.clone()];
            rec.extend(self.row(r).iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV layout produced by [`FeatureMatrix::write_csv`].
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<(Vec<String>, Self)> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut m = Self::new(names);
        let mut ids = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            ids.push(rec.get(0).unwrap_or_default().to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|cell| {
                    let cell = cell.trim();
                    if cell.is_empty() {
                        Ok(None)
                    } else {
                        cell.parse::<f64>()
                            .map(Some)
                            .map_err(|_| Error::InvalidInput(format!("bad numeric cell `{cell}`")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            m.push_row(&row)?;
        }
        Ok((ids, m))
    }
}

/// Reorders `v` onto `names`; unknown names in `v` are an error.
pub fn align_to(names: &[String], v: &FeatureVector) -> Result<Vec<Option<f64>>> {
    let index: BTreeMap<&str, usize> = names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut row = vec![None; names.len()];
    for (name, value) in v.names.iter().zip(&v.values) {
        let &i = index.get(name.as_str()).ok_or_else(|| Error::UnknownFeature(name.clone()))?;
        row[i] = *value;
    }
    Ok(row)
}

/// Encoding of a categorical variable into numeric columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CategoricalEncoder {
    OneHot {
        name: String,
        categories: Vec<String>,
    },
    /// Smoothed mean target per category; ordered by that mean implicitly.
    TargetMean {
        name: String,
        means: BTreeMap<String, f64>,
        prior: f64,
    },
}

/// Pseudo-count pulling a category's target mean towards the prior.
const TARGET_SMOOTHING: f64 = 10.0;

impl CategoricalEncoder {
    /// One-hot up to 16 categories, target-mean above that; the target-mean
    /// path needs targets aligned with `values`.
    pub fn fit(name: &str, values: &[&str], targets: Option<&[f64]>) -> Result<Self> {
        let mut categories: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        categories.sort();
        categories.dedup();
        if categories.len() <= ONE_HOT_MAX_CARDINALITY {
            return Ok(Self::OneHot { name: name.to_string(), categories });
        }
        let targets = targets.ok_or_else(|| {
            Error::InvalidInput(format!(
                "`{name}` has {} categories and needs targets for mean encoding",
                categories.len()
            ))
        })?;
        if targets.len() != values.len() || targets.is_empty() {
            return Err(Error::InvalidInput(format!("`{name}`: targets misaligned")));
        }
        let prior = targets.iter().sum::<f64>() / targets.len() as f64;
        let mut sums: BTreeMap<String, (f64, f64)> = BTreeMap::new();
        for (v, t) in values.iter().zip(targets) {
            let e = sums.entry(v.to_string()).or_default();
            e.0 += t;
            e.1 += 1.0;
        }
        let means =
            sums.into_iter().map(|(k, (s, n))| (k, (s + TARGET_SMOOTHING * prior) / (n + TARGET_SMOOTHING))).collect();
        Ok(Self::TargetMean { name: name.to_string(), means, prior })
    }

    pub fn column_names(&self) -> Vec<String> {
        match self {
            Self::OneHot { name, categories } => categories.iter().map(|c| format!("{name}={c}")).collect(),
            Self::TargetMean { name, .. } => vec![name.clone()],
        }
    }

    pub fn encode(&self, value: &str) -> Vec<Option<f64>> {
        match self {
            Self::OneHot { categories, .. } => {
                categories.iter().map(|c| Some(if c == value { 1.0 } else { 0.0 })).collect()
            }
            Self::TargetMean { means, prior, .. } => {
                vec![Some(means.get(value).copied().unwrap_or(*prior))]
            }
        }
    }
}

/// Lowercase identifier usable inside a feature name.
pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for ch in name.trim().chars() {
        if ch.is_alphanumeric() {
            out.extend(ch.to_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

/// Everything needed to assemble feature vectors consistently across
/// partitions: which labs to read, how raw lab names map to canonical ones,
/// and the categorical encoders fitted on the training partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub labs: Vec<String>,
    pub lab_mapping: BTreeMap<String, String>,
    pub gender: CategoricalEncoder,
    pub department: CategoricalEncoder,
    pub extra_statics: Vec<String>,
    /// Requested inputs dropped by the leakage guard.
    pub rejected_requests: Vec<String>,
}

impl FeatureSchema {
    /// Fits encoders on `records`; labs come from the canonical names of
    /// the lab mapping.
    pub fn fit(
        records: &[&AdmissionRecord],
        lab_mapping: BTreeMap<String, String>,
        targets: Option<&[f64]>,
    ) -> Result<Self> {
        let genders: Vec<&str> = records.iter().map(|r| r.gender.as_str()).collect();
        let departments: Vec<&str> = records.iter().map(|r| r.department.as_str()).collect();
        let mut labs: Vec<String> = lab_mapping.values().cloned().collect();
        labs.sort();
        labs.dedup();
        Ok(Self {
            labs,
            lab_mapping,
            gender: CategoricalEncoder::fit("gender", &genders, targets)?,
            department: CategoricalEncoder::fit("department", &departments, targets)?,
            extra_statics: Vec::new(),
            rejected_requests: Vec::new(),
        })
    }

    /// Requests additional static measures as inputs of both roles; names
    /// that could leak the outcome are dropped and remembered.
    pub fn with_extra_statics<S: AsRef<str>>(mut self, names: &[S]) -> Self {
        for name in names {
            let name = name.as_ref();
            if is_leaky(name) || is_leaky(&slug(name)) {
                self.rejected_requests.push(name.to_string());
            } else if !self.extra_statics.iter().any(|n| n == name) {
                self.extra_statics.push(name.to_string());
            }
        }
        self
    }

    fn lab_day_mean(&self, record: &AdmissionRecord, canonical: &str, day: i32) -> Option<f64> {
        let (sum, n) = record
            .lab_observations
            .iter()
            .filter(|o| o.day == day && o.value.is_finite())
            .filter(|o| self.lab_mapping.get(&o.raw_name).map_or(o.raw_name == canonical, |c| c == canonical))
            .fold((0.0, 0usize), |(s, n), o| (s + o.value, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// Builds the input vector of `record` for `role`; in the propensity
    /// role the dose columns of `drug` itself are left out.
    pub fn assemble(
        &self,
        record: &AdmissionRecord,
        composite: &CompositeVariables,
        role: FeatureRole,
        drug: Drug,
    ) -> FeatureVector {
        let both = RoleMask { te_feature: true, propensity_covariate: true };
        let covariate_only = RoleMask { te_feature: false, propensity_covariate: true };
        let mut out: Vec<(String, Option<f64>, RoleMask)> = Vec::new();

        out.push(("age".into(), Some(f64::from(record.age)), both));
        for (n, v) in self.gender.column_names().into_iter().zip(self.gender.encode(&record.gender)) {
            out.push((n, v, both));
        }
        for (n, v) in self.department.column_names().into_iter().zip(self.department.encode(&record.department)) {
            out.push((n, v, covariate_only));
        }
        let epoch =
            NaiveDate::from_ymd_opt(ADMISSION_EPOCH.0, ADMISSION_EPOCH.1, ADMISSION_EPOCH.2).expect("valid epoch");
        out.push(("admission_day".into(), Some((record.admit_date - epoch).num_days() as f64), covariate_only));
        for c in COMORBIDITIES {
            let v = if record.has_comorbidity(c) { 1.0 } else { 0.0 };
            out.push((format!("comorbidity_{c}"), Some(v), both));
        }
        out.push(("charlson_index".into(), Some(f64::from(composite.charlson_index)), both));
        out.push(("covid_radiology".into(), Some(if record.radiological_covid_flag { 1.0 } else { 0.0 }), both));
        for s in STATIC_FEATURES.iter().copied().chain(self.extra_statics.iter().map(String::as_str)) {
            out.push((slug(s), record.static_measures.get(s).copied(), both));
        }
        for s in SERIES_FEATURES {
            out.push((format!("{s}_baseline"), record.series_value(s, BASELINE_DAY), both));
            out.push((format!("{s}_day1"), record.series_value(s, FIRST_DAY), both));
        }
        for lab in &self.labs {
            let key = slug(lab);
            out.push((format!("lab_{key}_baseline"), self.lab_day_mean(record, lab, BASELINE_DAY), both));
            out.push((format!("lab_{key}_day1"), self.lab_day_mean(record, lab, FIRST_DAY), both));
        }
        for code in PHARMACOTHERAPY.iter().filter(|c| !drug.codes().contains(*c)) {
            let dose: f64 = record
                .treatments
                .iter()
                .filter(|d| d.day == FIRST_DAY && d.is_systemic() && normalize_drug_code(&d.drug) == *code)
                .map(|d| d.dose)
                .sum();
            out.push((format!("dose_{code}_day1"), Some(dose), covariate_only));
        }

        let mut v = FeatureVector::default();
        for (name, value, mask) in out {
            if mask.has(role) && !is_leaky(&name) {
                v.names.push(name);
                v.values.push(value);
                v.role_mask.push(mask);
            }
        }
        v
    }

    /// Column names produced for a role and drug.
    pub fn feature_names(&self, role: FeatureRole, drug: Drug) -> Vec<String> {
        let blank = blank_record();
        let composite = CompositeVariables {
            who_daily: vec![3],
            critical_respiratory_illness: false,
            severity_grade: 2,
            charlson_index: 0,
            charlson_10y_survival: 98.3,
        };
        self.assemble(&blank, &composite, role, drug).names
    }
}

fn blank_record() -> AdmissionRecord {
    let day = NaiveDate::from_ymd_opt(ADMISSION_EPOCH.0, ADMISSION_EPOCH.1, ADMISSION_EPOCH.2).expect("valid epoch");
    AdmissionRecord {
        admission_id: String::new(),
        patient_id: String::new(),
        department: String::new(),
        age: 0,
        gender: String::new(),
        admit_date: day,
        discharge_date: day,
        discharge_destination: String::new(),
        death_in_hospital: false,
        last_followup_day: 0,
        death_day: None,
        icu_days: None,
        emergency_only: false,
        comorbidity_flags: Default::default(),
        static_measures: Default::default(),
        daily_series: Default::default(),
        lab_observations: Vec::new(),
        treatments: Vec::new(),
        radiological_covid_flag: false,
        rtpcr_positive_days: Vec::new(),
        covid_coded_diagnosis: false,
    }
}
