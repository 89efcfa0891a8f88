//! Weighted Kaplan-Meier curves and Cox proportional-hazards fits.

mod analysis;
mod cox;
mod km;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cohort::{AdmissionRecord, FeatureVector};
use crate::error::{Error, Result};

pub use analysis::{analyze_treatment, write_results_csv, SurvivalCell, SurvivalTable};
pub use cox::{fit_problem, independent_columns, CoxFit, CoxProblem, MAX_ITERATIONS, SEPARATION_BOUND, TOLERANCE};
pub use km::{km_by_arm, km_curve, KmArms, KmCurve, KmStep};

pub const ALPHA: f64 = 0.05;
/// Adjustment columns missing in more than this share of rows are dropped.
pub const MAX_MISSING_SHARE: f64 = 0.5;
/// Stand-in for a zero survival time (death or censoring on admission day).
pub const ZERO_TIME: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedSurvivalRecord {
    pub id: String,
    pub time: f64,
    pub event: bool,
    pub treated: bool,
    pub weight: f64,
    pub covariates: FeatureVector,
}

/// Days from admission to death, or to last follow-up when censored.
pub fn survival_time(record: &AdmissionRecord) -> (f64, bool) {
    let (days, event) = match (record.death_day, record.death_in_hospital) {
        (Some(d), _) => (d, true),
        (None, true) => (record.length_of_stay(), true),
        (None, false) => (record.last_followup_day, false),
    };
    let t = if days == 0 { ZERO_TIME } else { f64::from(days) };
    (t, event)
}

impl WeightedSurvivalRecord {
    pub fn from_admission(
        record: &AdmissionRecord,
        treated: bool,
        weight: f64,
        covariates: FeatureVector,
    ) -> Result<Self> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(Error::InvalidInput(format!(
                "{}: survival weight must be positive, got {weight}",
                record.admission_id
            )));
        }
        let (time, event) = survival_time(record);
        Ok(Self { id: record.admission_id.clone(), time, event, treated, weight, covariates })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subgroup {
    Full,
    SupplementalOxygen,
    MlIndicated,
    MlNonIndicated,
}

impl Subgroup {
    pub const ALL: [Subgroup; 4] =
        [Subgroup::Full, Subgroup::SupplementalOxygen, Subgroup::MlIndicated, Subgroup::MlNonIndicated];

    pub fn as_str(self) -> &'static str {
        match self {
            Subgroup::Full => "full",
            Subgroup::SupplementalOxygen => "supplemental_oxygen",
            Subgroup::MlIndicated => "ml_indicated",
            Subgroup::MlNonIndicated => "ml_non_indicated",
        }
    }
}

impl fmt::Display for Subgroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subgroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Subgroup::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown subgroup `{s}`")))
    }
}

/// Admission ids in each analysis population.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubgroupPartition {
    pub full: BTreeSet<String>,
    pub supplemental_oxygen: BTreeSet<String>,
    pub ml_indicated: BTreeSet<String>,
    pub ml_non_indicated: BTreeSet<String>,
}

impl SubgroupPartition {
    /// Everyone in one population, nobody indicated.
    pub fn full_only<I: IntoIterator<Item = String>>(ids: I) -> Self {
        let full: BTreeSet<String> = ids.into_iter().collect();
        Self { ml_non_indicated: full.clone(), full, ..Self::default() }
    }

    pub fn members(&self, group: Subgroup) -> &BTreeSet<String> {
        match group {
            Subgroup::Full => &self.full,
            Subgroup::SupplementalOxygen => &self.supplemental_oxygen,
            Subgroup::MlIndicated => &self.ml_indicated,
            Subgroup::MlNonIndicated => &self.ml_non_indicated,
        }
    }

    pub fn check(&self) -> Result<()> {
        let union: BTreeSet<&String> = self.ml_indicated.iter().chain(&self.ml_non_indicated).collect();
        let ok = self.ml_indicated.is_disjoint(&self.ml_non_indicated)
            && union.len() == self.full.len()
            && union.iter().all(|id| self.full.contains(*id))
            && self.supplemental_oxygen.is_subset(&self.full);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("subgroup partition is inconsistent".into()))
        }
    }

    /// One row per admission with a 0/1 column per subgroup.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["admission_id"];
        header.extend(Subgroup::ALL.iter().map(|g| g.as_str()));
        w.write_record(&header)?;
        for id in &self.full {
            let mut row = vec![id.clone()];
            for g in Subgroup::ALL {
                row.push(if self.members(g).contains(id) { "1" } else { "0" }.to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        let mut cols = Vec::new();
        for g in Subgroup::ALL {
            let idx = header
                .iter()
                .position(|h| h == g.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("membership CSV lacks column `{g}`")))?;
            cols.push((g, idx));
        }
        let mut part = Self::default();
        for row in rdr.records() {
            let row = row?;
            let id = row.get(0).unwrap_or_default().to_string();
            for &(g, idx) in &cols {
                if row.get(idx) == Some("1") {
                    let set = match g {
                        Subgroup::Full => &mut part.full,
                        Subgroup::SupplementalOxygen => &mut part.supplemental_oxygen,
                        Subgroup::MlIndicated => &mut part.ml_indicated,
                        Subgroup::MlNonIndicated => &mut part.ml_non_indicated,
                    };
                    set.insert(id.clone());
                }
            }
        }
        Ok(part)
    }
}

/// Cox fit of the treatment indicator, plus the records' covariates when
/// `include_covariates` is set. Covariate names come from the first record;
/// columns mostly missing are dropped, then incomplete rows.
pub fn fit_cox(records: &[WeightedSurvivalRecord], include_covariates: bool) -> Result<CoxFit> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no records for a Cox fit".into()));
    }
    let mut dropped = Vec::new();
    let mut cov_names: Vec<String> = Vec::new();
    let mut cov_idx: Vec<usize> = Vec::new();
    if include_covariates {
        let names = &records[0].covariates.names;
        for r in records {
            if &r.covariates.names != names {
                return Err(Error::InvalidInput(format!("{}: covariate names differ from the first record", r.id)));
            }
        }
        for (j, name) in names.iter().enumerate() {
            let missing = records.iter().filter(|r| r.covariates.values[j].is_none()).count();
            if missing as f64 > MAX_MISSING_SHARE * records.len() as f64 {
                dropped.push(format!("{name}: mostly missing"));
            } else {
                cov_names.push(name.clone());
                cov_idx.push(j);
            }
        }
    }
    let complete: Vec<&WeightedSurvivalRecord> =
        records.iter().filter(|r| cov_idx.iter().all(|&j| r.covariates.values[j].is_some())).collect();
    let mut names = vec!["treated".to_string()];
    names.extend(cov_names);
    let rows: Vec<Vec<f64>> = complete
        .iter()
        .map(|r| {
            let mut row = vec![if r.treated { 1.0 } else { 0.0 }];
            row.extend(cov_idx.iter().map(|&j| r.covariates.values[j].unwrap_or(f64::NAN)));
            row
        })
        .collect();
    let (kept, more) = independent_columns(&rows, &names);
    if kept.first() != Some(&0) {
        return Err(Error::InvalidInput("treatment is constant in this population".into()));
    }
    dropped.extend(more);
    let rows: Vec<Vec<f64>> = rows.iter().map(|r| kept.iter().map(|&j| r[j]).collect()).collect();
    let names: Vec<String> = kept.iter().map(|&j| names[j].clone()).collect();
    let time: Vec<f64> = complete.iter().map(|r| r.time).collect();
    let event: Vec<bool> = complete.iter().map(|r| r.event).collect();
    let weight: Vec<f64> = complete.iter().map(|r| r.weight).collect();
    let problem = CoxProblem::new(&time, &event, &weight, &rows)?;
    let mut fit = fit_problem(&problem, names)?;
    let skipped = records.len() - complete.len();
    if skipped > 0 {
        fit.diagnostics.push(format!("{skipped} incomplete rows left out"));
    }
    fit.dropped = dropped;
    Ok(fit)
}
