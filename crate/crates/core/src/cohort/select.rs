use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::AdmissionRecord;
use crate::error::{Error, Result};

/// How many days before admission a positive RT-PCR still qualifies.
pub const RTPCR_LOOKBACK_DAYS: i32 = 21;

#[derive(Debug, Clone, Default)]
pub struct SelectionOutcome {
    pub kept: Vec<AdmissionRecord>,
    pub dropped: usize,
}

/// A positive test in `[admit - 21 days, discharge]`, a coded COVID-19
/// diagnosis or radiological finding, and a stay beyond the emergency ward.
pub fn is_covid_admission(record: &AdmissionRecord) -> bool {
    let los = record.length_of_stay() as i32;
    let tested = record.rtpcr_positive_days.iter().any(|&d| (-RTPCR_LOOKBACK_DAYS..=los).contains(&d));
    let confirmed = record.covid_coded_diagnosis || record.radiological_covid_flag;
    tested && confirmed && !record.emergency_only
}

/// Keeps COVID-19 admissions, preserving input order.
pub fn select_covid_admissions(records: Vec<AdmissionRecord>) -> SelectionOutcome {
    let total = records.len();
    let kept: Vec<_> = records.into_iter().filter(is_covid_admission).collect();
    SelectionOutcome { dropped: total - kept.len(), kept }
}

/// Record indices of the train / validation / held-out test partitions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

/// Sets aside every admission from the held-out departments as the test
/// partition and splits the rest `train_fraction : 1 - train_fraction` at
/// random under `seed`.
pub fn partition_cohort(
    records: &[AdmissionRecord],
    held_out: &BTreeSet<String>,
    train_fraction: f64,
    seed: u64,
) -> Result<Partition> {
    if held_out.is_empty() {
        return Err(Error::Config("no held-out departments given".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let (test, mut rest): (Vec<usize>, Vec<usize>) =
        (0..records.len()).partition(|&i| held_out.contains(&records[i].department));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rest.shuffle(&mut rng);
    let n_train = (rest.len() as f64 * train_fraction).round() as usize;
    let mut valid = rest.split_off(n_train);
    let mut train = rest;
    train.sort_unstable();
    valid.sort_unstable();
    Ok(Partition { train, valid, test })
}
