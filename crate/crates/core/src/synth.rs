//! Synthetic cohorts with known confounding, treatment effects and
//! censoring, written in the same record format the pipeline ingests.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::features::{COMORBIDITIES, SERIES_FEATURES, STATIC_FEATURES};
use crate::cohort::record::{series, BASELINE_DAY};
use crate::cohort::{AdmissionRecord, DoseEvent, Drug, LabObservation};
use crate::error::{Error, Result};
use crate::stats::sigmoid;

pub const GROUND_TRUTH_FORMAT: &str = "rwe-synth-truth";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
    Bernoulli { p: f64 },
}

impl Distribution {
    fn mean_sd(self) -> (f64, f64) {
        match self {
            Distribution::Normal { mean, sd } => (mean, sd),
            Distribution::Uniform { low, high } => ((low + high) / 2.0, (high - low) / 12f64.sqrt()),
            // binary confounders act on the 0/1 scale
            Distribution::Bernoulli { .. } => (0.0, 1.0),
        }
    }

    fn sample(self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Distribution::Normal { mean, sd } => mean + sd * rng.sample::<f64, _>(StandardNormal),
            Distribution::Uniform { low, high } => rng.random_range(low..high),
            Distribution::Bernoulli { p } => f64::from(u8::from(rng.random_bool(p))),
        }
    }

    fn validate(self, name: &str) -> Result<()> {
        let ok = match self {
            Distribution::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            Distribution::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
            Distribution::Bernoulli { p } => (0.0..=1.0).contains(&p),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("confounder `{name}` has an invalid distribution {self:?}")))
        }
    }
}

/// A measured confounder. Effects act per standard deviation (per unit for
/// binary confounders). The name decides where the value is recorded: `age`,
/// a comorbidity flag, a daily series (baseline and first day), or a static
/// measure for any other name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfounderSpec {
    pub name: String,
    pub distribution: Distribution,
    pub treatment_coef: f64,
    pub hazard_coef: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Above,
    Below,
}

/// Patients whose confounder value lies above or below a cut-off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupRule {
    pub confounder: String,
    pub comparison: Comparison,
    pub threshold: f64,
}

impl SubgroupRule {
    fn holds(&self, value: f64) -> bool {
        match self.comparison {
            Comparison::Above => value > self.threshold,
            Comparison::Below => value < self.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    pub seed: u64,
    pub drug: Drug,
    pub confounders: Vec<ConfounderSpec>,
    pub treatment_intercept: f64,
    /// Deaths per day at reference covariates.
    pub baseline_hazard: f64,
    pub true_log_hr_treatment: f64,
    pub benefit_subgroup_rule: Option<SubgroupRule>,
    /// Added to the treatment log hazard ratio inside the subgroup.
    pub subgroup_extra_log_hr: f64,
    /// Loss to follow-up per day.
    pub censoring_rate: f64,
    /// Chance that a recorded clinical measurement is blank.
    pub missingness_rate: f64,
    /// Latent N(0, 1) factor raising treatment odds and lowering the hazard
    /// by this much per unit; never recorded.
    pub unmeasured_confounder_strength: f64,
    /// Chance of receiving each of the other drugs, without effect.
    pub other_drug_rate: f64,
    pub departments: usize,
    pub max_followup_days: u32,
    pub min_stay_days: u32,
    pub max_stay_days: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            seed: 0,
            drug: Drug::Tocilizumab,
            confounders: vec![
                ConfounderSpec {
                    name: "age".into(),
                    distribution: Distribution::Normal { mean: 65.0, sd: 12.0 },
                    treatment_coef: 0.5,
                    hazard_coef: 0.5,
                },
                ConfounderSpec {
                    name: series::TEMPERATURE.into(),
                    distribution: Distribution::Normal { mean: 37.4, sd: 0.7 },
                    treatment_coef: 0.3,
                    hazard_coef: 0.3,
                },
            ],
            treatment_intercept: -0.5,
            baseline_hazard: 0.02,
            true_log_hr_treatment: -0.4,
            benefit_subgroup_rule: None,
            subgroup_extra_log_hr: 0.0,
            censoring_rate: 0.01,
            missingness_rate: 0.05,
            unmeasured_confounder_strength: 0.0,
            other_drug_rate: 0.2,
            departments: 20,
            max_followup_days: 60,
            min_stay_days: 4,
            max_stay_days: 20,
        }
    }
}

impl SynthConfig {
    /// One strong measured confounder raising both treatment odds and the
    /// hazard; treatment halves the hazard.
    pub fn confounded(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            confounders: vec![ConfounderSpec {
                name: series::SATO2_FIO2.into(),
                distribution: Distribution::Normal { mean: 300.0, sd: 80.0 },
                treatment_coef: -0.8,
                hazard_coef: -0.8,
            }],
            treatment_intercept: -0.3,
            true_log_hr_treatment: 0.5f64.ln(),
            missingness_rate: 0.0,
            ..Self::default()
        }
    }

    /// Treatment helps only patients with high day-one temperature and
    /// harms the rest, about evenly on the log-hazard scale.
    pub fn heterogeneous(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            treatment_intercept: -0.2,
            true_log_hr_treatment: 1.2,
            benefit_subgroup_rule: Some(SubgroupRule {
                confounder: series::TEMPERATURE.into(),
                comparison: Comparison::Above,
                threshold: 37.6,
            }),
            subgroup_extra_log_hr: -3.0,
            baseline_hazard: 0.03,
            ..Self::default()
        }
    }

    /// No treatment effect; a latent factor drives both treatment and
    /// survival.
    pub fn unmeasured(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            true_log_hr_treatment: 0.0,
            unmeasured_confounder_strength: 1.5,
            baseline_hazard: 0.03,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n < 100 {
            return bad(format!("cohort size {} below 100", self.n));
        }
        for (name, rate) in [("baseline_hazard", self.baseline_hazard), ("censoring_rate", self.censoring_rate)] {
            if !(rate.is_finite() && rate > 0.0) {
                return bad(format!("{name} must be positive, got {rate}"));
            }
        }
        for (name, p) in [("missingness_rate", self.missingness_rate), ("other_drug_rate", self.other_drug_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        if self.departments < 3 {
            return bad("need at least three departments".into());
        }
        if self.min_stay_days == 0
            || self.min_stay_days > self.max_stay_days
            || self.max_followup_days < self.max_stay_days
        {
            return bad("stay bounds must satisfy 1 <= min <= max <= follow-up".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.confounders {
            c.distribution.validate(&c.name)?;
            if !seen.insert(c.name.as_str()) {
                return bad(format!("confounder `{}` listed twice", c.name));
            }
            if !(c.treatment_coef.is_finite() && c.hazard_coef.is_finite()) {
                return bad(format!("confounder `{}` has a non-finite effect", c.name));
            }
        }
        if let Some(rule) = &self.benefit_subgroup_rule {
            if !seen.contains(rule.confounder.as_str()) {
                return bad(format!("subgroup rule names unknown confounder `{}`", rule.confounder));
            }
        }
        Ok(())
    }

    /// Static measures the feature schema must request to see every
    /// confounder.
    pub fn extra_statics(&self) -> Vec<String> {
        self.confounders
            .iter()
            .filter(|c| placement(&c.name) == Placement::Static && !STATIC_FEATURES.contains(&c.name.as_str()))
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn department_names(&self) -> Vec<String> {
        (1..=self.departments).map(|d| d.to_string()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub admission_id: String,
    pub treated: bool,
    pub propensity: f64,
    pub in_subgroup: bool,
    /// Log hazard ratio the admission would experience if treated.
    pub log_hr_if_treated: f64,
}

/// Sidecar describing what the generator put in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub format: String,
    pub config: SynthConfig,
    pub true_hr: f64,
    /// Hazard ratio inside the benefit subgroup, when one is defined.
    pub subgroup_hr: Option<f64>,
    pub subgroup_size: usize,
    pub treated: usize,
    pub events: usize,
    pub rows: Vec<TruthRow>,
}

impl GroundTruth {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Placement {
    Age,
    Comorbidity,
    Series,
    Static,
}

fn placement(name: &str) -> Placement {
    if name == "age" {
        Placement::Age
    } else if COMORBIDITIES.contains(&name) {
        Placement::Comorbidity
    } else if SERIES_FEATURES.contains(&name) {
        Placement::Series
    } else {
        Placement::Static
    }
}

/// Typical values for measurements that are not confounders.
fn noise_value(name: &str, rng: &mut ChaCha8Rng) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    match name {
        series::SATO2 => (94.0 + 3.0 * z).min(100.0),
        series::FIO2 => {
            if rng.random_bool(0.2) {
                rng.random_range(24.0..40.0)
            } else {
                21.0
            }
        }
        series::SATO2_FIO2 => 320.0 + 60.0 * z,
        series::RESP_RATE => 19.0 + 4.0 * z,
        series::HEART_RATE => 85.0 + 14.0 * z,
        series::TEMPERATURE => 37.2 + 0.6 * z,
        series::SYSTOLIC_BP => 128.0 + 18.0 * z,
        series::DIASTOLIC_BP => 74.0 + 11.0 * z,
        series::GLUCOSE_CV => 0.2 + 0.05 * z,
        _ => z,
    }
}

const CRP_NAMES: &[&str] = &["C reactive protein", "C-reactive protein", "C reactive protein."];
const FERRITIN_NAMES: &[&str] = &["Ferritin", "Ferritine"];
const ALIVE_DESTINATIONS: &[(&str, f64)] =
    &[("primary care team", 0.7), ("home hospitalization", 0.2), ("transfer to acute hospital", 0.1)];

struct Draw {
    record: AdmissionRecord,
    truth: TruthRow,
    event: bool,
}

fn generate_one(config: &Config<'_>, i: usize) -> Draw {
    let cfg = config.cfg;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(i as u64);
    let id = format!("A{i:06}");
    let admit = NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date") + Duration::days(rng.random_range(0..300));
    let department = (rng.random_range(0..cfg.departments) + 1).to_string();
    let gender = if rng.random_bool(0.55) { "male" } else { "female" };

    let values: Vec<f64> = cfg.confounders.iter().map(|c| c.distribution.sample(&mut rng)).collect();
    let u: f64 = rng.sample(StandardNormal);
    let mut logit = cfg.treatment_intercept + cfg.unmeasured_confounder_strength * u;
    let mut log_hazard = cfg.baseline_hazard.ln() - cfg.unmeasured_confounder_strength * u;
    for (c, v) in cfg.confounders.iter().zip(&values) {
        let (m, s) = c.distribution.mean_sd();
        let z = (v - m) / s;
        logit += c.treatment_coef * z;
        log_hazard += c.hazard_coef * z;
    }
    let in_subgroup = config.rule.is_some_and(|(j, rule)| rule.holds(values[j]));
    let log_hr = cfg.true_log_hr_treatment + if in_subgroup { cfg.subgroup_extra_log_hr } else { 0.0 };
    let propensity = sigmoid(logit);
    let treated = rng.random_bool(propensity);
    if treated {
        log_hazard += log_hr;
    }

    let event_time: f64 = Exp::new(log_hazard.exp()).expect("positive rate").sample(&mut rng);
    let censor_time: f64 = Exp::new(cfg.censoring_rate).expect("positive rate").sample(&mut rng);
    let stay = rng.random_range(cfg.min_stay_days..=cfg.max_stay_days);
    let followup = (censor_time.min(f64::from(cfg.max_followup_days)).ceil() as u32).max(stay);
    let death_day = (event_time.ceil().max(1.0) as u64).min(u64::from(u32::MAX)) as u32;
    let event = death_day <= followup;
    let died_in_hospital = event && death_day <= stay;
    let los = if died_in_hospital { death_day } else { stay };

    let mut record = AdmissionRecord {
        admission_id: id.clone(),
        patient_id: format!("P{i:06}"),
        department,
        age: 0,
        gender: gender.into(),
        admit_date: admit,
        discharge_date: admit + Duration::days(i64::from(los)),
        discharge_destination: if died_in_hospital { "death".into() } else { pick_destination(&mut rng).into() },
        death_in_hospital: died_in_hospital,
        last_followup_day: if event { death_day } else { followup },
        death_day: event.then_some(death_day),
        icu_days: None,
        emergency_only: false,
        comorbidity_flags: BTreeMap::new(),
        static_measures: BTreeMap::new(),
        daily_series: BTreeMap::new(),
        lab_observations: Vec::new(),
        treatments: Vec::new(),
        radiological_covid_flag: rng.random_bool(0.8),
        rtpcr_positive_days: vec![0],
        covid_coded_diagnosis: true,
    };
    record.age = (65.0 + 12.0 * rng.sample::<f64, _>(StandardNormal)).round().clamp(18.0, 100.0) as u32;
    for c in COMORBIDITIES {
        if rng.random_bool(0.15) {
            record.comorbidity_flags.insert((*c).to_string(), true);
        }
    }
    let missing = |rng: &mut ChaCha8Rng| rng.random_bool(cfg.missingness_rate);
    for s in SERIES_FEATURES {
        let mut points = Vec::new();
        for day in [BASELINE_DAY, 0] {
            let v = noise_value(s, &mut rng);
            if !missing(&mut rng) {
                points.push((day, v));
            }
        }
        record.daily_series.insert((*s).to_string(), points);
    }
    record.static_measures.insert("barthel".into(), f64::from(rng.random_range(0..=20u32) * 5));
    for (c, v) in cfg.confounders.iter().zip(&values) {
        match placement(&c.name) {
            Placement::Age => record.age = v.round().clamp(0.0, 120.0) as u32,
            Placement::Comorbidity => {
                record.comorbidity_flags.insert(c.name.clone(), *v > 0.5);
            }
            Placement::Series => {
                let points: Vec<(i32, f64)> =
                    [BASELINE_DAY, 0].into_iter().filter(|_| !missing(&mut rng)).map(|d| (d, *v)).collect();
                record.daily_series.insert(c.name.clone(), points);
            }
            Placement::Static => {
                if missing(&mut rng) {
                    record.static_measures.remove(&c.name);
                } else {
                    record.static_measures.insert(c.name.clone(), *v);
                }
            }
        }
    }
    // supplemental oxygen in hospital: the days before an in-hospital death,
    // and some survivors
    let mut flow = Vec::new();
    let mut high_flow = Vec::new();
    let oxygen_from = if died_in_hospital {
        Some(los.saturating_sub(3).max(1))
    } else if rng.random_bool(0.3) {
        Some(rng.random_range(1..=los.max(1)))
    } else {
        None
    };
    if let Some(start) = oxygen_from {
        for day in start..los {
            flow.push((day as i32, rng.random_range(2.0..8.0)));
            if died_in_hospital && day + 1 == los {
                high_flow.push((day as i32, 1.0));
            }
        }
    }
    record.daily_series.insert(series::OXYGEN_FLOW.into(), flow);
    if !high_flow.is_empty() {
        record.daily_series.insert(series::HIGH_FLOW.into(), high_flow);
    }
    for (names, median) in [(CRP_NAMES, 40.0), (FERRITIN_NAMES, 600.0)] {
        for day in [BASELINE_DAY, 0] {
            if missing(&mut rng) {
                continue;
            }
            let z: f64 = rng.sample(StandardNormal);
            record.lab_observations.push(LabObservation {
                raw_name: names[rng.random_range(0..names.len())].into(),
                code: None,
                value: median * (0.6 * z).exp(),
                unit: if median < 100.0 { "mg/L" } else { "ng/mL" }.into(),
                day,
            });
        }
    }
    if treated {
        record.treatments.push(DoseEvent {
            drug: cfg.drug.codes()[0].into(),
            day: rng.random_range(0..=2),
            dose: 1.0,
            route: Some("iv".into()),
        });
    }
    for other in Drug::ALL.into_iter().filter(|d| *d != cfg.drug) {
        if rng.random_bool(cfg.other_drug_rate) {
            record.treatments.push(DoseEvent {
                drug: other.codes()[0].into(),
                day: rng.random_range(0..=4),
                dose: 1.0,
                route: Some("po".into()),
            });
        }
    }
    Draw {
        record,
        truth: TruthRow { admission_id: id, treated, propensity, in_subgroup, log_hr_if_treated: log_hr },
        event,
    }
}

fn pick_destination(rng: &mut ChaCha8Rng) -> &'static str {
    let mut x: f64 = rng.random();
    for (d, p) in ALIVE_DESTINATIONS {
        if x < *p {
            return d;
        }
        x -= p;
    }
    ALIVE_DESTINATIONS[0].0
}

struct Config<'a> {
    cfg: &'a SynthConfig,
    rule: Option<(usize, &'a SubgroupRule)>,
}

/// Generates the cohort and its ground truth. Each record draws from its
/// own stream of the seeded generator, so output does not depend on
/// thread scheduling.
pub fn generate(config: &SynthConfig) -> Result<(Vec<AdmissionRecord>, GroundTruth)> {
    config.validate()?;
    let rule = config.benefit_subgroup_rule.as_ref().map(|r| {
        let j = config.confounders.iter().position(|c| c.name == r.confounder).expect("validated");
        (j, r)
    });
    let ctx = Config { cfg: config, rule };
    let draws: Vec<Draw> = (0..config.n).into_par_iter().map(|i| generate_one(&ctx, i)).collect();
    let subgroup_size = draws.iter().filter(|d| d.truth.in_subgroup).count();
    if rule.is_some() && subgroup_size == 0 {
        return Err(Error::Config("benefit subgroup rule selects nobody".into()));
    }
    let truth = GroundTruth {
        format: GROUND_TRUTH_FORMAT.into(),
        config: config.clone(),
        true_hr: config.true_log_hr_treatment.exp(),
        subgroup_hr: rule.map(|_| (config.true_log_hr_treatment + config.subgroup_extra_log_hr).exp()),
        subgroup_size,
        treated: draws.iter().filter(|d| d.truth.treated).count(),
        events: draws.iter().filter(|d| d.event).count(),
        rows: draws.iter().map(|d| d.truth.clone()).collect(),
    };
    Ok((draws.into_iter().map(|d| d.record).collect(), truth))
}
