use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::report::{
    BalanceSummary, CohortSummary, DrugOutcome, DrugReport, FutilityOutcome, RunReport, SurvivalClaim,
};
use super::{FutilityTrigger, RunConfig, REPORT_FORMAT, REPORT_VERSION};
use crate::causal::{balance_report, fit_propensity, BalanceReport, PropensityResult};
use crate::cohort::io::read_cohort;
use crate::cohort::{
    ascertain_treatment, cluster_lab_names, label_outcome, partition_cohort, select_covid_admissions, AdmissionRecord,
    ClusterReport, CompositeVariables, Drug, FeatureMatrix, FeatureRole, FeatureSchema, FeatureVector, Partition,
};
use crate::error::{Error, Result};
use crate::explain::{summary_data, SummaryData};
use crate::futility::{run_futility, FutilityInput};
use crate::survival::{analyze_treatment, km_by_arm, KmArms, Subgroup, SubgroupPartition, WeightedSurvivalRecord};
use crate::teml::{fit_te_model, partition_subgroups, TeData, TeModel};

/// Everything a run produces, before it is written out.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: RunReport,
    pub clusters: ClusterReport,
    pub drugs: Vec<DrugArtifacts>,
}

#[derive(Debug, Clone)]
pub struct DrugArtifacts {
    pub drug: Drug,
    pub model: TeModel,
    pub balance: BalanceReport,
    pub survival: crate::survival::SurvivalTable,
    pub km: Vec<(Subgroup, KmArms)>,
    pub partition: SubgroupPartition,
    pub test_ids: Vec<String>,
    pub test_features: FeatureMatrix,
    pub summary: Option<SummaryData>,
}

/// Admissions that passed selection, with derived variables and the split.
#[derive(Debug, Clone)]
pub struct PreparedCohort {
    pub records: Vec<AdmissionRecord>,
    pub composites: Vec<CompositeVariables>,
    /// Indices into `records`.
    pub partition: Partition,
    pub clusters: ClusterReport,
    pub summary: CohortSummary,
}

/// One drug's eligible admissions, in a fixed order, with everything the
/// models and survival fits consume.
#[derive(Debug, Clone)]
pub struct DrugData {
    pub drug: Drug,
    pub seed: u64,
    /// Index into the cohort's records for each eligible admission.
    pub rows: Vec<usize>,
    pub ids: Vec<String>,
    pub treated: Vec<bool>,
    pub labels: Vec<bool>,
    pub covariates: FeatureMatrix,
    pub te_features: FeatureMatrix,
    pub propensity: PropensityResult,
    pub balance: BalanceReport,
    /// Covariates entering the adjusted survival fits.
    pub adjustment: Vec<String>,
    pub survival: Vec<WeightedSurvivalRecord>,
    /// Positions (into the vectors above) per partition.
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
    pub n_excluded: usize,
}

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {error}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub error: Error,
}

trait Stage<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T> Stage<T> for Result<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

fn drug_seed(seed: u64, drug: Drug) -> u64 {
    let k = Drug::ALL.iter().position(|d| *d == drug).unwrap_or(0) as u64;
    seed.wrapping_add(1_000_003 * (k + 1))
}

/// Reads the configured inputs and runs every stage.
pub fn run(config: &RunConfig) -> Result<RunArtifacts> {
    config.validate()?;
    if config.inputs.is_empty() {
        return Err(Error::Config("no input files given".into()));
    }
    let mut records = Vec::new();
    for path in &config.inputs {
        records.extend(read_cohort(path)?);
    }
    let artifacts = run_records(config, records)?;
    if let Some(dir) = &config.output_dir {
        artifacts.write(dir)?;
    }
    Ok(artifacts)
}

/// Selection, composite derivation, partitioning and lab clustering.
pub fn prepare_cohort(config: &RunConfig, records: Vec<AdmissionRecord>) -> Result<PreparedCohort> {
    config.validate()?;
    let n_input = records.len();
    let selected = select_covid_admissions(records).kept;
    let n_selected = selected.len();
    let mut kept = Vec::new();
    let mut composites = Vec::new();
    let mut invalid = Vec::new();
    for r in selected {
        let allowed = config.held_out_departments.contains(&r.department)
            || config.training_departments.as_ref().is_none_or(|t| t.contains(&r.department));
        if !allowed {
            continue;
        }
        match r.validate().and_then(|_| CompositeVariables::derive(&r)) {
            Ok(c) => {
                kept.push(r);
                composites.push(c);
            }
            Err(e) => invalid.push(format!("{}: {e}", r.admission_id)),
        }
    }
    let partition = partition_cohort(&kept, &config.held_out_departments, config.train_fraction, config.seed)?;
    if partition.test.is_empty() {
        return Err(Error::Config(format!(
            "held-out departments {:?} have no admissions",
            config.held_out_departments
        )));
    }
    let observations: Vec<_> = kept.iter().flat_map(|r| r.lab_observations.iter().cloned()).collect();
    let clusters = cluster_lab_names(&observations, &config.lab_clustering);

    let mut summary = CohortSummary::describe(&kept);
    summary.n_input = n_input;
    summary.n_selected = n_selected;
    summary.n_invalid = invalid.len();
    summary.invalid_examples = invalid.into_iter().take(20).collect();
    summary.n_train = partition.train.len();
    summary.n_valid = partition.valid.len();
    summary.n_test = partition.test.len();
    Ok(PreparedCohort { records: kept, composites, partition, clusters, summary })
}

/// Runs every stage on records already in memory. Drugs are analysed in
/// parallel; a failing drug is reported and does not stop the others.
pub fn run_records(config: &RunConfig, records: Vec<AdmissionRecord>) -> Result<RunArtifacts> {
    let cohort = prepare_cohort(config, records)?;
    let results: Vec<std::result::Result<(DrugReport, DrugArtifacts), (Drug, StageError)>> = config
        .drugs
        .par_iter()
        .map(|&drug| {
            prepare_drug(config, &cohort, drug).and_then(|d| analyze_drug(config, &cohort, d)).map_err(|f| (drug, f))
        })
        .collect();
    let mut outcomes = Vec::new();
    let mut drugs = Vec::new();
    for r in results {
        match r {
            Ok((report, art)) => {
                outcomes.push(DrugOutcome::Completed(Box::new(report)));
                drugs.push(art);
            }
            Err((drug, f)) => {
                outcomes.push(DrugOutcome::Failed { drug, stage: f.stage.to_string(), error: f.error.to_string() })
            }
        }
    }
    Ok(RunArtifacts {
        report: RunReport {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            seed: config.seed,
            config: config.clone(),
            cohort: cohort.summary.clone(),
            lab_mapping: cohort.clusters.mapping(),
            drugs: outcomes,
        },
        clusters: cohort.clusters,
        drugs,
    })
}

/// Eligibility, features, propensity weights, balance, labels and the
/// survival inputs for one drug.
pub fn prepare_drug(
    config: &RunConfig,
    cohort: &PreparedCohort,
    drug: Drug,
) -> std::result::Result<DrugData, StageError> {
    let seed = drug_seed(config.seed, drug);
    // eligibility: excluded or unreadable dosing drops the admission
    let mut rows = Vec::new();
    let mut treated = Vec::new();
    let mut assignments = Vec::new();
    for (i, r) in cohort.records.iter().enumerate() {
        if let Ok(a) = ascertain_treatment(r, drug) {
            if a.is_eligible() {
                rows.push(i);
                treated.push(a.is_treated());
                assignments.push(a);
            }
        }
    }
    let n_excluded = cohort.records.len() - rows.len();
    let elig_records: Vec<&AdmissionRecord> = rows.iter().map(|&i| &cohort.records[i]).collect();
    let targets: Vec<f64> = treated.iter().map(|&t| f64::from(u8::from(t))).collect();
    let schema = FeatureSchema::fit(&elig_records, cohort.clusters.mapping(), Some(&targets))
        .at("features")?
        .with_extra_statics(&config.extra_statics);
    let assemble = |role: FeatureRole| -> Result<FeatureMatrix> {
        let vectors: Vec<FeatureVector> =
            rows.iter().map(|&i| schema.assemble(&cohort.records[i], &cohort.composites[i], role, drug)).collect();
        FeatureMatrix::from_vectors(&vectors)
    };
    let covariates = assemble(FeatureRole::PropensityCovariate).at("features")?;
    let te_features = assemble(FeatureRole::TeFeature).at("features")?;

    let propensity = fit_propensity(&covariates, &treated, &config.propensity, seed).at("propensity")?;
    let balance = balance_report(&covariates, &treated, &propensity.weights).at("balance")?;

    let labels: Vec<bool> = rows
        .iter()
        .zip(&assignments)
        .map(|(&i, a)| label_outcome(&cohort.records[i], &cohort.composites[i], a).map(|l| l.is_positive()))
        .collect::<Result<_>>()
        .at("labels")?;

    // adjustment set: the most imbalanced covariates before weighting
    let mut ranked: Vec<(usize, f64)> = balance
        .covariates
        .iter()
        .enumerate()
        .filter_map(|(j, c)| c.smd_before.map(|s| (j, s.abs())))
        .filter(|(_, s)| *s > config.adjustment.smd_threshold)
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(config.adjustment.max_covariates);
    let adj_cols: Vec<usize> = ranked.iter().map(|(j, _)| *j).collect();
    let adjustment: Vec<String> = adj_cols.iter().map(|&j| covariates.names()[j].clone()).collect();
    let survival: Vec<WeightedSurvivalRecord> = (0..rows.len())
        .map(|p| {
            let covs =
                FeatureVector::new(adjustment.clone(), adj_cols.iter().map(|&j| covariates.get(p, j)).collect())?;
            WeightedSurvivalRecord::from_admission(&cohort.records[rows[p]], treated[p], propensity.weights[p], covs)
        })
        .collect::<Result<_>>()
        .at("survival")?;

    let pos_of: BTreeMap<usize, usize> = rows.iter().enumerate().map(|(p, &i)| (i, p)).collect();
    let rows_in = |part: &[usize]| -> Vec<usize> { part.iter().filter_map(|i| pos_of.get(i).copied()).collect() };
    Ok(DrugData {
        drug,
        seed,
        ids: rows.iter().map(|&i| cohort.records[i].admission_id.clone()).collect(),
        train: rows_in(&cohort.partition.train),
        valid: rows_in(&cohort.partition.valid),
        test: rows_in(&cohort.partition.test),
        rows,
        treated,
        labels,
        covariates,
        te_features,
        propensity,
        balance,
        adjustment,
        survival,
        n_excluded,
    })
}

fn analyze_drug(
    config: &RunConfig,
    cohort: &PreparedCohort,
    data: DrugData,
) -> std::result::Result<(DrugReport, DrugArtifacts), StageError> {
    let DrugData {
        drug,
        seed,
        rows,
        ids,
        treated,
        labels,
        te_features: xt,
        propensity: prop,
        balance,
        adjustment,
        survival: surv,
        train,
        valid,
        test,
        n_excluded,
        ..
    } = data;
    let take = |part: &[usize]| {
        (
            xt.select_rows(part),
            part.iter().map(|&r| labels[r]).collect::<Vec<bool>>(),
            part.iter().map(|&r| prop.weights[r]).collect::<Vec<f64>>(),
        )
    };
    let (x_train, y_train, w_train) = take(&train);
    let (x_valid, y_valid, w_valid) = take(&valid);
    let (x_test, y_test, _) = take(&test);

    let mut model = fit_te_model(
        TeData { x: &x_train, labels: &y_train, weights: &w_train },
        (!valid.is_empty()).then_some(TeData { x: &x_valid, labels: &y_valid, weights: &w_valid }),
        drug,
        &config.te,
        seed,
    )
    .at("te_model")?;
    model.training_ids = train.iter().map(|&r| ids[r].clone()).collect();
    let both = y_test.iter().any(|&b| b) && y_test.iter().any(|&b| !b);
    model.test_auc = if both { Some(model.evaluate(&x_test, &y_test).at("te_model")?) } else { None };

    let test_ids: Vec<String> = test.iter().map(|&r| ids[r].clone()).collect();
    let oxygen: Vec<bool> = test.iter().map(|&r| cohort.composites[rows[r]].received_supplemental_oxygen()).collect();
    let partition = partition_subgroups(&test_ids, &oxygen, &x_test, &model).at("subgroups")?;

    let test_surv: Vec<WeightedSurvivalRecord> = test.iter().map(|&r| surv[r].clone()).collect();
    let table = analyze_treatment(drug.slug(), &test_surv, &partition);
    let mut km = Vec::new();
    for g in Subgroup::ALL {
        let members = partition.members(g);
        let recs: Vec<WeightedSurvivalRecord> = test_surv.iter().filter(|r| members.contains(&r.id)).cloned().collect();
        km.push((g, km_by_arm(&recs).at("survival")?));
    }

    let indicated_cell = table.get(Subgroup::MlIndicated, true);
    let benefit = indicated_cell.is_some_and(|c| c.significant && c.hr.is_some_and(|h| h < 1.0));
    let futility = match (config.futility_trigger, indicated_cell.and_then(|c| c.fit.as_ref())) {
        (FutilityTrigger::Never, _) => FutilityOutcome::NotRun { reason: "disabled".into() },
        (FutilityTrigger::Significant, _) if !benefit => {
            FutilityOutcome::NotRun { reason: "no significant benefit in the indicated test group".into() }
        }
        (_, None) => FutilityOutcome::NotRun { reason: "indicated test group not estimable".into() },
        (_, Some(te_fit)) => {
            let train_surv: Vec<WeightedSurvivalRecord> = train.iter().map(|&r| surv[r].clone()).collect();
            let input = FutilityInput { x: &x_train, weights: &w_train, survival: &train_surv };
            match run_futility(input, te_fit, drug, &config.futility, seed ^ 0x5eed) {
                Ok(v) => FutilityOutcome::Completed(Box::new(v)),
                Err(e) => FutilityOutcome::Failed { error: e.to_string() },
            }
        }
    };
    let suppressed =
        matches!(&futility, FutilityOutcome::Completed(v) if v.verdict == crate::futility::Verdict::ConfoundedAbort);
    let claims: Vec<SurvivalClaim> =
        if suppressed { Vec::new() } else { table.cells.iter().filter_map(SurvivalClaim::from_cell).collect() };

    let summary = if x_test.n_rows() > 0 { Some(summary_data(&model.ensemble, &x_test).at("explain")?) } else { None };
    let mut lean = table.clone();
    for c in &mut lean.cells {
        c.fit = None;
    }
    let report = DrugReport {
        drug,
        n_eligible: rows.len(),
        n_treated: treated.iter().filter(|&&t| t).count(),
        n_excluded,
        propensity_validation_auc: prop.validation_auc,
        treated_fraction: prop.treated_fraction,
        te_validation_auc: model.validation_auc,
        te_test_auc: model.test_auc,
        te_cv_mean_auc: model.cv.as_ref().map(|cv| cv.candidates[cv.best].mean_auc),
        balance: BalanceSummary::from(&balance),
        adjustment_covariates: adjustment,
        subgroup_sizes: Subgroup::ALL.iter().map(|&g| (g, partition.members(g).len())).collect(),
        survival: lean,
        claims,
        futility,
        conclusions_suppressed: suppressed,
        top_features: summary.as_ref().map(|s| s.top_features(config.top_features)).unwrap_or_default(),
    };
    let art = DrugArtifacts {
        drug,
        model,
        balance,
        survival: table,
        km,
        partition,
        test_ids,
        test_features: x_test,
        summary,
    };
    Ok((report, art))
}

fn write_with(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

impl RunArtifacts {
    /// Writes the report and per-drug files under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.report.to_json()?)?;
        fs::write(dir.join("lab_clusters.json"), serde_json::to_string_pretty(&self.clusters)?)?;
        for d in &self.drugs {
            let sub = dir.join(d.drug.slug());
            fs::create_dir_all(&sub)?;
            fs::write(sub.join("model.json"), d.model.to_json()?)?;
            fs::write(sub.join("balance.json"), serde_json::to_string_pretty(&d.balance)?)?;
            write_with(&sub.join("balance.csv"), |b| d.balance.write_csv(b))?;
            fs::write(sub.join("survival.json"), d.survival.to_json()?)?;
            write_with(&sub.join("survival.csv"), |b| d.survival.write_csv(b))?;
            write_with(&sub.join("km.csv"), |b| {
                let mut w = csv::Writer::from_writer(b);
                w.write_record(["group", "arm", "time", "survival", "at_risk", "n_at_risk", "events"])?;
                for (g, arms) in &d.km {
                    arms.write_rows(g.as_str(), &mut w)?;
                }
                w.flush()?;
                Ok(())
            })?;
            write_with(&sub.join("subgroups.csv"), |b| d.partition.write_csv(b))?;
            write_with(&sub.join("test_features.csv"), |b| d.test_features.write_csv(&d.test_ids, b))?;
            if let Some(s) = &d.summary {
                write_with(&sub.join("shap_summary.csv"), |b| s.write_csv(b))?;
            }
        }
        Ok(())
    }
}
