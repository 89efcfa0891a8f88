//! Python module `rwe`.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyKeyError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

use rwe_core::cohort::io::{read_cohort, write_cohort};
use rwe_core::cohort::{AdmissionRecord, FeatureMatrix, FeatureVector};
use rwe_core::pipeline::{self, RunConfig, ScoreError, ScoreRequest, ScoringService};
use rwe_core::survival::{self, WeightedSurvivalRecord};
use rwe_core::synth::{generate, SynthConfig};
use rwe_core::teml::TeModel;
use rwe_core::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Read { .. } | Error::Io(_) => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn score_err(e: ScoreError) -> PyErr {
    match e {
        ScoreError::NotFound(d) => PyKeyError::new_err(d),
        ScoreError::Validation(fields) => PyValueError::new_err(
            fields.iter().map(|f| format!("{}: {}", f.field, f.message)).collect::<Vec<_>>().join("; "),
        ),
    }
}

/// Serializable value to plain Python objects.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// A list of admission records.
#[pyclass(module = "rwe", frozen)]
struct Cohort {
    records: Vec<AdmissionRecord>,
}

#[pymethods]
impl Cohort {
    /// Reads JSON lines, or the wide CSV layout for `.csv` paths.
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self { records: read_cohort(&path).map_err(err)? })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        write_cohort(&path, &self.records).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.records.len()
    }

    fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.admission_id.clone()).collect()
    }

    fn record<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyAny>> {
        let r = self.records.get(index).ok_or_else(|| PyValueError::new_err("index out of range"))?;
        to_py(py, r)
    }
}

/// Generates a synthetic cohort; returns `(cohort, ground_truth)`.
///
/// `scenario` is one of default, confounded, heterogeneous, unmeasured;
/// `config` (a dict in the generator's config layout) replaces it.
#[pyfunction]
#[pyo3(signature = (scenario = "default", n = 2000, seed = 0, config = None))]
fn synthesize<'py>(
    py: Python<'py>,
    scenario: &str,
    n: usize,
    seed: u64,
    config: Option<&Bound<'py, PyAny>>,
) -> PyResult<(Cohort, Bound<'py, PyAny>)> {
    let cfg = match (config, scenario) {
        (Some(c), _) => from_py::<SynthConfig>(c)?,
        (None, "default") => SynthConfig { n, seed, ..SynthConfig::default() },
        (None, "confounded") => SynthConfig::confounded(n, seed),
        (None, "heterogeneous") => SynthConfig::heterogeneous(n, seed),
        (None, "unmeasured") => SynthConfig::unmeasured(n, seed),
        (None, other) => return Err(PyValueError::new_err(format!("unknown scenario `{other}`"))),
    };
    let (records, truth) = py.detach(|| generate(&cfg)).map_err(err)?;
    Ok((Cohort { records }, to_py(py, &truth)?))
}

/// Trained treatment-effect model bundle.
#[pyclass(module = "rwe", frozen)]
struct Model {
    inner: TeModel,
}

fn vector(features: HashMap<String, Option<f64>>) -> FeatureVector {
    let mut pairs: Vec<(String, Option<f64>)> = features.into_iter().collect();
    pairs.sort_by(|a, b| a.0.cmp(&b.0));
    FeatureVector::from_pairs(pairs)
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text =
            std::fs::read_to_string(&path).map_err(|e| PyOSError::new_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: TeModel::from_json(text).map_err(err)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(err)
    }

    #[getter]
    fn drug(&self) -> &'static str {
        self.inner.drug.slug()
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.inner.indication_threshold
    }

    #[getter]
    fn features(&self) -> Vec<String> {
        self.inner.ensemble.feature_names.clone()
    }

    #[getter]
    fn validation_auc(&self) -> Option<f64> {
        self.inner.validation_auc
    }

    /// Benefit probability; absent or `None` features are missing.
    fn score(&self, features: HashMap<String, Option<f64>>) -> PyResult<f64> {
        self.inner.score(&vector(features)).map_err(err)
    }

    fn is_indicated(&self, features: HashMap<String, Option<f64>>) -> PyResult<bool> {
        Ok(self.inner.is_indicated(self.score(features)?))
    }

    /// Score plus exact per-feature contributions on the margin scale.
    fn explain<'py>(&self, py: Python<'py>, features: HashMap<String, Option<f64>>) -> PyResult<Bound<'py, PyAny>> {
        let svc = ScoringService::new(vec![self.inner.clone()]);
        let features = features.into_iter().collect();
        let r = svc.score(self.inner.drug.slug(), &ScoreRequest { features }).map_err(score_err)?;
        to_py(py, &r)
    }
}

/// Scoring service over a directory of model bundles.
#[pyclass(module = "rwe", frozen, name = "ScoringService")]
struct PyScoringService {
    inner: ScoringService,
}

#[pymethods]
impl PyScoringService {
    #[new]
    fn new(models_dir: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: ScoringService::load_dir(&models_dir).map_err(err)? })
    }

    fn reload(&self, models_dir: PathBuf) -> PyResult<()> {
        self.inner.reload_dir(&models_dir).map_err(err)
    }

    fn drugs<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.drugs())
    }

    /// Same contract as `POST /score/{drug}`; raises KeyError for an
    /// unknown drug and ValueError for a bad payload.
    fn score<'py>(&self, py: Python<'py>, drug: &str, payload: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let value: serde_json::Value = from_py(payload)?;
        let r = self.inner.score_json(drug, &value).map_err(score_err)?;
        to_py(py, &r)
    }
}

/// Result of a pipeline run.
#[pyclass(module = "rwe", frozen)]
struct Run {
    artifacts: pipeline::RunArtifacts,
}

#[pymethods]
impl Run {
    #[getter]
    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.artifacts.report)
    }

    fn report_json(&self) -> PyResult<String> {
        self.artifacts.report.to_json().map_err(err)
    }

    fn drugs(&self) -> Vec<&'static str> {
        self.artifacts.drugs.iter().map(|d| d.drug.slug()).collect()
    }

    fn model(&self, drug: &str) -> PyResult<Model> {
        self.artifacts
            .drugs
            .iter()
            .find(|d| d.drug.slug() == drug)
            .map(|d| Model { inner: d.model.clone() })
            .ok_or_else(|| PyKeyError::new_err(drug.to_string()))
    }

    fn write(&self, output_dir: PathBuf) -> PyResult<()> {
        self.artifacts.write(&output_dir).map_err(err)
    }
}

/// Runs the analysis. `config` is TOML text in the run-config layout;
/// with `cohort` given its records are used instead of the configured
/// inputs.
#[pyfunction]
#[pyo3(signature = (config = None, cohort = None, seed = None, drugs = None, output_dir = None))]
fn run(
    py: Python<'_>,
    config: Option<&str>,
    cohort: Option<&Cohort>,
    seed: Option<u64>,
    drugs: Option<Vec<String>>,
    output_dir: Option<PathBuf>,
) -> PyResult<Run> {
    let mut cfg = match config {
        Some(text) => RunConfig::from_toml(text).map_err(err)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = drugs {
        cfg.drugs = d.iter().map(|s| s.parse()).collect::<rwe_core::Result<_>>().map_err(err)?;
    }
    if let Some(o) = output_dir {
        cfg.output_dir = Some(o);
    }
    let records = cohort.map(|c| c.records.clone());
    let artifacts = py
        .detach(|| -> rwe_core::Result<_> {
            let a = match records {
                Some(r) => pipeline::run_records(&cfg, r)?,
                None => return pipeline::run(&cfg),
            };
            if let Some(dir) = &cfg.output_dir {
                a.write(dir)?;
            }
            Ok(a)
        })
        .map_err(err)?;
    Ok(Run { artifacts })
}

fn survival_records(
    time: &[f64],
    event: &[bool],
    treated: &[bool],
    weights: Option<&[f64]>,
    covariates: Option<HashMap<String, Vec<Option<f64>>>>,
) -> PyResult<Vec<WeightedSurvivalRecord>> {
    let n = time.len();
    if event.len() != n || treated.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(PyValueError::new_err("time, event, treated and weights must have equal length"));
    }
    let mut cols: Vec<(String, Vec<Option<f64>>)> = covariates.unwrap_or_default().into_iter().collect();
    cols.sort_by(|a, b| a.0.cmp(&b.0));
    if let Some((name, _)) = cols.iter().find(|(_, v)| v.len() != n) {
        return Err(PyValueError::new_err(format!("covariate `{name}` has the wrong length")));
    }
    Ok((0..n)
        .map(|i| WeightedSurvivalRecord {
            id: i.to_string(),
            time: time[i],
            event: event[i],
            treated: treated[i],
            weight: weights.map_or(1.0, |w| w[i]),
            covariates: FeatureVector::from_pairs(cols.iter().map(|(k, v)| (k.clone(), v[i]))),
        })
        .collect())
}

/// Weighted Cox model with the treatment indicator first; `None`
/// covariate values are missing.
#[pyfunction]
#[pyo3(signature = (time, event, treated, weights = None, covariates = None))]
fn fit_cox<'py>(
    py: Python<'py>,
    time: Vec<f64>,
    event: Vec<bool>,
    treated: Vec<bool>,
    weights: Option<Vec<f64>>,
    covariates: Option<HashMap<String, Vec<Option<f64>>>>,
) -> PyResult<Bound<'py, PyAny>> {
    let with_covs = covariates.is_some();
    let recs = survival_records(&time, &event, &treated, weights.as_deref(), covariates)?;
    let fit = survival::fit_cox(&recs, with_covs).map_err(err)?;
    to_py(py, &fit)
}

/// Weighted Kaplan-Meier steps as a list of dicts.
#[pyfunction]
#[pyo3(signature = (time, event, weights = None))]
fn kaplan_meier<'py>(
    py: Python<'py>,
    time: Vec<f64>,
    event: Vec<bool>,
    weights: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    let treated = vec![false; time.len()];
    let recs = survival_records(&time, &event, &treated, weights.as_deref(), None)?;
    let curve = survival::km_curve(&recs).map_err(err)?;
    to_py(py, &curve.steps)
}

/// Propensity model and stabilized weights from covariate columns.
#[pyfunction]
#[pyo3(signature = (covariates, treated, seed = 0))]
fn fit_propensity<'py>(
    py: Python<'py>,
    covariates: HashMap<String, Vec<Option<f64>>>,
    treated: Vec<bool>,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cols: Vec<(String, Vec<Option<f64>>)> = covariates.into_iter().collect();
    cols.sort_by(|a, b| a.0.cmp(&b.0));
    let n = treated.len();
    if cols.iter().any(|(_, v)| v.len() != n) {
        return Err(PyValueError::new_err("covariate columns must match `treated` in length"));
    }
    let names: Vec<String> = cols.iter().map(|(k, _)| k.clone()).collect();
    let rows: Vec<Vec<Option<f64>>> = (0..n).map(|i| cols.iter().map(|(_, v)| v[i]).collect()).collect();
    let x = FeatureMatrix::from_rows(names, &rows).map_err(err)?;
    let (res, balance) = py
        .detach(|| -> rwe_core::Result<_> {
            let res = rwe_core::causal::fit_propensity(&x, &treated, &Default::default(), seed)?;
            let balance = rwe_core::causal::balance_report(&x, &treated, &res.weights)?;
            Ok((res, balance))
        })
        .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("scores", res.scores)?;
    out.set_item("weights", res.weights)?;
    out.set_item("treated_fraction", res.treated_fraction)?;
    out.set_item("validation_auc", res.validation_auc)?;
    out.set_item("balance", to_py(py, &balance)?)?;
    Ok(out)
}

#[pymodule]
fn rwe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Cohort>()?;
    m.add_class::<Model>()?;
    m.add_class::<PyScoringService>()?;
    m.add_class::<Run>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(fit_cox, m)?)?;
    m.add_function(wrap_pyfunction!(kaplan_meier, m)?)?;
    m.add_function(wrap_pyfunction!(fit_propensity, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
