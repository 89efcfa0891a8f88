//! Treatment-effect model: predicts whether an admission falls in the
//! positive response class, weighted by stabilized IPT weights.

use serde::{Deserialize, Serialize};

use crate::cohort::{Drug, FeatureMatrix, FeatureVector};
use crate::error::{Error, Result};
use crate::gbdt::{auc, cross_validate, fit, CvResult, Dataset, GbdtParams, TreeEnsemble};
pub use crate::survival::{Subgroup, SubgroupPartition};

pub const BUNDLE_FORMAT: &str = "rwe-te-bundle";
pub const BUNDLE_VERSION: u32 = 1;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Rows for fitting or scoring: features, response labels, row weights.
#[derive(Debug, Clone, Copy)]
pub struct TeData<'a> {
    pub x: &'a FeatureMatrix,
    pub labels: &'a [bool],
    pub weights: &'a [f64],
}

impl TeData<'_> {
    fn dataset(&self) -> Result<Dataset> {
        if self.labels.len() != self.x.n_rows() || self.weights.len() != self.x.n_rows() {
            return Err(Error::InvalidInput("features, labels and weights differ in length".into()));
        }
        let y: Vec<f64> = self.labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Dataset::from_matrix(self.x, &y, Some(&normalized(self.weights)?))
    }
}

/// Rescales weights to mean one so the fit does not depend on their scale.
pub fn normalized(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidInput("row weights must be positive and finite".into()));
    }
    let m = weights.iter().sum::<f64>() / weights.len().max(1) as f64;
    Ok(weights.iter().map(|w| w / m).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeConfig {
    pub params: GbdtParams,
    pub threshold: f64,
    /// Folds for the parameter search; 0 skips cross-validation.
    pub cv_folds: usize,
    /// Candidates searched by cross-validation; empty means just `params`.
    pub grid: Vec<GbdtParams>,
}

impl Default for TeConfig {
    fn default() -> Self {
        Self { params: GbdtParams::default(), threshold: DEFAULT_THRESHOLD, cv_folds: 10, grid: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeModel {
    pub format: String,
    pub version: u32,
    pub drug: Drug,
    pub indication_threshold: f64,
    pub validation_auc: Option<f64>,
    pub test_auc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvResult>,
    /// Admission ids the ensemble was fitted on.
    #[serde(default)]
    pub training_ids: Vec<String>,
    pub ensemble: TreeEnsemble,
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("indication threshold {t} outside (0, 1)")))
    }
}

/// Fits the response model. With `valid`, boosting stops early on
/// validation AUC and the AUC is recorded.
pub fn fit_te_model(
    train: TeData<'_>,
    valid: Option<TeData<'_>>,
    drug: Drug,
    config: &TeConfig,
    seed: u64,
) -> Result<TeModel> {
    check_threshold(config.threshold)?;
    let train_set = train.dataset()?;
    let valid_set = valid.map(|v| v.dataset()).transpose()?;
    if let Some(v) = valid {
        if v.x.names() != train.x.names() {
            return Err(Error::InvalidInput("validation features differ from training features".into()));
        }
    }
    let (params, cv) = match config.cv_folds {
        0 => (config.params.clone(), None),
        k => {
            let grid = if config.grid.is_empty() { vec![config.params.clone()] } else { config.grid.clone() };
            let res = cross_validate(&train_set, &grid, k, seed)?;
            (res.best_params().clone(), Some(res))
        }
    };
    let ensemble = fit(&train_set, valid_set.as_ref(), &params)?;
    let validation_auc = match &valid_set {
        Some(v) if v.positives() > 0 && v.positives() < v.n_rows() => {
            Some(auc(&ensemble.predict_dataset(v), &v.labels)?)
        }
        _ => None,
    };
    Ok(TeModel {
        format: BUNDLE_FORMAT.to_string(),
        version: BUNDLE_VERSION,
        drug,
        indication_threshold: config.threshold,
        validation_auc,
        test_auc: None,
        cv,
        training_ids: Vec::new(),
        ensemble,
    })
}

impl TeModel {
    /// Benefit score: probability of the positive response class.
    pub fn score(&self, x: &FeatureVector) -> Result<f64> {
        self.ensemble.predict_vector(x)
    }

    pub fn is_indicated(&self, score: f64) -> bool {
        score > self.indication_threshold
    }

    pub fn indicate(&self, x: &FeatureVector) -> Result<(f64, bool)> {
        let s = self.score(x)?;
        Ok((s, self.is_indicated(s)))
    }

    pub fn scores(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        self.ensemble.predict_matrix(x)
    }

    /// Unweighted AUC of the benefit score against response labels.
    pub fn evaluate(&self, x: &FeatureMatrix, labels: &[bool]) -> Result<f64> {
        let y: Vec<f64> = labels.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        auc(&self.scores(x)?, &y)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        if m.format != BUNDLE_FORMAT || m.version != BUNDLE_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model bundle {} v{} (expected {BUNDLE_FORMAT} v{BUNDLE_VERSION})",
                m.format, m.version
            )));
        }
        check_threshold(m.indication_threshold)?;
        // re-validates the embedded ensemble
        TreeEnsemble::from_json(&m.ensemble.to_json()?)?;
        Ok(m)
    }
}

pub fn indicate(model: &TeModel, x: &FeatureVector) -> Result<(f64, bool)> {
    model.indicate(x)
}

/// Splits the test population into the four analysis groups. `oxygen`
/// flags admissions with any supplemental-oxygen day.
pub fn partition_subgroups(
    ids: &[String],
    oxygen: &[bool],
    x: &FeatureMatrix,
    model: &TeModel,
) -> Result<SubgroupPartition> {
    if ids.len() != x.n_rows() || oxygen.len() != x.n_rows() {
        return Err(Error::InvalidInput("ids, oxygen flags and features differ in length".into()));
    }
    let scores = model.scores(x)?;
    let mut part = SubgroupPartition::default();
    for ((id, &oxy), s) in ids.iter().zip(oxygen).zip(scores) {
        part.full.insert(id.clone());
        if oxy {
            part.supplemental_oxygen.insert(id.clone());
        }
        if model.is_indicated(s) {
            part.ml_indicated.insert(id.clone());
        } else {
            part.ml_non_indicated.insert(id.clone());
        }
    }
    Ok(part)
}
