use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cohort::{Drug, FeatureVector};
use crate::error::{Error, Result};
use crate::explain::{explain, Contribution, Explanation};
use crate::teml::TeModel;

/// Request body of `POST /score/{drug}`: feature name to value, `null`
/// or absent meaning missing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    #[serde(default)]
    pub features: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub drug: Drug,
    /// Probability of the positive response class.
    pub benefit_score: f64,
    pub indicated: bool,
    pub threshold: f64,
    /// Margin-scale breakdown; contributions cover every model feature,
    /// by decreasing magnitude.
    pub explanation: Explanation,
}

/// Entry of `GET /drugs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrugInfo {
    pub drug: Drug,
    pub features: Vec<String>,
    pub threshold: f64,
    pub validation_auc: Option<f64>,
    pub test_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("no model for drug `{0}`")]
    NotFound(String),
    #[error("invalid request: {} field error(s)", .0.len())]
    Validation(Vec<FieldError>),
}

type Models = BTreeMap<Drug, Arc<TeModel>>;

/// Scores patients against loaded model bundles. Requests read a snapshot;
/// reloads swap the whole set at once.
#[derive(Debug, Default)]
pub struct ScoringService {
    models: RwLock<Arc<Models>>,
}

fn collect(models: Vec<TeModel>) -> Models {
    models.into_iter().map(|m| (m.drug, Arc::new(m))).collect()
}

/// Model bundles under `dir`: `*.json` files and `*/model.json`.
fn read_dir_models(dir: &Path) -> Result<Vec<TeModel>> {
    let mut paths = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|source| Error::Read { path: dir.to_path_buf(), source })?;
    for entry in entries {
        let p = entry?.path();
        if p.is_dir() && p.join("model.json").is_file() {
            paths.push(p.join("model.json"));
        } else if p.extension().is_some_and(|e| e == "json") && p.is_file() {
            paths.push(p);
        }
    }
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(&p).map_err(|source| Error::Read { path: p.clone(), source })?;
        // other JSON (reports, balance tables) is skipped
        if let Ok(m) = TeModel::from_json(&text) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("no model bundles found in {}", dir.display())));
    }
    Ok(out)
}

impl ScoringService {
    pub fn new(models: Vec<TeModel>) -> Self {
        Self { models: RwLock::new(Arc::new(collect(models))) }
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        Ok(Self::new(read_dir_models(dir)?))
    }

    pub fn reload_dir(&self, dir: &Path) -> Result<()> {
        self.replace(read_dir_models(dir)?);
        Ok(())
    }

    pub fn replace(&self, models: Vec<TeModel>) {
        let next = Arc::new(collect(models));
        *self.models.write().unwrap_or_else(|e| e.into_inner()) = next;
    }

    fn snapshot(&self) -> Arc<Models> {
        self.models.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn drugs(&self) -> Vec<DrugInfo> {
        self.snapshot()
            .values()
            .map(|m| DrugInfo {
                drug: m.drug,
                features: m.ensemble.feature_names.clone(),
                threshold: m.indication_threshold,
                validation_auc: m.validation_auc,
                test_auc: m.test_auc,
            })
            .collect()
    }

    /// Scores a raw JSON body, reporting every offending field.
    pub fn score_json(&self, drug: &str, body: &Value) -> std::result::Result<ScoreResponse, ScoreError> {
        let model = self.model(drug)?;
        let mut errors = Vec::new();
        let mut features = BTreeMap::new();
        match body {
            Value::Object(top) => {
                for key in top.keys().filter(|k| *k != "features") {
                    errors.push(FieldError { field: key.clone(), message: "unexpected field".into() });
                }
                match top.get("features") {
                    None | Some(Value::Null) => {}
                    Some(Value::Object(map)) => {
                        for (k, v) in map {
                            match v {
                                Value::Null => {
                                    features.insert(k.clone(), None);
                                }
                                Value::Number(n) => match n.as_f64().filter(|x| x.is_finite()) {
                                    Some(x) => {
                                        features.insert(k.clone(), Some(x));
                                    }
                                    None => errors
                                        .push(FieldError { field: k.clone(), message: "not a finite number".into() }),
                                },
                                _ => errors
                                    .push(FieldError { field: k.clone(), message: "must be a number or null".into() }),
                            }
                        }
                    }
                    Some(_) => {
                        errors.push(FieldError { field: "features".into(), message: "must be an object".into() })
                    }
                }
            }
            _ => errors.push(FieldError { field: "".into(), message: "body must be a JSON object".into() }),
        }
        if !errors.is_empty() {
            return Err(ScoreError::Validation(errors));
        }
        score_with(&model, &ScoreRequest { features })
    }

    pub fn score(&self, drug: &str, request: &ScoreRequest) -> std::result::Result<ScoreResponse, ScoreError> {
        score_with(&*self.model(drug)?, request)
    }

    fn model(&self, drug: &str) -> std::result::Result<Arc<TeModel>, ScoreError> {
        let d: Drug = drug.parse().map_err(|_| ScoreError::NotFound(drug.to_string()))?;
        self.snapshot().get(&d).cloned().ok_or_else(|| ScoreError::NotFound(drug.to_string()))
    }
}

fn score_with(model: &TeModel, request: &ScoreRequest) -> std::result::Result<ScoreResponse, ScoreError> {
    let unknown: Vec<FieldError> = request
        .features
        .keys()
        .filter(|k| !model.ensemble.feature_names.contains(k))
        .map(|k| FieldError { field: k.clone(), message: "unknown feature".into() })
        .collect();
    if !unknown.is_empty() {
        return Err(ScoreError::Validation(unknown));
    }
    let v = FeatureVector::from_pairs(request.features.iter().map(|(k, v)| (k.clone(), *v)));
    let mut e = explain(&model.ensemble, &v).map_err(|err| {
        ScoreError::Validation(vec![FieldError { field: "features".into(), message: err.to_string() }])
    })?;
    let mut ranked: Vec<(usize, Contribution)> = e.contributions.drain(..).enumerate().collect();
    ranked.sort_by(|a, b| b.1.contribution.abs().total_cmp(&a.1.contribution.abs()).then(a.0.cmp(&b.0)));
    e.contributions = ranked.into_iter().map(|(_, c)| c).collect();
    Ok(ScoreResponse {
        drug: model.drug,
        benefit_score: e.probability,
        indicated: model.is_indicated(e.probability),
        threshold: model.indication_threshold,
        explanation: e,
    })
}
