//! Gradient-boosted decision trees for binary classification with sample
//! weights and native missing-value handling.

mod cv;
mod data;
mod metrics;
mod train;
mod tree;

use serde::{Deserialize, Serialize};

pub use cv::{cross_validate, stratified_folds, CandidateScore, CvResult};
pub use data::Dataset;
pub use metrics::{auc, log_loss};
pub use train::{fit, grad_hess, row_loss, total_loss, GbdtParams, StoppingMetric};
pub use tree::{Node, Tree};

use crate::cohort::features::align_to;
use crate::cohort::{FeatureMatrix, FeatureVector};
use crate::error::{Error, Result};
use crate::stats::sigmoid;

pub const MODEL_FORMAT: &str = "rwe-gbdt";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    pub format: String,
    pub version: u32,
    pub feature_names: Vec<String>,
    /// Initial margin (log-odds).
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub params: GbdtParams,
    /// Zero-based round with the best validation AUC, when early stopping ran.
    pub best_iteration: Option<usize>,
}

impl TreeEnsemble {
    pub fn new(
        feature_names: Vec<String>,
        base_score: f64,
        trees: Vec<Tree>,
        params: GbdtParams,
        best_iteration: Option<usize>,
    ) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            feature_names,
            base_score,
            trees,
            params,
            best_iteration,
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Margin for a dense row where NaN is missing.
    pub fn predict_margin_dense(&self, row: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(row)).sum::<f64>()
    }

    pub fn predict_margin(&self, row: &[Option<f64>]) -> f64 {
        let dense: Vec<f64> = row.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        self.predict_margin_dense(&dense)
    }

    pub fn predict_proba(&self, row: &[Option<f64>]) -> f64 {
        sigmoid(self.predict_margin(row))
    }

    /// Probability for a named vector; names outside the model are an error,
    /// names the vector lacks are missing.
    pub fn predict_vector(&self, v: &FeatureVector) -> Result<f64> {
        Ok(self.predict_proba(&align_to(&self.feature_names, v)?))
    }

    /// Probabilities for every row of a matrix whose columns match the model.
    pub fn predict_matrix(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_columns(x.names())?;
        Ok((0..x.n_rows()).map(|r| self.predict_proba(x.row(r))).collect())
    }

    pub fn predict_dataset(&self, d: &Dataset) -> Vec<f64> {
        (0..d.n_rows()).map(|r| sigmoid(self.predict_margin_dense(&d.row(r)))).collect()
    }

    pub fn check_columns(&self, names: &[String]) -> Result<()> {
        if names != self.feature_names.as_slice() {
            return Err(Error::InvalidInput(format!(
                "matrix columns do not match the {} model features",
                self.feature_names.len()
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.format != MODEL_FORMAT {
            return Err(Error::InvalidInput(format!("not a model file: format `{}`", model.format)));
        }
        if model.version != MODEL_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                model.version
            )));
        }
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let p = self.feature_names.len();
        for (t, tree) in self.trees.iter().enumerate() {
            if tree.nodes.is_empty() {
                return Err(Error::InvalidInput(format!("tree {t} has no nodes")));
            }
            for (i, node) in tree.nodes.iter().enumerate() {
                if let Node::Split { feature, left, right, .. } = node {
                    let n = tree.nodes.len();
                    if *feature >= p || *left <= i || *right <= i || *left >= n || *right >= n {
                        return Err(Error::InvalidInput(format!("tree {t} node {i} is malformed")));
                    }
                }
            }
        }
        Ok(())
    }
}
