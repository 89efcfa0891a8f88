use crate::cohort::FeatureMatrix;
use crate::error::{Error, Result};

/// Column-major training data. Missing values are NaN internally.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    columns: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Dataset {
    pub fn from_matrix(x: &FeatureMatrix, labels: &[f64], weights: Option<&[f64]>) -> Result<Self> {
        let columns = (0..x.n_features()).map(|j| x.column(j).map(|v| v.unwrap_or(f64::NAN)).collect()).collect();
        Self::from_columns(x.names().to_vec(), columns, labels.to_vec(), weights.map(<[f64]>::to_vec))
    }

    /// Builds from dense rows; NaN marks a missing value.
    pub fn from_rows(
        feature_names: Vec<String>,
        rows: &[Vec<f64>],
        labels: Vec<f64>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let p = feature_names.len();
        if let Some(r) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::InvalidInput(format!("row of width {} for {p} features", r.len())));
        }
        let columns = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        Self::from_columns(feature_names, columns, labels, weights)
    }

    pub fn from_columns(
        feature_names: Vec<String>,
        columns: Vec<Vec<f64>>,
        labels: Vec<f64>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = labels.len();
        if columns.len() != feature_names.len() {
            return Err(Error::InvalidInput("column count differs from feature names".into()));
        }
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidInput("columns and labels differ in length".into()));
        }
        if columns.iter().flatten().any(|v| v.is_infinite()) {
            return Err(Error::InvalidInput("infinite feature value".into()));
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::InvalidInput("labels must be 0 or 1".into()));
        }
        let weights = weights.unwrap_or_else(|| vec![1.0; n]);
        if weights.len() != n {
            return Err(Error::InvalidInput("weights and labels differ in length".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
        }
        Ok(Self { feature_names, columns, labels, weights })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn value(&self, row: usize, j: usize) -> f64 {
        self.columns[j][row]
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            feature_names: self.feature_names.clone(),
            columns: self.columns.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            weights: rows.iter().map(|&r| self.weights[r]).collect(),
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n_rows() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("invalid weights".into()));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1.0).count()
    }
}
