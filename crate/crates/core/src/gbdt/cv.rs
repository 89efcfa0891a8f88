use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::metrics::auc;
use super::train::{fit, GbdtParams};
use crate::error::{Error, Result};
use crate::stats::{mean, std_dev};

/// Fold index per row; each class is shuffled and dealt round-robin.
pub fn stratified_folds(labels: &[f64], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    for class in [0.0, 1.0] {
        let mut rows: Vec<usize> = (0..labels.len()).filter(|&r| labels[r] == class).collect();
        if rows.len() < k {
            return Err(Error::DegenerateLabels(format!("{} rows of class {class} for {k} folds", rows.len())));
        }
        rows.shuffle(&mut rng);
        for (i, r) in rows.into_iter().enumerate() {
            fold[r] = i % k;
        }
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub params: GbdtParams,
    pub fold_aucs: Vec<f64>,
    pub mean_auc: f64,
    pub std_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub candidates: Vec<CandidateScore>,
    pub best: usize,
}

impl CvResult {
    pub fn best_params(&self) -> &GbdtParams {
        &self.candidates[self.best].params
    }
}

/// Stratified k-fold search over parameter candidates by held-out AUC.
/// Folds train for the full number of rounds; ties keep the earlier candidate.
pub fn cross_validate(data: &Dataset, candidates: &[GbdtParams], k: usize, seed: u64) -> Result<CvResult> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no parameter candidates".into()));
    }
    let fold = stratified_folds(&data.labels, k, seed)?;
    let splits: Vec<(Dataset, Dataset)> = (0..k)
        .map(|f| {
            let (held, kept): (Vec<usize>, Vec<usize>) = (0..data.n_rows()).partition(|&r| fold[r] == f);
            (data.subset(&kept), data.subset(&held))
        })
        .collect();
    let mut scores = Vec::with_capacity(candidates.len());
    for params in candidates {
        let params = GbdtParams { early_stopping_rounds: None, ..params.clone() };
        let fold_aucs = splits
            .iter()
            .map(|(tr, te)| {
                let model = fit(tr, None, &params)?;
                auc(&model.predict_dataset(te), &te.labels)
            })
            .collect::<Result<Vec<f64>>>()?;
        scores.push(CandidateScore {
            mean_auc: mean(&fold_aucs).unwrap_or(f64::NAN),
            std_auc: std_dev(&fold_aucs).unwrap_or(0.0),
            fold_aucs,
            params: candidates[scores.len()].clone(),
        });
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.mean_auc > scores[best].mean_auc {
            best = i;
        }
    }
    Ok(CvResult { candidates: scores, best })
}
