//! Dummy-outcome check: retrain the response model on coin-flip labels and
//! see whether the population it selects still shows a survival benefit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::causal::stratified_split;
use crate::cohort::{Drug, FeatureMatrix};
use crate::error::{Error, Result};
use crate::survival::{fit_cox, CoxFit, WeightedSurvivalRecord, ALPHA};
use crate::teml::{fit_te_model, TeConfig, TeData, TeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FutilityConfig {
    pub te: TeConfig,
    /// Accepted range for the dummy model's validation AUC.
    pub auc_low: f64,
    pub auc_high: f64,
    pub attempts: usize,
    pub alpha: f64,
    /// Share of training rows used to fit the dummy model; the rest
    /// validates it.
    pub fit_fraction: f64,
}

impl Default for FutilityConfig {
    fn default() -> Self {
        Self { te: TeConfig::default(), auc_low: 0.40, auc_high: 0.60, attempts: 5, alpha: ALPHA, fit_fraction: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    SignalTrusted,
    ConfoundedAbort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FutilityVerdict {
    pub drug: Drug,
    pub dummy_model_auc: f64,
    /// Seed that produced the accepted dummy labels.
    pub dummy_seed: u64,
    pub attempts: usize,
    pub te_selection_fit: CoxFit,
    /// `None` when the dummy-selected population had no estimable fit.
    pub futile_selection_fit: Option<CoxFit>,
    pub futile_selection_n: usize,
    pub verdict: Verdict,
}

/// Training-set rows: response-model features, sIPT weights and the
/// matching survival records, all in the same order.
#[derive(Debug, Clone, Copy)]
pub struct FutilityInput<'a> {
    pub x: &'a FeatureMatrix,
    pub weights: &'a [f64],
    pub survival: &'a [WeightedSurvivalRecord],
}

/// Independent fair coin flips.
pub fn dummy_labels(n: usize, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_bool(0.5)).collect()
}

/// Trusted only when the treatment-effect selection is significant and
/// the dummy selection does not reproduce it. A dummy fit counts as
/// reproducing the signal when it is significant in the same direction.
pub fn verdict_for(te_fit: &CoxFit, futile_fit: Option<&CoxFit>, alpha: f64) -> Verdict {
    let same_side = |f: &CoxFit| (f.hazard_ratio() < 1.0) == (te_fit.hazard_ratio() < 1.0);
    let futile_significant = futile_fit.is_some_and(|f| f.is_significant(alpha) && same_side(f));
    if te_fit.is_significant(alpha) && !futile_significant {
        Verdict::SignalTrusted
    } else {
        Verdict::ConfoundedAbort
    }
}

fn fit_dummy(
    input: FutilityInput<'_>,
    labels: &[bool],
    drug: Drug,
    config: &FutilityConfig,
    seed: u64,
) -> Result<(TeModel, f64)> {
    let (fit_rows, hold) = stratified_split(labels, config.fit_fraction, seed);
    let pick = |rows: &[usize]| -> (FeatureMatrix, Vec<bool>, Vec<f64>) {
        (
            input.x.select_rows(rows),
            rows.iter().map(|&r| labels[r]).collect(),
            rows.iter().map(|&r| input.weights[r]).collect(),
        )
    };
    let (xt, yt, wt) = pick(&fit_rows);
    let (xv, yv, wv) = pick(&hold);
    let model = fit_te_model(
        TeData { x: &xt, labels: &yt, weights: &wt },
        Some(TeData { x: &xv, labels: &yv, weights: &wv }),
        drug,
        &config.te,
        seed,
    )?;
    let auc = model
        .validation_auc
        .ok_or_else(|| Error::DegenerateLabels("dummy validation split has a single class".into()))?;
    Ok((model, auc))
}

/// Runs the protocol on the training set. Dummy labels are redrawn until
/// the dummy model's validation AUC falls in the accepted band.
pub fn run_futility(
    input: FutilityInput<'_>,
    te_fit: &CoxFit,
    drug: Drug,
    config: &FutilityConfig,
    seed: u64,
) -> Result<FutilityVerdict> {
    let n = input.x.n_rows();
    if input.weights.len() != n || input.survival.len() != n {
        return Err(Error::InvalidInput("futility inputs differ in length".into()));
    }
    if config.attempts == 0 {
        return Err(Error::Config("futility needs at least one attempt".into()));
    }
    let mut last_auc = f64::NAN;
    for attempt in 0..config.attempts {
        let s = seed.wrapping_add(attempt as u64);
        let labels = dummy_labels(n, s);
        let (model, auc) = fit_dummy(input, &labels, drug, config, s)?;
        last_auc = auc;
        if !(config.auc_low..=config.auc_high).contains(&auc) {
            continue;
        }
        let scores = model.scores(input.x)?;
        let selected: Vec<WeightedSurvivalRecord> = input
            .survival
            .iter()
            .zip(&scores)
            .filter(|(_, s)| model.is_indicated(**s))
            .map(|(r, _)| r.clone())
            .collect();
        let futile = if selected.iter().any(|r| r.event) { fit_cox(&selected, true).ok() } else { None };
        let verdict = verdict_for(te_fit, futile.as_ref(), config.alpha);
        return Ok(FutilityVerdict {
            drug,
            dummy_model_auc: auc,
            dummy_seed: s,
            attempts: attempt + 1,
            te_selection_fit: te_fit.clone(),
            futile_selection_fit: futile,
            futile_selection_n: selected.len(),
            verdict,
        });
    }
    Err(Error::NotFutile { auc: last_auc, attempts: config.attempts })
}
