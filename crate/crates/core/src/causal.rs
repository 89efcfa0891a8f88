//! Propensity scores, stabilized inverse-probability weights and
//! covariate balance diagnostics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::FeatureMatrix;
use crate::error::{Error, Result};
use crate::gbdt::{auc, fit, Dataset, GbdtParams, StoppingMetric, TreeEnsemble};

pub const PROPENSITY_MIN: f64 = 0.01;
pub const PROPENSITY_MAX: f64 = 0.99;
/// Share of rows used to fit the propensity model; the rest drive early stopping.
pub const PROPENSITY_FIT_FRACTION: f64 = 0.8;
/// Below this effective-sample-size share a group is flagged as degenerate.
pub const LOW_ESS_SHARE: f64 = 0.05;

/// Propensity clipping bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipBounds {
    pub low: f64,
    pub high: f64,
}

impl Default for ClipBounds {
    fn default() -> Self {
        Self { low: PROPENSITY_MIN, high: PROPENSITY_MAX }
    }
}

impl ClipBounds {
    pub fn validate(&self) -> Result<()> {
        if 0.0 < self.low && self.low < self.high && self.high < 1.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("clip bounds {self:?} must satisfy 0 < low < high < 1")))
        }
    }

    pub fn clip(&self, p: f64) -> f64 {
        p.clamp(self.low, self.high)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityResult {
    pub model: TreeEnsemble,
    /// Unclipped predicted treatment probabilities.
    pub scores: Vec<f64>,
    /// Unweighted share of treated rows.
    pub treated_fraction: f64,
    pub weights: Vec<f64>,
    pub clip_bounds: ClipBounds,
    /// AUC of the propensity model on its internal holdout.
    pub validation_auc: Option<f64>,
}

impl PropensityResult {
    /// Weights for other rows under the same model and marginal share.
    pub fn weights_for(&self, x: &FeatureMatrix, treated: &[bool]) -> Result<Vec<f64>> {
        let p = self.model.predict_matrix(x)?;
        Ok(siptw_weights(&p, treated, self.treated_fraction, self.clip_bounds))
    }
}

pub fn clip_propensity(p: f64) -> f64 {
    ClipBounds::default().clip(p)
}

fn labels(treated: &[bool]) -> Vec<f64> {
    treated.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect()
}

/// Stratified split of row indices into (fit, holdout).
pub fn stratified_split(treated: &[bool], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut fit_rows, mut hold) = (Vec::new(), Vec::new());
    for class in [false, true] {
        let mut rows: Vec<usize> = (0..treated.len()).filter(|&r| treated[r] == class).collect();
        rows.shuffle(&mut rng);
        let k = (rows.len() as f64 * fraction).round() as usize;
        hold.extend_from_slice(&rows[k..]);
        fit_rows.extend_from_slice(&rows[..k]);
    }
    fit_rows.sort_unstable();
    hold.sort_unstable();
    (fit_rows, hold)
}

/// How many boosting rounds the propensity model keeps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeSelection {
    /// Round minimizing the largest weighted SMD over all covariates.
    #[default]
    Balance,
    /// Early stopping on holdout log loss.
    ValidationLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropensityConfig {
    pub params: GbdtParams,
    pub clip: ClipBounds,
    pub selection: TreeSelection,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self {
            params: GbdtParams {
                // additive stumps: deeper trees chase noise interactions
                // and leave continuous confounders under-balanced
                n_estimators: 600,
                learning_rate: 0.3,
                max_depth: 1,
                min_child_weight: 5.0,
                early_stopping_rounds: Some(30),
                ..GbdtParams::default()
            },
            clip: ClipBounds::default(),
            selection: TreeSelection::Balance,
        }
    }
}

/// Pooled unweighted SD and arm membership per covariate, for fast SMDs.
struct BalanceProbe<'a> {
    x: &'a FeatureMatrix,
    treated: &'a [bool],
    pooled_sd: Vec<Option<f64>>,
}

impl<'a> BalanceProbe<'a> {
    fn new(x: &'a FeatureMatrix, treated: &'a [bool]) -> Self {
        let pooled_sd = (0..x.n_features())
            .map(|j| {
                let (mut t, mut c) = (Vec::new(), Vec::new());
                for (v, &tr) in x.column(j).zip(treated) {
                    if let Some(v) = v {
                        if tr {
                            t.push(v)
                        } else {
                            c.push(v)
                        }
                    }
                }
                let sd = ((crate::stats::variance(&t)? + crate::stats::variance(&c)?) / 2.0).sqrt();
                (sd > 0.0).then_some(sd)
            })
            .collect();
        Self { x, treated, pooled_sd }
    }

    fn max_smd(&self, weights: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, sd) in self.pooled_sd.iter().enumerate() {
            let Some(sd) = sd else { continue };
            let mut acc = [(0.0, 0.0); 2];
            for ((v, &t), &w) in self.x.column(j).zip(self.treated).zip(weights) {
                if let Some(v) = v {
                    let a = &mut acc[usize::from(t)];
                    a.0 += w * v;
                    a.1 += w;
                }
            }
            if acc[0].1 > 0.0 && acc[1].1 > 0.0 {
                worst = worst.max((acc[1].0 / acc[1].1 - acc[0].0 / acc[0].1).abs() / sd);
            }
        }
        worst
    }
}

/// Fits P(treated | covariates) with boosted trees on the eligible cohort.
/// A stratified 20% is held out and reports validation AUC; the number of
/// kept rounds follows `config.selection`. Stabilized weights are derived
/// for every row.
pub fn fit_propensity(
    x: &FeatureMatrix,
    treated: &[bool],
    config: &PropensityConfig,
    seed: u64,
) -> Result<PropensityResult> {
    let clip_bounds = config.clip;
    clip_bounds.validate()?;
    if x.n_rows() != treated.len() {
        return Err(Error::InvalidInput("covariates and treatment differ in length".into()));
    }
    let n_treated = treated.iter().filter(|&&t| t).count();
    if n_treated < 2 || treated.len() - n_treated < 2 {
        return Err(Error::DegenerateLabels(format!(
            "{n_treated} treated among {} rows; need at least two per arm",
            treated.len()
        )));
    }
    let treated_fraction = n_treated as f64 / treated.len() as f64;
    let all = Dataset::from_matrix(x, &labels(treated), None)?;
    let (fit_rows, hold) = stratified_split(treated, PROPENSITY_FIT_FRACTION, seed);
    let train = all.subset(&fit_rows);
    let valid = all.subset(&hold);
    let both = |d: &Dataset| d.positives() > 0 && d.positives() < d.n_rows();
    let has_holdout = both(&train) && both(&valid);

    let mut model = match (config.selection, has_holdout) {
        (TreeSelection::ValidationLoss, true) => {
            let params = GbdtParams { early_stopping_metric: StoppingMetric::LogLoss, ..config.params.clone() };
            fit(&train, Some(&valid), &params)?
        }
        (TreeSelection::Balance, true) => {
            let params = GbdtParams { early_stopping_rounds: None, ..config.params.clone() };
            fit(&train, None, &params)?
        }
        (_, false) => fit(&all, None, &GbdtParams { early_stopping_rounds: None, ..config.params.clone() })?,
    };
    if config.selection == TreeSelection::Balance {
        let probe = BalanceProbe::new(x, treated);
        let rows: Vec<Vec<f64>> = (0..all.n_rows()).map(|r| all.row(r)).collect();
        let mut margin = vec![model.base_score; rows.len()];
        let weights_at = |m: &[f64]| {
            let p: Vec<f64> = m.iter().map(|v| crate::stats::sigmoid(*v)).collect();
            siptw_weights(&p, treated, treated_fraction, clip_bounds)
        };
        let mut best = (probe.max_smd(&weights_at(&margin)), 0);
        for (k, tree) in model.trees.iter().enumerate() {
            for (m, row) in margin.iter_mut().zip(&rows) {
                *m += tree.predict(row);
            }
            let smd = probe.max_smd(&weights_at(&margin));
            if smd < best.0 {
                best = (smd, k + 1);
            }
        }
        model.trees.truncate(best.1);
        model.best_iteration = best.1.checked_sub(1);
    }
    let validation_auc = if has_holdout { Some(auc(&model.predict_dataset(&valid), &valid.labels)?) } else { None };
    let scores = model.predict_dataset(&all);
    let weights = siptw_weights(&scores, treated, treated_fraction, clip_bounds);
    Ok(PropensityResult { model, scores, treated_fraction, weights, clip_bounds, validation_auc })
}

/// Stabilized weights: P/p for treated rows, (1-P)/(1-p) otherwise, with
/// P the marginal treated share and p the clipped propensity.
pub fn siptw_weights(propensities: &[f64], treated: &[bool], treated_fraction: f64, clip: ClipBounds) -> Vec<f64> {
    propensities
        .iter()
        .zip(treated)
        .map(|(&p, &t)| {
            let p = clip.clip(p);
            if t {
                treated_fraction / p
            } else {
                (1.0 - treated_fraction) / (1.0 - p)
            }
        })
        .collect()
}

/// Kish effective sample size.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

fn weighted_mean(values: &[(f64, f64)]) -> Option<f64> {
    let sw: f64 = values.iter().map(|(_, w)| w).sum();
    (sw > 0.0).then(|| values.iter().map(|(v, w)| v * w).sum::<f64>() / sw)
}

fn sample_variance(values: &[(f64, f64)]) -> Option<f64> {
    let xs: Vec<f64> = values.iter().map(|(v, _)| *v).collect();
    crate::stats::variance(&xs)
}

/// Absolute standardized mean difference of one covariate. The numerator
/// uses the given weights; the denominator is always the unweighted pooled
/// standard deviation, so before and after values are comparable. Missing
/// values are skipped. `None` when undefined.
pub fn standardized_mean_difference(
    values: impl Iterator<Item = Option<f64>>,
    treated: &[bool],
    weights: Option<&[f64]>,
) -> Option<f64> {
    let mut t = Vec::new();
    let mut c = Vec::new();
    for (i, v) in values.enumerate() {
        let Some(v) = v else { continue };
        let w = weights.map_or(1.0, |w| w[i]);
        if treated[i] {
            t.push((v, w));
        } else {
            c.push((v, w));
        }
    }
    let diff = (weighted_mean(&t)? - weighted_mean(&c)?).abs();
    let pooled = ((sample_variance(&t)? + sample_variance(&c)?) / 2.0).sqrt();
    if pooled > 0.0 {
        Some(diff / pooled)
    } else if diff == 0.0 {
        Some(0.0)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateBalance {
    pub covariate: String,
    pub smd_before: Option<f64>,
    pub smd_after: Option<f64>,
    /// Zero pooled spread with differing arm means.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub covariates: Vec<CovariateBalance>,
    pub n_treated: usize,
    pub n_control: usize,
    pub ess_treated: f64,
    pub ess_control: f64,
    /// Set when either arm's effective size collapses.
    pub degenerate_weights: bool,
    pub max_smd_before: Option<f64>,
    pub max_smd_after: Option<f64>,
}

fn has_both_arms(x: &FeatureMatrix, j: usize, treated: &[bool]) -> bool {
    let mut seen = [0usize; 2];
    for (v, &t) in x.column(j).zip(treated) {
        if v.is_some() {
            seen[usize::from(t)] += 1;
        }
    }
    seen[0] >= 2 && seen[1] >= 2
}

fn max_opt(it: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    it.flatten().fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
}

pub fn balance_report(x: &FeatureMatrix, treated: &[bool], weights: &[f64]) -> Result<BalanceReport> {
    if x.n_rows() != treated.len() || weights.len() != treated.len() {
        return Err(Error::InvalidInput("balance inputs differ in length".into()));
    }
    let covariates: Vec<CovariateBalance> = x
        .names()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let smd_before = standardized_mean_difference(x.column(j), treated, None);
            let smd_after = standardized_mean_difference(x.column(j), treated, Some(weights));
            let degenerate = (smd_before.is_none() || smd_after.is_none()) && has_both_arms(x, j, treated);
            CovariateBalance { covariate: name.clone(), smd_before, smd_after, degenerate }
        })
        .collect();
    let wt: Vec<f64> = weights.iter().zip(treated).filter(|(_, &t)| t).map(|(w, _)| *w).collect();
    let wc: Vec<f64> = weights.iter().zip(treated).filter(|(_, &t)| !t).map(|(w, _)| *w).collect();
    let (ess_treated, ess_control) = (effective_sample_size(&wt), effective_sample_size(&wc));
    let degenerate_weights = wt.is_empty()
        || wc.is_empty()
        || ess_treated < (LOW_ESS_SHARE * wt.len() as f64).max(2.0)
        || ess_control < (LOW_ESS_SHARE * wc.len() as f64).max(2.0);
    Ok(BalanceReport {
        max_smd_before: max_opt(covariates.iter().map(|c| c.smd_before)),
        max_smd_after: max_opt(covariates.iter().map(|c| c.smd_after)),
        covariates,
        n_treated: wt.len(),
        n_control: wc.len(),
        ess_treated,
        ess_control,
        degenerate_weights,
    })
}

impl BalanceReport {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["covariate", "smd_before", "smd_after", "degenerate"])?;
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.covariates {
            w.write_record([c.covariate.clone(), f(c.smd_before), f(c.smd_after), c.degenerate.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
