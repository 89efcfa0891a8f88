use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::metrics::{auc, log_loss};
use super::tree::{Node, Tree};
use super::TreeEnsemble;
use crate::error::{Error, Result};
use crate::stats::{logit, sigmoid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtParams {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Minimum hessian sum per child.
    pub min_child_weight: f64,
    /// Minimum gain for a split to be kept.
    pub gamma: f64,
    /// Stop after this many rounds without validation AUC improvement.
    pub early_stopping_rounds: Option<usize>,
    pub early_stopping_metric: StoppingMetric,
}

/// Validation metric watched by early stopping.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingMetric {
    /// Unweighted ROC AUC, higher is better.
    #[default]
    Auc,
    /// Weighted log loss, lower is better; suits models whose probabilities
    /// are used as such.
    LogLoss,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            learning_rate: 0.3,
            max_depth: 6,
            lambda: 3.0,
            min_child_weight: 1.0,
            gamma: 0.0,
            early_stopping_rounds: Some(10),
            early_stopping_metric: StoppingMetric::Auc,
        }
    }
}

impl GbdtParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_estimators > 0
            && self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.lambda >= 0.0
            && self.min_child_weight >= 0.0
            && self.gamma >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid boosting parameters {self:?}")))
        }
    }
}

/// Logistic-loss gradient and hessian with respect to the margin.
#[inline]
pub fn grad_hess(margin: f64, label: f64, weight: f64) -> (f64, f64) {
    let p = sigmoid(margin);
    (weight * (p - label), weight * p * (1.0 - p))
}

/// Weighted logistic loss of one row at a margin.
#[inline]
pub fn row_loss(margin: f64, label: f64, weight: f64) -> f64 {
    // log(1 + e^m) - y m, computed without overflow
    let softplus = if margin > 0.0 { margin + (-margin).exp().ln_1p() } else { margin.exp().ln_1p() };
    weight * (softplus - label * margin)
}

/// Feature values sorted once per training call.
struct Presorted {
    /// Non-missing row indices per feature, ascending by value.
    sorted: Vec<Vec<u32>>,
    /// Rows with a missing value per feature.
    missing: Vec<Vec<u32>>,
}

impl Presorted {
    fn new(data: &Dataset) -> Self {
        let (sorted, missing) = (0..data.n_features())
            .into_par_iter()
            .map(|j| {
                let col = data.column(j);
                let (mut present, absent): (Vec<u32>, Vec<u32>) =
                    (0..col.len() as u32).partition(|&r| !col[r as usize].is_nan());
                present.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                (present, absent)
            })
            .unzip();
        Self { sorted, missing }
    }
}

/// Gains within rounding of each other count as a tie, which the earlier
/// candidate keeps. Otherwise summation order can pick the split.
fn beats(gain: f64, incumbent: f64) -> bool {
    gain > incumbent + 1e-12 * incumbent.abs().max(1.0)
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    default_left: bool,
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    g: f64,
    h: f64,
    w: f64,
}

#[inline]
fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Best split per active node for one feature.
fn best_for_feature(
    j: usize,
    data: &Dataset,
    pre: &Presorted,
    node_of: &[u32],
    totals: &[Stats],
    grad: &[f64],
    hess: &[f64],
    params: &GbdtParams,
) -> Vec<Option<Candidate>> {
    let k = totals.len();
    let col = data.column(j);
    let mut miss = vec![Stats::default(); k];
    let mut miss_n = vec![0usize; k];
    for &r in &pre.missing[j] {
        let n = node_of[r as usize];
        if n != u32::MAX {
            let m = &mut miss[n as usize];
            m.g += grad[r as usize];
            m.h += hess[r as usize];
            miss_n[n as usize] += 1;
        }
    }
    let mut prefix = vec![Stats::default(); k];
    let mut prev: Vec<Option<f64>> = vec![None; k];
    let mut best: Vec<Option<Candidate>> = vec![None; k];
    let lambda = params.lambda;
    let mcw = params.min_child_weight;

    for &r in &pre.sorted[j] {
        let r = r as usize;
        let n = node_of[r];
        if n == u32::MAX {
            continue;
        }
        let n = n as usize;
        let x = col[r];
        if let Some(p) = prev[n] {
            if x > p {
                let tot = totals[n];
                let parent = score(tot.g, tot.h, lambda);
                let pl = prefix[n];
                let mid = p + (x - p) / 2.0;
                let threshold = if mid > p { mid } else { x };
                let mut consider = |gl: f64, hl: f64, default_left: bool| {
                    let (gr, hr) = (tot.g - gl, tot.h - hl);
                    if hl < mcw || hr < mcw {
                        return;
                    }
                    let gain = 0.5 * (score(gl, hl, lambda) + score(gr, hr, lambda) - parent) - params.gamma;
                    if gain > 0.0 && best[n].is_none_or(|b| beats(gain, b.gain)) {
                        best[n] = Some(Candidate { gain, feature: j, threshold, default_left });
                    }
                };
                if miss_n[n] == 0 {
                    // no missing rows here: send future missing values to the heavier side
                    let hl = pl.h;
                    let default_left = hl >= tot.h - hl;
                    consider(pl.g, pl.h, default_left);
                } else {
                    consider(pl.g, pl.h, false);
                    consider(pl.g + miss[n].g, pl.h + miss[n].h, true);
                }
            }
        }
        let s = &mut prefix[n];
        s.g += grad[r];
        s.h += hess[r];
        prev[n] = Some(x);
    }
    best
}

fn leaf_value(s: Stats, params: &GbdtParams) -> f64 {
    -s.g / (s.h + params.lambda) * params.learning_rate
}

/// Grows one tree depth-wise, one level per pass.
fn grow_tree(data: &Dataset, pre: &Presorted, grad: &[f64], hess: &[f64], params: &GbdtParams) -> Tree {
    let n = data.n_rows();
    let mut root = Stats::default();
    for r in 0..n {
        root.g += grad[r];
        root.h += hess[r];
        root.w += data.weights[r];
    }
    let mut nodes: Vec<Node> = vec![Node::Leaf { value: leaf_value(root, params), cover: root.w }];
    // active level: (tree node id, stats)
    let mut level: Vec<(usize, Stats)> = vec![(0, root)];
    let mut node_of = vec![0u32; n];

    for _depth in 0..params.max_depth {
        if level.is_empty() {
            break;
        }
        let totals: Vec<Stats> = level.iter().map(|(_, s)| *s).collect();
        let per_feature: Vec<Vec<Option<Candidate>>> = (0..data.n_features())
            .into_par_iter()
            .map(|j| best_for_feature(j, data, pre, &node_of, &totals, grad, hess, params))
            .collect();
        let mut chosen: Vec<Option<Candidate>> = vec![None; level.len()];
        for feature_best in &per_feature {
            for (slot, cand) in chosen.iter_mut().zip(feature_best) {
                if let Some(c) = cand {
                    if slot.is_none_or(|b| beats(c.gain, b.gain)) {
                        *slot = Some(*c);
                    }
                }
            }
        }

        // children positions in the next level
        let mut next: Vec<(usize, Stats)> = Vec::new();
        let mut remap: Vec<Option<(u32, u32)>> = vec![None; level.len()];
        for (i, cand) in chosen.iter().enumerate() {
            let Some(c) = cand else { continue };
            let (id, stats) = level[i];
            let left = nodes.len();
            let right = left + 1;
            nodes.push(Node::Leaf { value: 0.0, cover: 0.0 });
            nodes.push(Node::Leaf { value: 0.0, cover: 0.0 });
            nodes[id] = Node::Split {
                feature: c.feature,
                threshold: c.threshold,
                default_left: c.default_left,
                left,
                right,
                gain: c.gain,
                cover: stats.w,
            };
            remap[i] = Some((next.len() as u32, next.len() as u32 + 1));
            next.push((left, Stats::default()));
            next.push((right, Stats::default()));
        }
        for r in 0..n {
            let cur = node_of[r];
            if cur == u32::MAX {
                continue;
            }
            match (remap[cur as usize], chosen[cur as usize]) {
                (Some((l, rr)), Some(c)) => {
                    let x = data.value(r, c.feature);
                    let go_left = if x.is_nan() { c.default_left } else { x < c.threshold };
                    let slot = if go_left { l } else { rr };
                    node_of[r] = slot;
                    let s = &mut next[slot as usize].1;
                    s.g += grad[r];
                    s.h += hess[r];
                    s.w += data.weights[r];
                }
                _ => node_of[r] = u32::MAX,
            }
        }
        for &(id, s) in &next {
            nodes[id] = Node::Leaf { value: leaf_value(s, params), cover: s.w };
        }
        level = next;
    }
    Tree { nodes }
}

/// Weighted prior log-odds, clamped away from the degenerate ends.
fn base_score(data: &Dataset) -> f64 {
    let (mut pos, mut tot) = (0.0, 0.0);
    for (y, w) in data.labels.iter().zip(&data.weights) {
        pos += y * w;
        tot += w;
    }
    if tot <= 0.0 {
        return 0.0;
    }
    logit((pos / tot).clamp(1e-6, 1.0 - 1e-6))
}

/// Fits a boosted ensemble with logistic loss. With `valid` and
/// early stopping set, the ensemble is truncated at the round with the
/// best validation score.
pub fn fit(train: &Dataset, valid: Option<&Dataset>, params: &GbdtParams) -> Result<TreeEnsemble> {
    params.validate()?;
    if train.n_rows() == 0 {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let pos = train.positives();
    if pos == 0 || pos == train.n_rows() {
        return Err(Error::DegenerateLabels(format!("{pos} positives among {} training rows", train.n_rows())));
    }
    if let Some(v) = valid {
        if v.n_features() != train.n_features() {
            return Err(Error::InvalidInput("validation set has a different width".into()));
        }
    }
    let pre = Presorted::new(train);
    let base = base_score(train);
    let mut margin = vec![base; train.n_rows()];
    let mut grad = vec![0.0; train.n_rows()];
    let mut hess = vec![0.0; train.n_rows()];
    let mut trees = Vec::new();

    let track = valid.filter(|v| {
        let p = v.positives();
        params.early_stopping_rounds.is_some() && p > 0 && p < v.n_rows()
    });
    let mut valid_margin = track.map(|v| vec![base; v.n_rows()]);
    let mut best: Option<(f64, usize)> = None;

    for round in 0..params.n_estimators {
        for r in 0..train.n_rows() {
            let (g, h) = grad_hess(margin[r], train.labels[r], train.weights[r]);
            grad[r] = g;
            hess[r] = h;
        }
        let tree = grow_tree(train, &pre, &grad, &hess, params);
        let mut row = vec![0.0; train.n_features()];
        for (r, m) in margin.iter_mut().enumerate() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = train.value(r, j);
            }
            *m += tree.predict(&row);
        }
        if let (Some(v), Some(vm)) = (track, valid_margin.as_mut()) {
            let mut row = vec![0.0; v.n_features()];
            for (r, m) in vm.iter_mut().enumerate() {
                for (j, x) in row.iter_mut().enumerate() {
                    *x = v.value(r, j);
                }
                *m += tree.predict(&row);
            }
            let score = match params.early_stopping_metric {
                StoppingMetric::Auc => auc(vm, &v.labels)?,
                StoppingMetric::LogLoss => {
                    let probs: Vec<f64> = vm.iter().map(|m| sigmoid(*m)).collect();
                    -log_loss(&probs, &v.labels, &v.weights)
                }
            };
            if best.is_none_or(|(b, _)| score > b) {
                best = Some((score, round));
            }
        }
        trees.push(tree);
        if let (Some((_, b)), Some(patience)) = (best, params.early_stopping_rounds) {
            if track.is_some() && round - b >= patience {
                break;
            }
        }
    }
    let best_iteration = match best {
        Some((_, b)) => {
            trees.truncate(b + 1);
            Some(b)
        }
        None => None,
    };
    Ok(TreeEnsemble::new(train.feature_names.clone(), base, trees, params.clone(), best_iteration))
}

/// Total weighted logistic loss of an ensemble on a dataset.
pub fn total_loss(model: &TreeEnsemble, data: &Dataset) -> f64 {
    (0..data.n_rows())
        .map(|r| row_loss(model.predict_margin_dense(&data.row(r)), data.labels[r], data.weights[r]))
        .sum()
}
