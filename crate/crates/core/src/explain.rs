//! Per-prediction feature attributions for tree ensembles (path-dependent
//! TreeSHAP on the margin scale).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::features::align_to;
use crate::cohort::{FeatureMatrix, FeatureVector};
use crate::error::{Error, Result};
use crate::gbdt::{Node, Tree, TreeEnsemble};
use crate::stats::sigmoid;

/// Share of a node's cover that went to one child; an empty node splits evenly.
#[inline]
pub(crate) fn cover_ratio(child: f64, parent: f64) -> f64 {
    if parent > 0.0 {
        child / parent
    } else {
        0.5
    }
}

/// Cover-weighted mean leaf value of a tree.
pub fn tree_expected_value(tree: &Tree) -> f64 {
    fn go(t: &Tree, i: usize) -> f64 {
        match t.nodes[i] {
            Node::Leaf { value, .. } => value,
            Node::Split { left, right, cover, .. } => {
                let rl = cover_ratio(t.nodes[left].cover(), cover);
                let rr = cover_ratio(t.nodes[right].cover(), cover);
                rl * go(t, left) + rr * go(t, right)
            }
        }
    }
    go(tree, 0)
}

/// Expected margin when no feature is known.
pub fn expected_value(model: &TreeEnsemble) -> f64 {
    model.base_score + model.trees.iter().map(tree_expected_value).sum::<f64>()
}

#[derive(Debug, Clone, Copy)]
struct PathElem {
    feature: Option<usize>,
    zero: f64,
    one: f64,
    weight: f64,
}

fn extend(path: &mut Vec<PathElem>, zero: f64, one: f64, feature: Option<usize>) {
    let l = path.len();
    path.push(PathElem { feature, zero, one, weight: if l == 0 { 1.0 } else { 0.0 } });
    for i in (0..l).rev() {
        path[i + 1].weight += one * path[i].weight * (i + 1) as f64 / (l + 1) as f64;
        path[i].weight = zero * path[i].weight * (l - i) as f64 / (l + 1) as f64;
    }
}

fn unwind(path: &mut Vec<PathElem>, i: usize) {
    let l = path.len() - 1;
    let (one, zero) = (path[i].one, path[i].zero);
    let mut next = path[l].weight;
    for j in (0..l).rev() {
        if one != 0.0 {
            let t = path[j].weight;
            path[j].weight = next * (l + 1) as f64 / ((j + 1) as f64 * one);
            next = t - path[j].weight * zero * (l - j) as f64 / (l + 1) as f64;
        } else {
            path[j].weight = path[j].weight * (l + 1) as f64 / (zero * (l - j) as f64);
        }
    }
    for j in i..l {
        path[j].feature = path[j + 1].feature;
        path[j].zero = path[j + 1].zero;
        path[j].one = path[j + 1].one;
    }
    path.pop();
}

fn unwound_sum(path: &[PathElem], i: usize) -> f64 {
    let l = path.len() - 1;
    let (one, zero) = (path[i].one, path[i].zero);
    let mut next = path[l].weight;
    let mut total = 0.0;
    for j in (0..l).rev() {
        if one != 0.0 {
            let t = next * (l + 1) as f64 / ((j + 1) as f64 * one);
            total += t;
            next = path[j].weight - t * zero * (l - j) as f64 / (l + 1) as f64;
        } else if zero != 0.0 {
            total += path[j].weight / zero / ((l - j) as f64 / (l + 1) as f64);
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    tree: &Tree,
    node: usize,
    x: &[f64],
    phi: &mut [f64],
    mut path: Vec<PathElem>,
    zero: f64,
    one: f64,
    feature: Option<usize>,
) {
    extend(&mut path, zero, one, feature);
    match &tree.nodes[node] {
        Node::Leaf { value, .. } => {
            for i in 1..path.len() {
                let w = unwound_sum(&path, i);
                let e = path[i];
                if let Some(f) = e.feature {
                    phi[f] += w * (e.one - e.zero) * value;
                }
            }
        }
        n @ Node::Split { feature: f, left, right, cover, .. } => {
            let hot = Tree::route(n, x[*f]).expect("split");
            let cold = if hot == *left { *right } else { *left };
            let (mut iz, mut io) = (1.0, 1.0);
            if let Some(k) = path.iter().skip(1).position(|e| e.feature == Some(*f)).map(|k| k + 1) {
                iz = path[k].zero;
                io = path[k].one;
                unwind(&mut path, k);
            }
            let rh = cover_ratio(tree.nodes[hot].cover(), *cover);
            let rc = cover_ratio(tree.nodes[cold].cover(), *cover);
            recurse(tree, hot, x, phi, path.clone(), iz * rh, io, Some(*f));
            recurse(tree, cold, x, phi, path, iz * rc, 0.0, Some(*f));
        }
    }
}

/// SHAP values of one tree for a dense row (NaN is missing).
pub fn tree_shap(tree: &Tree, x: &[f64], phi: &mut [f64]) {
    recurse(tree, 0, x, phi, Vec::with_capacity(32), 1.0, 1.0, None);
}

/// Base value and per-feature contributions; base plus contributions
/// equals the model margin.
pub fn shap_values(model: &TreeEnsemble, row: &[Option<f64>]) -> (f64, Vec<f64>) {
    let x: Vec<f64> = row.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let mut phi = vec![0.0; model.n_features()];
    for tree in &model.trees {
        tree_shap(tree, &x, &mut phi);
    }
    (expected_value(model), phi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub feature: String,
    pub value: Option<f64>,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    /// Expected margin.
    pub base: f64,
    /// Model margin for this input.
    #[serde(rename = "final")]
    pub final_margin: f64,
    pub probability: f64,
    /// One attribution per model feature, in model order.
    pub contributions: Vec<Contribution>,
}

pub fn explain_row(model: &TreeEnsemble, row: &[Option<f64>]) -> Explanation {
    let (base, phi) = shap_values(model, row);
    let margin = model.predict_margin(row);
    let contributions = model
        .feature_names
        .iter()
        .zip(row)
        .zip(&phi)
        .map(|((f, v), c)| Contribution { feature: f.clone(), value: *v, contribution: *c })
        .collect();
    Explanation { base, final_margin: margin, probability: sigmoid(margin), contributions }
}

pub fn explain(model: &TreeEnsemble, v: &FeatureVector) -> Result<Explanation> {
    Ok(explain_row(model, &align_to(&model.feature_names, v)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceItem {
    pub feature: String,
    /// Display text of the input value; empty when missing.
    pub display: String,
    pub contribution: f64,
}

/// Push-pull list for a patient-level force plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForcePlot {
    pub base: f64,
    #[serde(rename = "final")]
    pub final_margin: f64,
    pub items: Vec<ForceItem>,
}

/// Non-zero contributions by decreasing magnitude (ties by feature order).
/// `display` overrides how a feature's value is shown.
pub fn force_data(e: &Explanation, display: &BTreeMap<String, String>) -> ForcePlot {
    let mut order: Vec<usize> =
        (0..e.contributions.len()).filter(|&i| e.contributions[i].contribution != 0.0).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (e.contributions[a].contribution, e.contributions[b].contribution);
        cb.abs().total_cmp(&ca.abs()).then(a.cmp(&b))
    });
    let items = order
        .into_iter()
        .map(|i| {
            let c = &e.contributions[i];
            let shown =
                display.get(&c.feature).cloned().unwrap_or_else(|| c.value.map(|v| v.to_string()).unwrap_or_default());
            ForceItem { feature: c.feature.clone(), display: shown, contribution: c.contribution }
        })
        .collect();
    ForcePlot { base: e.base, final_margin: e.final_margin, items }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub mean_abs_shap: f64,
}

/// Attributions of every instance of a matrix, for summary and dependence plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryData {
    pub feature_names: Vec<String>,
    pub base: f64,
    /// Row-major `[instance][feature]` attributions.
    pub shap: Vec<Vec<f64>>,
    pub values: Vec<Vec<Option<f64>>>,
    /// Features by decreasing mean |attribution|, ties by feature order.
    pub ranking: Vec<FeatureImportance>,
}

pub fn summary_data(model: &TreeEnsemble, x: &FeatureMatrix) -> Result<SummaryData> {
    model.check_columns(x.names())?;
    let shap: Vec<Vec<f64>> = (0..x.n_rows()).into_par_iter().map(|r| shap_values(model, x.row(r)).1).collect();
    let values: Vec<Vec<Option<f64>>> = (0..x.n_rows()).map(|r| x.row(r).to_vec()).collect();
    let n = x.n_rows().max(1) as f64;
    let mut ranking: Vec<(usize, f64)> =
        (0..model.n_features()).map(|j| (j, shap.iter().map(|row| row[j].abs()).sum::<f64>() / n)).collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(SummaryData {
        feature_names: model.feature_names.clone(),
        base: expected_value(model),
        shap,
        values,
        ranking: ranking
            .into_iter()
            .map(|(j, m)| FeatureImportance { feature: model.feature_names[j].clone(), mean_abs_shap: m })
            .collect(),
    })
}

impl SummaryData {
    /// Long format: instance, feature, value, shap.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["instance", "feature", "value", "shap"])?;
        for (i, (phi, vals)) in self.shap.iter().zip(&self.values).enumerate() {
            for (j, name) in self.feature_names.iter().enumerate() {
                let v = vals[j].map(|v| v.to_string()).unwrap_or_default();
                w.write_record([i.to_string(), name.clone(), v, phi[j].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// (value, attribution) pairs of one feature across instances.
    pub fn dependence(&self, feature: &str) -> Result<Vec<(Option<f64>, f64)>> {
        let j = self
            .feature_names
            .iter()
            .position(|n| n == feature)
            .ok_or_else(|| Error::UnknownFeature(feature.to_string()))?;
        Ok(self.shap.iter().zip(&self.values).map(|(p, v)| (v[j], p[j])).collect())
    }

    pub fn top_features(&self, k: usize) -> Vec<FeatureImportance> {
        self.ranking.iter().take(k).cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbdt::{fit, Dataset, GbdtParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Cover-weighted expectation with features in `known` fixed to `x`.
    fn cond_expectation(tree: &Tree, i: usize, x: &[f64], known: u32) -> f64 {
        match &tree.nodes[i] {
            Node::Leaf { value, .. } => *value,
            n @ Node::Split { feature, left, right, cover, .. } => {
                if known & (1 << feature) != 0 {
                    cond_expectation(tree, Tree::route(n, x[*feature]).unwrap(), x, known)
                } else {
                    cover_ratio(tree.nodes[*left].cover(), *cover) * cond_expectation(tree, *left, x, known)
                        + cover_ratio(tree.nodes[*right].cover(), *cover) * cond_expectation(tree, *right, x, known)
                }
            }
        }
    }

    fn brute_force(model: &TreeEnsemble, x: &[f64]) -> Vec<f64> {
        let m = x.len();
        let f = |s: u32| model.trees.iter().map(|t| cond_expectation(t, 0, x, s)).sum::<f64>();
        let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
        (0..m)
            .map(|i| {
                let mut phi = 0.0;
                for s in 0u32..(1 << m) {
                    if s & (1 << i) != 0 {
                        continue;
                    }
                    let k = s.count_ones() as usize;
                    let w = fact(k) * fact(m - k - 1) / fact(m);
                    phi += w * (f(s | (1 << i)) - f(s));
                }
                phi
            })
            .collect()
    }

    fn model(p: usize, seed: u64) -> (TreeEnsemble, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 300;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            let row: Vec<f64> =
                (0..p).map(|_| if rng.random::<f64>() < 0.1 { f64::NAN } else { rng.random_range(0.0..1.0) }).collect();
            let s =
                row.iter().enumerate().map(|(j, v)| if v.is_nan() { 0.3 } else { v * (j as f64 - 2.0) }).sum::<f64>();
            labels.push(if rng.random::<f64>() < sigmoid(s) { 1.0 } else { 0.0 });
            rows.push(row);
        }
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let d = Dataset::from_rows((0..p).map(|j| format!("f{j}")).collect(), &rows, labels, Some(weights)).unwrap();
        let params = GbdtParams { n_estimators: 10, max_depth: 4, early_stopping_rounds: None, ..Default::default() };
        (fit(&d, None, &params).unwrap(), d)
    }

    #[test]
    fn matches_subset_enumeration() {
        let (m, d) = model(6, 1);
        for r in 0..25 {
            let x = d.row(r);
            let row: Vec<Option<f64>> = x.iter().map(|v| (!v.is_nan()).then_some(*v)).collect();
            let (base, phi) = shap_values(&m, &row);
            let oracle = brute_force(&m, &x);
            for (a, b) in phi.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-9, "row {r}: {a} vs {b}");
            }
            let total = base + phi.iter().sum::<f64>();
            assert!((total - m.predict_margin(&row)).abs() <= 1e-9);
        }
    }

    #[test]
    fn force_data_is_sorted_and_sparse() {
        let (m, d) = model(5, 2);
        let row: Vec<Option<f64>> = d.row(0).iter().map(|v| (!v.is_nan()).then_some(*v)).collect();
        let e = explain_row(&m, &row);
        assert_eq!(e.contributions.len(), 5);
        let f = force_data(&e, &BTreeMap::new());
        assert!(f.items.iter().all(|c| c.contribution != 0.0));
        for w in f.items.windows(2) {
            assert!(w[0].contribution.abs() >= w[1].contribution.abs());
        }
        let total = f.base + f.items.iter().map(|i| i.contribution).sum::<f64>();
        assert!((total - f.final_margin).abs() <= 1e-9);
        assert!((e.probability - m.predict_proba(&row)).abs() < 1e-15);
    }

    #[test]
    fn empty_ensemble_explains_to_base() {
        let m = TreeEnsemble::new(vec!["a".into(), "b".into()], -0.7, vec![], Default::default(), None);
        let e = explain_row(&m, &[Some(1.0), None]);
        assert_eq!(e.base, -0.7);
        assert!(e.contributions.iter().all(|c| c.contribution == 0.0));
        let f = force_data(&e, &BTreeMap::new());
        assert!(f.items.is_empty());
        assert_eq!(f.final_margin, f.base);
    }

    fn split(feature: usize, left: usize, right: usize, cover: f64) -> Node {
        Node::Split { feature, threshold: 0.5, default_left: true, left, right, gain: 1.0, cover }
    }

    /// Root splits on feature 0, both children on feature 1; leaf values
    /// are symmetric in the two features.
    fn symmetric_tree() -> Tree {
        let mut nodes = vec![split(0, 1, 2, 40.0), split(1, 3, 4, 20.0), split(1, 5, 6, 20.0)];
        for v in [0.0, 1.0, 1.0, 2.0] {
            nodes.push(Node::Leaf { value: v, cover: 10.0 });
        }
        Tree { nodes }
    }

    #[test]
    fn symmetric_features_share_credit() {
        let m = TreeEnsemble::new(vec!["a".into(), "b".into()], 0.0, vec![symmetric_tree()], Default::default(), None);
        let (base, phi) = shap_values(&m, &[Some(1.0), Some(1.0)]);
        assert_eq!(base, 1.0);
        assert!((phi[0] - phi[1]).abs() < 1e-15);
        assert!((phi[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn summary_ranking_and_dependence() {
        let (m, d) = model(5, 4);
        let rows: Vec<Vec<Option<f64>>> =
            (0..40).map(|r| d.row(r).iter().map(|v| (!v.is_nan()).then_some(*v)).collect()).collect();
        let x = FeatureMatrix::from_rows(m.feature_names.clone(), &rows).unwrap();
        let s = summary_data(&m, &x).unwrap();
        for w in s.ranking.windows(2) {
            assert!(w[0].mean_abs_shap >= w[1].mean_abs_shap);
        }
        assert_eq!(s.dependence("f0").unwrap().len(), 40);
        assert!(s.dependence("nope").is_err());
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 40 * 5);
    }

    #[test]
    fn a_stronger_tree_never_lowers_the_contribution() {
        let base =
            TreeEnsemble::new(vec!["a".into(), "b".into()], 0.0, vec![symmetric_tree()], Default::default(), None);
        let extra = Tree {
            nodes: vec![
                split(0, 1, 2, 40.0),
                Node::Leaf { value: 0.0, cover: 20.0 },
                Node::Leaf { value: 1.0, cover: 20.0 },
            ],
        };
        let mut more = base.clone();
        more.trees.push(extra);
        let probe = [Some(1.0), Some(0.0)];
        assert!(shap_values(&more, &probe).1[0] >= shap_values(&base, &probe).1[0]);
    }

    #[test]
    fn unused_feature_gets_nothing() {
        let (m, d) = model(4, 3);
        let used: std::collections::BTreeSet<usize> = m
            .trees
            .iter()
            .flat_map(|t| t.nodes.iter())
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        let row: Vec<Option<f64>> = d.row(1).iter().map(|v| (!v.is_nan()).then_some(*v)).collect();
        let (_, phi) = shap_values(&m, &row);
        for (j, p) in phi.iter().enumerate() {
            if !used.contains(&j) {
                assert_eq!(*p, 0.0);
            }
        }
    }
}
