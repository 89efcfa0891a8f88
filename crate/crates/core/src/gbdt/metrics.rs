use crate::error::{Error, Result};

/// Area under the ROC curve with tied scores counted as one half.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput("scores and labels differ in length".into()));
    }
    let pos = labels.iter().filter(|&&y| y == 1.0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels(format!("{pos} positives and {neg} negatives")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Mann-Whitney rank sum with average ranks for ties.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1.0 {
                rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let (pos, neg) = (pos as f64, neg as f64);
    Ok((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

/// Weighted mean binary cross-entropy of probabilities.
pub fn log_loss(probs: &[f64], labels: &[f64], weights: &[f64]) -> f64 {
    let eps = 1e-15;
    let (mut num, mut den) = (0.0, 0.0);
    for ((&p, &y), &w) in probs.iter().zip(labels).zip(weights) {
        let p = p.clamp(eps, 1.0 - eps);
        num -= w * (y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        den += w;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}
