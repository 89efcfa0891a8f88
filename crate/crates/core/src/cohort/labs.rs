//! Laboratory test name disambiguation.
//!
//! Coded tests group by their standard code. Uncoded names are attached to
//! the nearest existing cluster when the spelling, the value medians and the
//! value distributions all agree; otherwise they start a cluster of their
//! own. Every merge decision is kept so the grouping can be reviewed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::record::LabObservation;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterThresholds {
    /// Maximum edit distance divided by the longer name's length.
    pub max_normalized_distance: f64,
    /// Minimum Welch t-test p-value between value distributions.
    pub min_p_value: f64,
    /// Accepted range for the ratio of value medians.
    pub min_median_ratio: f64,
    pub max_median_ratio: f64,
}

impl Default for ClusterThresholds {
    fn default() -> Self {
        Self { max_normalized_distance: 0.25, min_p_value: 0.01, min_median_ratio: 0.5, max_median_ratio: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabCluster {
    pub canonical_name: String,
    pub member_raw_names: BTreeSet<String>,
    pub target_unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabDiagnostic {
    pub raw_name: String,
    pub day: i32,
    pub reason: String,
}

/// The comparison of one uncoded name against its best-scoring cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeDecision {
    pub raw_name: String,
    pub nearest_cluster: String,
    pub normalized_distance: f64,
    pub median_ratio: f64,
    pub p_value: f64,
    pub score: f64,
    pub merged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub clusters: Vec<LabCluster>,
    pub decisions: Vec<MergeDecision>,
    pub rejected: Vec<LabDiagnostic>,
}

impl ClusterReport {
    /// Raw name to canonical name.
    pub fn mapping(&self) -> BTreeMap<String, String> {
        self.clusters
            .iter()
            .flat_map(|c| c.member_raw_names.iter().map(move |m| (m.clone(), c.canonical_name.clone())))
            .collect()
    }
}

/// Lowercased, trimmed, internal whitespace collapsed.
pub fn normalize_lab_name(name: &str) -> String {
    name.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn edit_distance(a: &str, b: &str) -> usize {
    strsim::levenshtein(a, b)
}

/// Edit distance between normalized names over the longer length, in [0, 1].
pub fn normalized_distance(a: &str, b: &str) -> f64 {
    let a = normalize_lab_name(a);
    let b = normalize_lab_name(b);
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    edit_distance(&a, &b) as f64 / longest as f64
}

#[derive(Default)]
struct NameStats {
    values: Vec<f64>,
    units: BTreeMap<String, usize>,
    codes: BTreeMap<String, usize>,
}

fn most_common(counts: &BTreeMap<String, usize>) -> Option<String> {
    // BTreeMap iteration is ordered, so ties resolve to the smallest key.
    counts
        .iter()
        .fold(None::<(&String, usize)>, |best, (k, &n)| match best {
            Some((_, bn)) if bn >= n => best,
            _ => Some((k, n)),
        })
        .map(|(k, _)| k.clone())
}

struct Building {
    canonical: String,
    members: BTreeSet<String>,
    values: Vec<f64>,
    units: BTreeMap<String, usize>,
    code: Option<String>,
}

impl Building {
    fn absorb(&mut self, name: &str, stats: &NameStats) {
        self.members.insert(name.to_string());
        self.values.extend_from_slice(&stats.values);
        for (u, n) in &stats.units {
            *self.units.entry(u.clone()).or_default() += n;
        }
    }

    fn finish(self) -> LabCluster {
        LabCluster {
            canonical_name: self.canonical,
            member_raw_names: self.members,
            target_unit: most_common(&self.units).unwrap_or_default(),
            code: self.code,
        }
    }
}

fn compare(name: &str, stats: &NameStats, cluster: &Building) -> MergeDecision {
    let normalized = normalized_distance(name, &cluster.canonical);
    let m_name = stats::median(&stats.values).unwrap_or(f64::NAN);
    let m_cluster = stats::median(&cluster.values).unwrap_or(f64::NAN);
    let median_ratio = if m_name == 0.0 && m_cluster == 0.0 { 1.0 } else { m_name / m_cluster };
    let scale = m_name.abs().max(m_cluster.abs());
    let median_gap = if scale > 0.0 { (m_name - m_cluster).abs() / scale } else { 0.0 };
    let p_value = stats::welch_t_test(&stats.values, &cluster.values);
    MergeDecision {
        raw_name: name.to_string(),
        nearest_cluster: cluster.canonical.clone(),
        normalized_distance: normalized,
        median_ratio,
        p_value,
        score: normalized + median_gap + (1.0 - p_value),
        merged: false,
    }
}

fn accepts(d: &MergeDecision, t: &ClusterThresholds) -> bool {
    d.normalized_distance <= t.max_normalized_distance
        && d.p_value >= t.min_p_value
        && d.median_ratio.is_finite()
        && d.median_ratio >= t.min_median_ratio
        && d.median_ratio <= t.max_median_ratio
}

/// Groups raw laboratory names into disjoint clusters covering every name.
pub fn cluster_lab_names(observations: &[LabObservation], thresholds: &ClusterThresholds) -> ClusterReport {
    let mut rejected = Vec::new();
    let mut by_name: BTreeMap<String, NameStats> = BTreeMap::new();
    for obs in observations {
        if obs.raw_name.trim().is_empty() {
            rejected.push(LabDiagnostic {
                raw_name: obs.raw_name.clone(),
                day: obs.day,
                reason: "empty test name".into(),
            });
            continue;
        }
        if !obs.value.is_finite() {
            rejected.push(LabDiagnostic {
                raw_name: obs.raw_name.clone(),
                day: obs.day,
                reason: format!("non-numeric value {}", obs.value),
            });
            continue;
        }
        let entry = by_name.entry(obs.raw_name.clone()).or_default();
        entry.values.push(obs.value);
        *entry.units.entry(obs.unit.clone()).or_default() += 1;
        if let Some(code) = obs.code.as_ref().filter(|c| !c.trim().is_empty()) {
            *entry.codes.entry(code.trim().to_string()).or_default() += 1;
        }
    }

    let mut clusters: Vec<Building> = Vec::new();
    let mut by_code: BTreeMap<String, usize> = BTreeMap::new();
    let mut uncoded: Vec<(&String, &NameStats)> = Vec::new();
    for (name, stats) in &by_name {
        match most_common(&stats.codes) {
            Some(code) => {
                let idx = *by_code.entry(code.clone()).or_insert_with(|| {
                    clusters.push(Building {
                        canonical: name.clone(),
                        members: BTreeSet::new(),
                        values: Vec::new(),
                        units: BTreeMap::new(),
                        code: Some(code),
                    });
                    clusters.len() - 1
                });
                clusters[idx].absorb(name, stats);
            }
            None => uncoded.push((name, stats)),
        }
    }
    // Canonical name of a coded cluster: its most observed member.
    for c in &mut clusters {
        let best = c
            .members
            .iter()
            .max_by(|a, b| {
                let na = by_name[*a].values.len();
                let nb = by_name[*b].values.len();
                na.cmp(&nb).then_with(|| b.cmp(a))
            })
            .cloned();
        if let Some(best) = best {
            c.canonical = best;
        }
    }

    uncoded.sort_by(|a, b| b.1.values.len().cmp(&a.1.values.len()).then(a.0.cmp(b.0)));
    let mut decisions = Vec::new();
    for (name, stats) in uncoded {
        let best = clusters
            .iter()
            .enumerate()
            .map(|(i, c)| (i, compare(name, stats, c)))
            .filter(|(_, d)| accepts(d, thresholds))
            .min_by(|(ia, a), (ib, b)| a.score.total_cmp(&b.score).then(ia.cmp(ib)));
        match best {
            Some((idx, mut decision)) => {
                decision.merged = true;
                decisions.push(decision);
                clusters[idx].absorb(name, stats);
            }
            None => {
                if let Some(nearest) =
                    clusters.iter().map(|c| compare(name, stats, c)).min_by(|a, b| a.score.total_cmp(&b.score))
                {
                    decisions.push(nearest);
                }
                let mut fresh = Building {
                    canonical: name.clone(),
                    members: BTreeSet::new(),
                    values: Vec::new(),
                    units: BTreeMap::new(),
                    code: None,
                };
                fresh.absorb(name, stats);
                clusters.push(fresh);
            }
        }
    }

    ClusterReport { clusters: clusters.into_iter().map(Building::finish).collect(), decisions, rejected }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn obs(name: &str, value: f64) -> LabObservation {
        LabObservation { raw_name: name.into(), code: None, value, unit: "mg/L".into(), day: 0 }
    }

    /// Textbook dynamic-programming edit distance.
    fn dp_edit_distance(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in table.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            table[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let sub = usize::from(a[i - 1] != b[j - 1]);
                table[i][j] = (table[i - 1][j] + 1).min(table[i][j - 1] + 1).min(table[i - 1][j - 1] + sub);
            }
        }
        table[a.len()][b.len()]
    }

    #[test]
    fn kitten_sitting_distance() {
        assert_eq!(dp_edit_distance("kitten", "sitting"), 3);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert!((normalized_distance("kitten", "sitting") - 3.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn edit_distance_agrees_with_dp_oracle() {
        let names = ["ferritin", "ferritine", "Ferritina", "d-dimer", "d dimer", "pcr", "crp", ""];
        for a in names {
            for b in names {
                assert_eq!(edit_distance(a, b), dp_edit_distance(a, b), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn repeated_name_is_one_cluster() {
        let report = cluster_lab_names(&[obs("ferritin", 300.0), obs("ferritin", 320.0)], &Default::default());
        assert_eq!(report.clusters.len(), 1);
        assert_eq!(report.clusters[0].member_raw_names.len(), 1);
        assert_eq!(report.clusters[0].canonical_name, "ferritin");
    }

    #[test]
    fn empty_input_gives_empty_report() {
        let report = cluster_lab_names(&[], &Default::default());
        assert!(report.clusters.is_empty());
    }

    #[test]
    fn non_finite_values_are_rejected_with_diagnostic() {
        let report = cluster_lab_names(&[obs("crp", f64::NAN), obs("crp", 4.0)], &Default::default());
        assert_eq!(report.rejected.len(), 1);
        assert_eq!(report.clusters.len(), 1);
    }

    fn sample(mean: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(mean, 1.0).unwrap();
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    }

    #[test]
    fn similar_names_with_different_distributions_stay_apart() {
        let a = sample(10.0, 50, 1);
        let b = sample(100.0, 50, 2);
        // Independent check: the two samples differ decisively.
        assert!(stats::welch_t_test(&a, &b) < 1e-10);
        let mut observations: Vec<_> = a.iter().map(|&v| obs("ferritin", v)).collect();
        observations.extend(b.iter().map(|&v| obs("ferritine", v)));
        let report = cluster_lab_names(&observations, &Default::default());
        assert_eq!(report.clusters.len(), 2);
        assert!(!report.decisions[0].merged);
    }

    #[test]
    fn similar_names_with_same_distribution_merge() {
        let mut observations: Vec<_> = sample(10.0, 60, 3).into_iter().map(|v| obs("ferritin", v)).collect();
        observations.extend(sample(10.0, 40, 4).into_iter().map(|v| obs("Ferritine", v)));
        let report = cluster_lab_names(&observations, &Default::default());
        assert_eq!(report.clusters.len(), 1);
        assert_eq!(report.clusters[0].canonical_name, "ferritin");
        assert_eq!(report.mapping()["Ferritine"], "ferritin");
    }

    #[test]
    fn coded_names_group_by_code() {
        let mut a = obs("Glucose serum", 100.0);
        a.code = Some("2345-7".into());
        let mut b = obs("GLU", 20000.0);
        b.code = Some("2345-7".into());
        let report = cluster_lab_names(&[a.clone(), a, b], &Default::default());
        assert_eq!(report.clusters.len(), 1);
        assert_eq!(report.clusters[0].canonical_name, "Glucose serum");
        assert_eq!(report.clusters[0].code.as_deref(), Some("2345-7"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn clusters_partition_all_names(
                entries in proptest::collection::vec(
                    ("[a-d]{1,4}", 0.0f64..50.0, proptest::option::of("[xy]")), 0..40)
            ) {
                let observations: Vec<_> = entries.iter().map(|(n, v, c)| LabObservation {
                    raw_name: n.clone(), code: c.clone(), value: *v, unit: "u".into(), day: 0,
                }).collect();
                let report = cluster_lab_names(&observations, &Default::default());
                let names: BTreeSet<String> = entries.iter().map(|(n, _, _)| n.clone()).collect();
                let mut seen = BTreeSet::new();
                for c in &report.clusters {
                    prop_assert!(c.member_raw_names.contains(&c.canonical_name));
                    for m in &c.member_raw_names {
                        prop_assert!(seen.insert(m.clone()), "{} in two clusters", m);
                    }
                }
                prop_assert_eq!(seen, names);
            }
        }
    }
}
