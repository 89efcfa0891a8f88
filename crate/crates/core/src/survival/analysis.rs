use serde::{Deserialize, Serialize};

use super::{fit_cox, CoxFit, Subgroup, SubgroupPartition, WeightedSurvivalRecord, ALPHA};
use crate::error::Result;

/// One (subgroup, adjusted) cell of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCell {
    pub drug: String,
    pub subgroup: Subgroup,
    pub adjusted: bool,
    pub n: usize,
    pub events: usize,
    pub hr: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub p: Option<f64>,
    pub significant: bool,
    /// Why the cell has no estimate, or fit diagnostics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<CoxFit>,
}

impl SurvivalCell {
    pub fn is_estimable(&self) -> bool {
        self.hr.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SurvivalTable {
    pub cells: Vec<SurvivalCell>,
}

impl SurvivalTable {
    pub fn get(&self, subgroup: Subgroup, adjusted: bool) -> Option<&SurvivalCell> {
        self.cells.iter().find(|c| c.subgroup == subgroup && c.adjusted == adjusted)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        write_results_csv(&self.cells, out)
    }
}

/// Flat results: drug, subgroup, adjusted, hr, ci_low, ci_high, p, n, events.
/// Not-estimable cells leave the estimate columns empty.
pub fn write_results_csv<W: std::io::Write>(cells: &[SurvivalCell], out: W) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "drug",
        "subgroup",
        "adjusted",
        "hr",
        "ci_low",
        "ci_high",
        "p",
        "n",
        "events",
        "significant",
        "note",
    ])?;
    for c in cells {
        w.write_record([
            c.drug.clone(),
            c.subgroup.to_string(),
            c.adjusted.to_string(),
            opt(c.hr),
            opt(c.ci_low),
            opt(c.ci_high),
            opt(c.p),
            c.n.to_string(),
            c.events.to_string(),
            c.significant.to_string(),
            c.note.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cell(drug: &str, subgroup: Subgroup, adjusted: bool, records: &[WeightedSurvivalRecord]) -> SurvivalCell {
    let n = records.len();
    let events = records.iter().filter(|r| r.event).count();
    let mut out = SurvivalCell {
        drug: drug.to_string(),
        subgroup,
        adjusted,
        n,
        events,
        hr: None,
        ci_low: None,
        ci_high: None,
        p: None,
        significant: false,
        note: None,
        fit: None,
    };
    if n == 0 {
        out.note = Some("not estimable: empty subgroup".into());
        return out;
    }
    if events == 0 {
        out.note = Some("not estimable: no events".into());
        return out;
    }
    let fit = if adjusted {
        fit_cox(records, true)
    } else {
        let unit: Vec<WeightedSurvivalRecord> =
            records.iter().map(|r| WeightedSurvivalRecord { weight: 1.0, ..r.clone() }).collect();
        fit_cox(&unit, false)
    };
    match fit {
        Ok(f) if !f.converged => {
            out.note = Some(format!("not estimable: {}", f.diagnostics.join("; ")));
            out.fit = Some(f);
        }
        Ok(f) => {
            let (lo, hi) = f.ci();
            out.hr = Some(f.hazard_ratio());
            out.ci_low = Some(lo);
            out.ci_high = Some(hi);
            out.p = Some(f.p_value());
            out.significant = f.is_significant(ALPHA);
            if !f.diagnostics.is_empty() {
                out.note = Some(f.diagnostics.join("; "));
            }
            out.fit = Some(f);
        }
        Err(e) => out.note = Some(format!("not estimable: {e}")),
    }
    out
}

/// Unadjusted (unit weights, treatment only) and adjusted (record weights
/// plus covariates) fits on each subgroup.
pub fn analyze_treatment(
    drug: &str,
    records: &[WeightedSurvivalRecord],
    partition: &SubgroupPartition,
) -> SurvivalTable {
    let mut cells = Vec::with_capacity(8);
    for g in Subgroup::ALL {
        let members = partition.members(g);
        let sub: Vec<WeightedSurvivalRecord> = records.iter().filter(|r| members.contains(&r.id)).cloned().collect();
        for adjusted in [false, true] {
            cells.push(cell(drug, g, adjusted, &sub));
        }
    }
    SurvivalTable { cells }
}
