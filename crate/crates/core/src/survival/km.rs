use serde::{Deserialize, Serialize};

use super::WeightedSurvivalRecord;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmStep {
    pub time: f64,
    /// Survival just after `time`.
    pub survival: f64,
    /// Weighted size of the risk set at `time`.
    pub at_risk: f64,
    /// Unweighted size of the risk set at `time`.
    pub n_at_risk: usize,
    /// Weighted events at `time`.
    pub events: f64,
}

/// Right-continuous step function starting at S(0) = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    pub steps: Vec<KmStep>,
}

impl KmCurve {
    pub fn survival_at(&self, t: f64) -> f64 {
        self.steps.iter().take_while(|s| s.time <= t).last().map_or(1.0, |s| s.survival)
    }

    /// First time the curve reaches 0.5 or below.
    pub fn median(&self) -> Option<f64> {
        self.steps.iter().find(|s| s.survival <= 0.5).map(|s| s.time)
    }
}

/// Weighted product-limit estimate over all records.
pub fn km_curve(records: &[WeightedSurvivalRecord]) -> Result<KmCurve> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no records for a survival curve".into()));
    }
    for r in records {
        if !(r.time > 0.0 && r.time.is_finite()) || !(r.weight > 0.0 && r.weight.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "survival record needs positive time and weight, got time {} weight {}",
                r.time, r.weight
            )));
        }
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[a].time.total_cmp(&records[b].time));
    let mut at_risk: f64 = records.iter().map(|r| r.weight).sum();
    let mut n_at_risk = records.len();
    let mut s = 1.0;
    let mut steps = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let t = records[order[i]].time;
        let (mut d, mut leaving, mut n_leaving) = (0.0, 0.0, 0);
        while i < order.len() && records[order[i]].time == t {
            let r = &records[order[i]];
            if r.event {
                d += r.weight;
            }
            leaving += r.weight;
            n_leaving += 1;
            i += 1;
        }
        if d > 0.0 {
            s *= 1.0 - d / at_risk;
        }
        steps.push(KmStep { time: t, survival: s, at_risk, n_at_risk, events: d });
        at_risk -= leaving;
        n_at_risk -= n_leaving;
    }
    Ok(KmCurve { steps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmArms {
    pub treated: Option<KmCurve>,
    pub untreated: Option<KmCurve>,
}

/// One curve per arm; an empty arm has no curve.
pub fn km_by_arm(records: &[WeightedSurvivalRecord]) -> Result<KmArms> {
    let (t, u): (Vec<_>, Vec<_>) = records.iter().cloned().partition(|r| r.treated);
    Ok(KmArms {
        treated: if t.is_empty() { None } else { Some(km_curve(&t)?) },
        untreated: if u.is_empty() { None } else { Some(km_curve(&u)?) },
    })
}

impl KmArms {
    /// CSV step functions: arm, time, survival, at_risk, n_at_risk, events.
    /// Each arm starts with a row at time 0.
    pub fn write_csv<W: std::io::Write>(&self, label: &str, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["group", "arm", "time", "survival", "at_risk", "n_at_risk", "events"])?;
        self.write_rows(label, &mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_rows<W: std::io::Write>(&self, label: &str, w: &mut csv::Writer<W>) -> Result<()> {
        for (arm, curve) in [("treated", &self.treated), ("untreated", &self.untreated)] {
            let Some(c) = curve else { continue };
            let start = c.steps.first().map_or(0.0, |s| s.at_risk);
            let n0 = c.steps.first().map_or(0, |s| s.n_at_risk);
            w.write_record([label, arm, "0", "1", &start.to_string(), &n0.to_string(), "0"])?;
            for s in &c.steps {
                w.write_record([
                    label.to_string(),
                    arm.to_string(),
                    s.time.to_string(),
                    s.survival.to_string(),
                    s.at_risk.to_string(),
                    s.n_at_risk.to_string(),
                    s.events.to_string(),
                ])?;
            }
        }
        Ok(())
    }
}
