use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{normal_two_sided_p, Z_975};

pub const MAX_ITERATIONS: usize = 50;
pub const TOLERANCE: f64 = 1e-9;
/// Coefficients beyond this many log-hazard units per standard deviation
/// of their column indicate a monotone likelihood.
pub const SEPARATION_BOUND: f64 = 20.0;
const MAX_HALVINGS: usize = 30;

/// Weighted Cox partial likelihood with Breslow ties. Rows are kept sorted
/// by decreasing time so risk sets are prefixes.
#[derive(Debug, Clone)]
pub struct CoxProblem {
    time: Vec<f64>,
    event: Vec<bool>,
    weight: Vec<f64>,
    /// n x p design, row-major.
    x: Vec<f64>,
    p: usize,
}

struct RiskSums {
    loglik: f64,
    score: DVector<f64>,
    info: DMatrix<f64>,
}

impl CoxProblem {
    pub fn new(time: &[f64], event: &[bool], weight: &[f64], rows: &[Vec<f64>]) -> Result<Self> {
        let n = time.len();
        if event.len() != n || weight.len() != n || rows.len() != n {
            return Err(Error::InvalidInput("Cox inputs differ in length".into()));
        }
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p || r.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput("ragged or non-finite Cox design".into()));
        }
        if time.iter().any(|t| !(t.is_finite() && *t > 0.0)) || weight.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidInput("Cox needs positive finite times and weights".into()));
        }
        if !event.iter().any(|&e| e) {
            return Err(Error::NoEvents("every record is censored".into()));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| time[b].total_cmp(&time[a]).then(a.cmp(&b)));
        Ok(Self {
            time: order.iter().map(|&i| time[i]).collect(),
            event: order.iter().map(|&i| event[i]).collect(),
            weight: order.iter().map(|&i| weight[i]).collect(),
            x: order.iter().flat_map(|&i| rows[i].iter().copied()).collect(),
            p,
        })
    }

    pub fn n(&self) -> usize {
        self.time.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Unweighted standard deviation of each design column.
    pub fn column_sd(&self) -> Vec<f64> {
        let n = self.n() as f64;
        (0..self.p)
            .map(|j| {
                let mean = (0..self.n()).map(|i| self.row(i)[j]).sum::<f64>() / n;
                ((0..self.n()).map(|i| (self.row(i)[j] - mean).powi(2)).sum::<f64>() / n).sqrt()
            })
            .collect()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    fn eta(&self, i: usize, beta: &[f64]) -> f64 {
        self.row(i).iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    /// Log partial likelihood, score and information in one sweep.
    fn sums(&self, beta: &[f64], want_info: bool) -> RiskSums {
        let p = self.p;
        let n = self.n();
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut s2 = if want_info { vec![0.0; p * p] } else { Vec::new() };
        let mut loglik = 0.0;
        let mut score = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        // centring keeps exp() in range
        let shift = (0..n).map(|i| self.eta(i, beta)).fold(f64::NEG_INFINITY, f64::max);
        let mut i = 0;
        while i < n {
            let t = self.time[i];
            let start = i;
            while i < n && self.time[i] == t {
                let eta = self.eta(i, beta);
                let r = self.weight[i] * (eta - shift).exp();
                s0 += r;
                let xi = self.row(i);
                for a in 0..p {
                    s1[a] += r * xi[a];
                    if want_info {
                        for b in 0..p {
                            s2[a * p + b] += r * xi[a] * xi[b];
                        }
                    }
                }
                i += 1;
            }
            let d: f64 = (start..i).filter(|&k| self.event[k]).map(|k| self.weight[k]).sum();
            if d == 0.0 {
                continue;
            }
            let log_s0 = s0.ln() + shift;
            for k in (start..i).filter(|&k| self.event[k]) {
                let w = self.weight[k];
                loglik += w * (self.eta(k, beta) - log_s0);
                let xk = self.row(k);
                for a in 0..p {
                    score[a] += w * (xk[a] - s1[a] / s0);
                }
            }
            if want_info {
                for a in 0..p {
                    for b in 0..p {
                        info[(a, b)] += d * (s2[a * p + b] / s0 - s1[a] * s1[b] / (s0 * s0));
                    }
                }
            }
        }
        RiskSums { loglik, score, info }
    }

    pub fn log_likelihood(&self, beta: &[f64]) -> f64 {
        self.sums(beta, false).loglik
    }

    pub fn score(&self, beta: &[f64]) -> Vec<f64> {
        self.sums(beta, false).score.iter().copied().collect()
    }

    pub fn information(&self, beta: &[f64]) -> DMatrix<f64> {
        self.sums(beta, true).info
    }

    /// Score residuals per row (in sorted order), for the sandwich variance.
    fn score_residuals(&self, beta: &[f64]) -> Vec<DVector<f64>> {
        let p = self.p;
        let n = self.n();
        let shift = (0..n).map(|i| self.eta(i, beta)).fold(f64::NEG_INFINITY, f64::max);
        let risk: Vec<f64> = (0..n).map(|i| (self.eta(i, beta) - shift).exp()).collect();
        // forward sweep over decreasing time gives S0, S1 per distinct time
        let mut xbar_at = vec![DVector::zeros(p); n];
        let mut s0_at = vec![0.0; n];
        let (mut s0, mut s1) = (0.0, DVector::<f64>::zeros(p));
        let mut i = 0;
        while i < n {
            let t = self.time[i];
            let start = i;
            while i < n && self.time[i] == t {
                s0 += self.weight[i] * risk[i];
                s1 += DVector::from_column_slice(self.row(i)) * (self.weight[i] * risk[i]);
                i += 1;
            }
            for k in start..i {
                s0_at[k] = s0;
                xbar_at[k] = &s1 / s0;
            }
        }
        // cumulative hazard terms over increasing time
        let mut resid = vec![DVector::zeros(p); n];
        let (mut a, mut b) = (0.0, DVector::<f64>::zeros(p));
        let mut i = n;
        while i > 0 {
            let t = self.time[i - 1];
            let end = i;
            while i > 0 && self.time[i - 1] == t {
                i -= 1;
            }
            for k in i..end {
                if self.event[k] {
                    a += self.weight[k] / s0_at[k];
                    b += &xbar_at[k] * (self.weight[k] / s0_at[k]);
                }
            }
            for k in i..end {
                let xk = DVector::from_column_slice(self.row(k));
                let mut l = (&xk * a - &b) * (-risk[k]);
                if self.event[k] {
                    l += &xk - &xbar_at[k];
                }
                resid[k] = l;
            }
        }
        resid
    }

    /// Sandwich variance I^-1 (sum w^2 L L^T) I^-1.
    pub fn robust_variance(&self, beta: &[f64], info_inv: &DMatrix<f64>) -> DMatrix<f64> {
        let mut meat = DMatrix::zeros(self.p, self.p);
        for (k, l) in self.score_residuals(beta).iter().enumerate() {
            let w = self.weight[k];
            meat += l * l.transpose() * (w * w);
        }
        info_inv * meat * info_inv
    }

    fn all_unit_weights(&self) -> bool {
        self.weight.iter().all(|&w| w == 1.0)
    }

    pub fn events(&self) -> usize {
        self.event.iter().filter(|&&e| e).count()
    }
}

fn invert(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.inverse()).or_else(|| m.clone().try_inverse())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub covariates: Vec<String>,
    pub coefficients: Vec<f64>,
    pub hazard_ratios: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub wald_z: Vec<f64>,
    pub p_values: Vec<f64>,
    pub ci_95: Vec<(f64, f64)>,
    pub log_partial_likelihood: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Sandwich standard errors were used.
    pub robust: bool,
    pub n: usize,
    pub events: usize,
    /// Adjustment columns left out, with the reason.
    pub dropped: Vec<String>,
    pub diagnostics: Vec<String>,
}

impl CoxFit {
    /// Estimate for the first (treatment) covariate.
    pub fn hazard_ratio(&self) -> f64 {
        self.hazard_ratios[0]
    }

    pub fn ci(&self) -> (f64, f64) {
        self.ci_95[0]
    }

    pub fn p_value(&self) -> f64 {
        self.p_values[0]
    }

    pub fn is_significant(&self, alpha: f64) -> bool {
        self.converged && self.p_values[0] < alpha
    }
}

/// Newton-Raphson with step halving from beta = 0.
pub fn fit_problem(problem: &CoxProblem, names: Vec<String>) -> Result<CoxFit> {
    let p = problem.p();
    if p == 0 {
        return Err(Error::InvalidInput("Cox model needs at least one covariate".into()));
    }
    let mut beta = vec![0.0; p];
    let mut current = problem.sums(&beta, true);
    let mut converged = false;
    let mut iterations = 0;
    let mut diagnostics = Vec::new();
    let scale: Vec<f64> = problem.column_sd().into_iter().map(|sd| if sd > 0.0 { sd } else { 1.0 }).collect();
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let Some(inv) = invert(&current.info) else {
            diagnostics.push("singular information matrix".to_string());
            break;
        };
        let mut step: DVector<f64> = &inv * &current.score;
        let mut next_beta: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + s).collect();
        let mut next = problem.sums(&next_beta, true);
        let mut halvings = 0;
        while !(next.loglik >= current.loglik) && halvings < MAX_HALVINGS {
            step /= 2.0;
            next_beta = beta.iter().zip(step.iter()).map(|(b, s)| b + s).collect();
            next = problem.sums(&next_beta, true);
            halvings += 1;
        }
        let delta = step.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        beta = next_beta;
        current = next;
        if beta.iter().zip(&scale).any(|(b, sd)| (b * sd).abs() > SEPARATION_BOUND) {
            diagnostics.push("complete separation: coefficient diverging".to_string());
            break;
        }
        if delta < TOLERANCE {
            converged = true;
            break;
        }
    }
    if !converged && diagnostics.is_empty() {
        diagnostics.push(format!("no convergence after {MAX_ITERATIONS} iterations"));
    }
    let info_inv = invert(&current.info);
    let robust = !problem.all_unit_weights();
    let var = match (&info_inv, robust) {
        (Some(inv), true) => Some(problem.robust_variance(&beta, inv)),
        (Some(inv), false) => Some(inv.clone()),
        (None, _) => None,
    };
    let se: Vec<f64> = (0..p).map(|j| var.as_ref().map_or(f64::NAN, |v| v[(j, j)].max(0.0).sqrt())).collect();
    let z: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| b / s).collect();
    Ok(CoxFit {
        covariates: names,
        hazard_ratios: beta.iter().map(|b| b.exp()).collect(),
        p_values: z.iter().map(|z| if z.is_nan() { 1.0 } else { normal_two_sided_p(*z) }).collect(),
        ci_95: beta.iter().zip(&se).map(|(b, s)| ((b - Z_975 * s).exp(), (b + Z_975 * s).exp())).collect(),
        coefficients: beta,
        standard_errors: se,
        wald_z: z,
        log_partial_likelihood: current.loglik,
        converged,
        iterations,
        robust,
        n: problem.n(),
        events: problem.events(),
        dropped: Vec::new(),
        diagnostics,
    })
}

/// Keeps columns that are neither constant nor linear combinations of
/// earlier kept columns. Returns kept indices and reasons for the rest.
pub fn independent_columns(rows: &[Vec<f64>], names: &[String]) -> (Vec<usize>, Vec<String>) {
    let n = rows.len();
    let p = names.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..p {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let mean = col.iter().sum::<f64>() / n.max(1) as f64;
        let mut v: Vec<f64> = col.iter().map(|x| x - mean).collect();
        let norm0: f64 = v.iter().map(|x| x * x).sum();
        if norm0 <= 1e-12 * n.max(1) as f64 {
            dropped.push(format!("{}: constant", names[j]));
            continue;
        }
        for q in &basis {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            for (a, b) in v.iter_mut().zip(q) {
                *a -= dot * b;
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum();
        if norm <= 1e-10 * norm0 {
            dropped.push(format!("{}: collinear", names[j]));
            continue;
        }
        let s = norm.sqrt();
        basis.push(v.into_iter().map(|x| x / s).collect());
        kept.push(j);
    }
    (kept, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (Vec<f64>, Vec<bool>, Vec<f64>, Vec<Vec<f64>>) {
        let time = vec![2.0, 3.0, 3.0, 5.0, 6.0, 8.0, 9.0];
        let event = vec![true, true, false, true, false, true, true];
        let weight = vec![1.0; 7];
        let x = vec![vec![1.0], vec![0.0], vec![1.0], vec![1.0], vec![0.0], vec![0.0], vec![1.0]];
        (time, event, weight, x)
    }

    /// Direct O(n^2) Breslow log partial likelihood.
    fn naive_loglik(t: &[f64], e: &[bool], w: &[f64], x: &[Vec<f64>], beta: &[f64]) -> f64 {
        let eta = |i: usize| x[i].iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
        let mut ll = 0.0;
        for i in 0..t.len() {
            if e[i] {
                let denom: f64 = (0..t.len()).filter(|&j| t[j] >= t[i]).map(|j| w[j] * eta(j).exp()).sum();
                ll += w[i] * (eta(i) - denom.ln());
            }
        }
        ll
    }

    #[test]
    fn likelihood_matches_direct_sum() {
        let (t, e, w, x) = fixture();
        let prob = CoxProblem::new(&t, &e, &w, &x).unwrap();
        for b in [-1.0, 0.0, 0.3, 2.0] {
            assert!((prob.log_likelihood(&[b]) - naive_loglik(&t, &e, &w, &x, &[b])).abs() < 1e-12);
        }
    }

    #[test]
    fn score_and_information_match_finite_differences() {
        let (t, e, _, x) = fixture();
        let w = vec![0.5, 1.5, 2.0, 1.0, 0.7, 1.2, 3.0];
        let x2: Vec<Vec<f64>> = x.iter().enumerate().map(|(i, r)| vec![r[0], (i as f64).sin()]).collect();
        let prob = CoxProblem::new(&t, &e, &w, &x2).unwrap();
        let beta = [0.4, -0.3];
        let s = prob.score(&beta);
        let info = prob.information(&beta);
        let h = 1e-6;
        for j in 0..2 {
            let mut bp = beta;
            let mut bm = beta;
            bp[j] += h;
            bm[j] -= h;
            let fd = (prob.log_likelihood(&bp) - prob.log_likelihood(&bm)) / (2.0 * h);
            assert!(((s[j] - fd) / s[j]).abs() < 1e-5, "score {j}");
            let sp = prob.score(&bp);
            let sm = prob.score(&bm);
            for k in 0..2 {
                let fd = -(sp[k] - sm[k]) / (2.0 * h);
                assert!(((info[(j, k)] - fd) / info[(j, k)]).abs() < 1e-5, "info {j}{k}");
            }
        }
    }

    #[test]
    fn narrow_covariates_are_not_mistaken_for_separation() {
        let (t, e, w, x) = fixture();
        let x2: Vec<Vec<f64>> =
            x.iter().enumerate().map(|(i, r)| vec![r[0], 0.3 + 1e-3 * (i as f64 * 1.7).sin()]).collect();
        let wide = fit_problem(&CoxProblem::new(&t, &e, &w, &x2).unwrap(), vec!["a".into(), "b".into()]).unwrap();
        let narrow: Vec<Vec<f64>> = x2.iter().map(|r| vec![r[0], r[1] * 1e-3]).collect();
        let f = fit_problem(&CoxProblem::new(&t, &e, &w, &narrow).unwrap(), vec!["a".into(), "b".into()]).unwrap();
        assert!(f.converged, "{:?}", f.diagnostics);
        assert!(f.coefficients[1].abs() > 20.0);
        assert!((f.coefficients[1] * 1e-3 - wide.coefficients[1]).abs() < 1e-6 * wide.coefficients[1].abs().max(1.0));
    }

    #[test]
    fn weighted_residuals_sum_to_score() {
        let (t, e, _, x) = fixture();
        let w = vec![0.5, 1.5, 2.0, 1.0, 0.7, 1.2, 3.0];
        let prob = CoxProblem::new(&t, &e, &w, &x).unwrap();
        for b in [-0.8, 0.0, 0.6] {
            let res = prob.score_residuals(&[b]);
            let total: f64 = res.iter().zip(&prob.weight).map(|(l, w)| w * l[0]).sum();
            assert!((total - prob.score(&[b])[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn symmetric_arms_give_unit_hazard_ratio() {
        let t = [1.0, 1.0, 4.0, 4.0, 6.0, 6.0];
        let e = [true, true, false, false, true, true];
        let x = vec![vec![1.0], vec![0.0], vec![1.0], vec![0.0], vec![1.0], vec![0.0]];
        let prob = CoxProblem::new(&t, &e, &[1.0; 6], &x).unwrap();
        let f = fit_problem(&prob, vec!["treated".into()]).unwrap();
        assert!(f.converged);
        assert!(f.coefficients[0].abs() < 1e-12);
        assert!((f.hazard_ratio() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flipping_treatment_negates_beta() {
        let (t, e, w, x) = fixture();
        let flipped: Vec<Vec<f64>> = x.iter().map(|r| vec![1.0 - r[0]]).collect();
        let a = fit_problem(&CoxProblem::new(&t, &e, &w, &x).unwrap(), vec!["t".into()]).unwrap();
        let b = fit_problem(&CoxProblem::new(&t, &e, &w, &flipped).unwrap(), vec!["t".into()]).unwrap();
        assert!((a.coefficients[0] + b.coefficients[0]).abs() < 1e-9);
        assert!((a.hazard_ratio() * b.hazard_ratio() - 1.0).abs() < 1e-9);
        assert!((a.standard_errors[0] - b.standard_errors[0]).abs() < 1e-9);
    }

    #[test]
    fn weight_scale_leaves_estimates_unchanged() {
        let (t, e, _, x) = fixture();
        let w = vec![0.5, 1.5, 2.0, 1.0, 0.7, 1.2, 3.0];
        let w10: Vec<f64> = w.iter().map(|v| v * 10.0).collect();
        let a = fit_problem(&CoxProblem::new(&t, &e, &w, &x).unwrap(), vec!["t".into()]).unwrap();
        let b = fit_problem(&CoxProblem::new(&t, &e, &w10, &x).unwrap(), vec!["t".into()]).unwrap();
        assert!(a.robust && b.robust);
        assert!((a.coefficients[0] - b.coefficients[0]).abs() < 1e-9);
        assert!((a.standard_errors[0] - b.standard_errors[0]).abs() < 1e-9);
    }

    #[test]
    fn separation_is_reported_not_raised() {
        // every treated row dies before every control row
        let t = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let e = [true, true, true, true, true, true];
        let x = vec![vec![1.0], vec![1.0], vec![1.0], vec![0.0], vec![0.0], vec![0.0]];
        let f = fit_problem(&CoxProblem::new(&t, &e, &[1.0; 6], &x).unwrap(), vec!["t".into()]).unwrap();
        assert!(!f.converged);
        assert!(!f.diagnostics.is_empty());
        assert!(f.coefficients[0] > 0.0);
    }

    #[test]
    fn no_events_is_an_error() {
        assert!(matches!(
            CoxProblem::new(&[1.0, 2.0], &[false, false], &[1.0, 1.0], &[vec![0.0], vec![1.0]]),
            Err(Error::NoEvents(_))
        ));
    }

    #[test]
    fn maximum_beats_random_draws() {
        let (t, e, _, x) = fixture();
        let w = vec![0.5, 1.5, 2.0, 1.0, 0.7, 1.2, 3.0];
        let prob = CoxProblem::new(&t, &e, &w, &x).unwrap();
        let f = fit_problem(&prob, vec!["t".into()]).unwrap();
        for k in 0..100 {
            let b = f64::from(k) / 10.0 - 5.0;
            assert!(prob.log_likelihood(&[b]) <= f.log_partial_likelihood + 1e-12);
        }
    }

    #[test]
    fn robust_matches_model_variance_shape() {
        // unit weights: model-based variance
        let (t, e, w, x) = fixture();
        let f = fit_problem(&CoxProblem::new(&t, &e, &w, &x).unwrap(), vec!["t".into()]).unwrap();
        assert!(!f.robust);
        let (lo, hi) = f.ci();
        assert!(lo < f.hazard_ratio() && f.hazard_ratio() < hi);
        assert!((0.0..=1.0).contains(&f.p_value()));
    }

    #[test]
    fn collinear_and_constant_columns_are_dropped() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| {
                let a = f64::from(i);
                vec![a, 3.0, 2.0 * a + 1.0, (a * 1.7).sin()]
            })
            .collect();
        let names: Vec<String> = ["a", "const", "twice_a", "wave"].iter().map(|s| s.to_string()).collect();
        let (kept, dropped) = independent_columns(&rows, &names);
        assert_eq!(kept, vec![0, 3]);
        assert_eq!(dropped, vec!["const: constant", "twice_a: collinear"]);
    }
}
