//! Censoring-aware discrimination and calibration metrics at a landmark.
//!
//! Every metric looks at patients at risk at `t*` (`T >= t*`) and the window
//! `(t*, t* + dt]`. Entries of `risks` for patients not at risk are ignored.

use std::cmp::Ordering;

use crate::data::SurvivalRecord;
use crate::error::{Error, Result};

/// Right-continuous step function starting at 1.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepFunction {
    pub fn at(&self, t: f64) -> f64 {
        let n = self.times.partition_point(|&s| s <= t);
        if n == 0 {
            1.0
        } else {
            self.values[n - 1]
        }
    }

    /// Left limit `G(t-)`.
    pub fn before(&self, t: f64) -> f64 {
        let n = self.times.partition_point(|&s| s < t);
        if n == 0 {
            1.0
        } else {
            self.values[n - 1]
        }
    }
}

/// Kaplan-Meier estimate of the censoring survivor function: censorings are
/// the events, the risk set at `s` is everyone with `T >= s`.
pub fn km_censoring_survivor(records: &[SurvivalRecord]) -> StepFunction {
    let mut times: Vec<f64> = records.iter().filter(|r| !r.event).map(|r| r.time).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    times.dedup();
    let mut values = Vec::with_capacity(times.len());
    let mut g = 1.0;
    for &s in &times {
        let at_risk = records.iter().filter(|r| r.time >= s).count();
        let censored = records.iter().filter(|r| !r.event && r.time == s).count();
        g *= 1.0 - censored as f64 / at_risk as f64;
        values.push(g);
    }
    StepFunction { times, values }
}

fn check(risks: &[f64], records: &[SurvivalRecord]) -> Result<()> {
    if risks.len() != records.len() {
        return Err(Error::Input(format!("{} scores for {} records", risks.len(), records.len())));
    }
    Ok(())
}

fn at_risk(records: &[SurvivalRecord], t_star: f64) -> impl Iterator<Item = usize> + '_ {
    (0..records.len()).filter(move |&i| records[i].time >= t_star)
}

fn finite(v: f64, i: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Input(format!("non-finite score for at-risk patient {i}")))
    }
}

fn concordance(a: f64, b: f64) -> f64 {
    match a.partial_cmp(&b) {
        Some(Ordering::Greater) => 1.0,
        Some(Ordering::Equal) => 0.5,
        _ => 0.0,
    }
}

/// Window cases and controls among the at-risk cohort.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WindowCounts {
    pub at_risk: usize,
    pub cases: usize,
    pub controls: usize,
}

pub fn window_counts(records: &[SurvivalRecord], t_star: f64, dt: f64) -> WindowCounts {
    let horizon = t_star + dt;
    let mut c = WindowCounts::default();
    for i in at_risk(records, t_star) {
        let r = records[i];
        c.at_risk += 1;
        if r.event && r.time > t_star && r.time <= horizon {
            c.cases += 1;
        } else if r.time > horizon {
            c.controls += 1;
        }
    }
    c
}

/// Cumulative/dynamic AUC with inverse-probability-of-censoring weights.
///
/// Cases (event in the window) weigh `G(t*) / G(T_i-)`, controls
/// (`T > t* + dt`) weigh `G(t*) / G(t* + dt)`; risk ties count 1/2.
pub fn time_dependent_auc(risks: &[f64], records: &[SurvivalRecord], t_star: f64, dt: f64) -> Result<f64> {
    check(risks, records)?;
    let horizon = t_star + dt;
    let g = km_censoring_survivor(records);
    let g_star = g.at(t_star);
    let mut cases = Vec::new();
    let mut controls = Vec::new();
    for i in at_risk(records, t_star) {
        let r = records[i];
        if r.event && r.time > t_star && r.time <= horizon {
            let gi = g.before(r.time);
            if gi == 0.0 {
                return Err(Error::Degenerate(format!("censoring survivor is 0 before case time {}", r.time)));
            }
            cases.push((finite(risks[i], i)?, g_star / gi));
        } else if r.time > horizon {
            controls.push(finite(risks[i], i)?);
        }
    }
    if cases.is_empty() || controls.is_empty() {
        return Err(Error::Undefined(format!(
            "{} cases and {} controls in the window",
            cases.len(),
            controls.len()
        )));
    }
    let g_h = g.at(horizon);
    if g_h == 0.0 {
        return Err(Error::Degenerate("censoring survivor is 0 at the horizon".into()));
    }
    let control_weight = g_star / g_h;
    let (mut num, mut den) = (0.0, 0.0);
    for &(ri, wi) in &cases {
        for &rj in &controls {
            num += wi * control_weight * concordance(ri, rj);
            den += wi * control_weight;
        }
    }
    Ok(num / den)
}

/// Concordance over pairs `(i, j)` at risk at `t*` where `i` has an observed
/// event in the window and `T_i < T_j`.
pub fn time_dependent_cindex(risks: &[f64], records: &[SurvivalRecord], t_star: f64, dt: f64) -> Result<f64> {
    check(risks, records)?;
    let horizon = t_star + dt;
    let cohort: Vec<usize> = at_risk(records, t_star).collect();
    let (mut num, mut pairs) = (0.0, 0usize);
    for &i in &cohort {
        let ri = records[i];
        if !(ri.event && ri.time > t_star && ri.time <= horizon) {
            continue;
        }
        for &j in &cohort {
            if records[j].time > ri.time {
                num += concordance(finite(risks[i], i)?, finite(risks[j], j)?);
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::Undefined("no usable pairs".into()));
    }
    Ok(num / pairs as f64)
}

/// IPCW Brier score of predicted `P(T > t* + dt | T > t*)`.
pub fn brier_score(survival: &[f64], records: &[SurvivalRecord], t_star: f64, dt: f64) -> Result<f64> {
    check(survival, records)?;
    let horizon = t_star + dt;
    let g = km_censoring_survivor(records);
    let g_star = g.at(t_star);
    let (mut total, mut n) = (0.0, 0usize);
    for i in at_risk(records, t_star) {
        let r = records[i];
        let s = finite(survival[i], i)?;
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Input(format!("survival prediction {s} outside [0, 1]")));
        }
        n += 1;
        let (weight, outcome) = if r.time > horizon {
            (g.at(horizon), 1.0)
        } else if r.event {
            (g.before(r.time), 0.0)
        } else {
            continue;
        };
        if weight == 0.0 {
            return Err(Error::Degenerate("censoring survivor is 0 where a weight is needed".into()));
        }
        total += g_star / weight * (outcome - s).powi(2);
    }
    if n == 0 {
        return Err(Error::Undefined("nobody at risk at the landmark".into()));
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(v: &[(f64, bool)]) -> Vec<SurvivalRecord> {
        v.iter().map(|&(t, e)| SurvivalRecord::new(t, e)).collect()
    }

    #[test]
    fn km_examples() {
        let g = km_censoring_survivor(&recs(&[(0.2, true), (0.5, true), (0.9, true)]));
        assert_eq!(g.at(0.95), 1.0);
        let g = km_censoring_survivor(&recs(&[(0.5, false)]));
        assert_eq!(g.at(0.49), 1.0);
        assert_eq!(g.at(0.5), 0.0);
        assert_eq!(g.before(0.5), 1.0);

        // censorings at 0.2 (4 at risk) and 0.6 (2 at risk)
        let g = km_censoring_survivor(&recs(&[(0.2, false), (0.4, true), (0.6, false), (0.8, true)]));
        assert_eq!(g.times, vec![0.2, 0.6]);
        assert_eq!(g.values, vec![0.75, 0.375]);
        assert_eq!(g.at(0.7), 0.375);
    }

    #[test]
    fn auc_extremes() {
        let r = recs(&[(0.15, true), (0.18, true), (0.5, false), (0.6, true), (0.05, true)]);
        assert_eq!(time_dependent_auc(&[2.0, 3.0, 0.0, 1.0, f64::NAN], &r, 0.1, 0.1).unwrap(), 1.0);
        assert_eq!(time_dependent_auc(&[1.0; 5], &r, 0.1, 0.1).unwrap(), 0.5);
        assert_eq!(time_dependent_auc(&[0.0, 0.0, 1.0, 1.0, 0.0], &r, 0.1, 0.1).unwrap(), 0.0);
        assert!(matches!(time_dependent_auc(&[0.0; 5], &r, 0.1, 0.9), Err(Error::Undefined(_))));
    }

    #[test]
    fn cindex_extremes() {
        let r = recs(&[(0.15, true), (0.18, true), (0.5, false), (0.6, true)]);
        assert_eq!(time_dependent_cindex(&[4.0, 3.0, 2.0, 1.0], &r, 0.1, 0.1).unwrap(), 1.0);
        assert_eq!(time_dependent_cindex(&[1.0, 2.0, 3.0, 4.0], &r, 0.1, 0.1).unwrap(), 0.0);
        assert!(time_dependent_cindex(&[0.0; 4], &recs(&[(0.5, false); 4]), 0.1, 0.1).is_err());
    }

    #[test]
    fn brier_examples() {
        let r = recs(&[(0.15, true), (0.18, true), (0.5, true), (0.6, true)]);
        assert_eq!(brier_score(&[0.0, 0.0, 1.0, 1.0], &r, 0.1, 0.1).unwrap(), 0.0);
        assert_eq!(brier_score(&[0.5; 4], &r, 0.1, 0.1).unwrap(), 0.25);
        // censored inside the window counts in the denominator with weight 0
        let c = recs(&[(0.15, false), (0.18, true), (0.5, true), (0.6, true)]);
        let g = km_censoring_survivor(&c);
        let expect = (g.at(0.1) / g.before(0.18) * 0.25 + 2.0 * g.at(0.1) / g.at(0.2) * 0.25) / 4.0;
        assert!((brier_score(&[0.5; 4], &c, 0.1, 0.1).unwrap() - expect).abs() < 1e-15);
    }
}
