//! Cox partial likelihood (Breslow ties), elastic-net penalty, Breslow
//! baseline hazard and survival predictions.

use std::cmp::Ordering;
use std::fs;
use std::io::Write;
use std::path::Path;

use tensor::{Gradients, ParameterStore};

use crate::data::{months_to_standard, standard_to_months, SurvivalRecord};
use crate::error::{Error, Result};
use crate::model::is_weight;

fn check_lengths(risks: &[f64], records: &[SurvivalRecord]) -> Result<()> {
    if risks.len() != records.len() {
        return Err(Error::Input(format!(
            "{} risks for {} records",
            risks.len(),
            records.len()
        )));
    }
    if risks.iter().any(|r| !r.is_finite()) {
        return Err(Error::Input("non-finite risk score".into()));
    }
    Ok(())
}

/// Indices sorted by time, latest first.
fn by_time_desc(records: &[SurvivalRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| records[b].time.partial_cmp(&records[a].time).unwrap_or(Ordering::Equal));
    order
}

/// Running log-sum-exp.
#[derive(Clone, Copy)]
struct LogSum {
    max: f64,
    sum: f64,
}

impl LogSum {
    fn new() -> Self {
        Self { max: f64::NEG_INFINITY, sum: 0.0 }
    }

    fn push(&mut self, x: f64) {
        if x <= self.max {
            self.sum += (x - self.max).exp();
        } else {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    fn value(&self) -> f64 {
        self.max + self.sum.ln()
    }
}

/// For each patient, `log sum_{k: T_k >= T_i} exp(r_k)`.
fn log_risk_sets(risks: &[f64], records: &[SurvivalRecord]) -> Vec<f64> {
    let order = by_time_desc(records);
    let mut out = vec![0.0; risks.len()];
    let mut acc = LogSum::new();
    let mut i = 0;
    while i < order.len() {
        let t = records[order[i]].time;
        let mut j = i;
        while j < order.len() && records[order[j]].time == t {
            acc.push(risks[order[j]]);
            j += 1;
        }
        let v = acc.value();
        for &k in &order[i..j] {
            out[k] = v;
        }
        i = j;
    }
    out
}

/// `(1/n_I) sum_{i: delta_i = 1} [log sum_{k in R_i} exp(r_k) - r_i]`.
pub fn neg_log_partial_likelihood(risks: &[f64], records: &[SurvivalRecord]) -> Result<f64> {
    check_lengths(risks, records)?;
    let events = records.iter().filter(|r| r.event).count();
    if events == 0 {
        return Err(Error::NoEvents);
    }
    let lse = log_risk_sets(risks, records);
    let total: f64 = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.event)
        .map(|(i, _)| lse[i] - risks[i])
        .sum();
    Ok(total / events as f64)
}

/// Loss value and its gradient with respect to each risk score.
pub fn partial_likelihood_with_grad(risks: &[f64], records: &[SurvivalRecord]) -> Result<(f64, Vec<f64>)> {
    let loss = neg_log_partial_likelihood(risks, records)?;
    let n_events = records.iter().filter(|r| r.event).count() as f64;
    let lse = log_risk_sets(risks, records);

    // d/dr_k = (1/n_I) [ sum_{i event, T_i <= T_k} exp(r_k - lse_i) - delta_k ]
    let mut order = by_time_desc(records);
    order.reverse();
    let mut grad = vec![0.0; risks.len()];
    let mut weights: Vec<f64> = Vec::new(); // lse of each event seen so far
    let mut i = 0;
    while i < order.len() {
        let t = records[order[i]].time;
        let mut j = i;
        while j < order.len() && records[order[j]].time == t {
            if records[order[j]].event {
                weights.push(lse[order[j]]);
            }
            j += 1;
        }
        for &k in &order[i..j] {
            let s: f64 = weights.iter().map(|l| (risks[k] - l).exp()).sum();
            grad[k] = (s - f64::from(u8::from(records[k].event))) / n_events;
        }
        i = j;
    }
    Ok((loss, grad))
}

/// `lambda * (alpha * sum|w| + (1 - alpha) * sum w^2)` over weight matrices.
pub fn elastic_net_penalty(params: &ParameterStore, lambda: f64, alpha: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let (mut l1, mut l2) = (0.0, 0.0);
    for (_, t) in params.iter().filter(|(n, _)| is_weight(n)) {
        for &w in t.data() {
            l1 += w.abs();
            l2 += w * w;
        }
    }
    lambda * (alpha * l1 + (1.0 - alpha) * l2)
}

/// Adds the penalty (sub)gradient to `grads`; the L1 part uses 0 at `w = 0`.
pub fn add_penalty_gradient(params: &ParameterStore, lambda: f64, alpha: f64, grads: &mut Gradients) -> Result<()> {
    if lambda == 0.0 {
        return Ok(());
    }
    for (name, t) in params.iter().filter(|(n, _)| is_weight(n)) {
        let g = grads
            .get_mut(name)
            .ok_or_else(|| Error::Input(format!("no gradient for {name}")))?;
        for (gv, &w) in g.data_mut().iter_mut().zip(t.data()) {
            let sign = if w > 0.0 {
                1.0
            } else if w < 0.0 {
                -1.0
            } else {
                0.0
            };
            *gv += lambda * (alpha * sign + 2.0 * (1.0 - alpha) * w);
        }
    }
    Ok(())
}

/// Breslow estimate of the baseline hazard at each distinct event time.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineHazard {
    pub times: Vec<f64>,
    pub events: Vec<usize>,
    pub increments: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl BaselineHazard {
    /// `H0(t) = sum_{t_k <= t} h0(t_k)`; right-continuous.
    pub fn cumulative_at(&self, t: f64) -> f64 {
        let n = self.times.partition_point(|&tk| tk <= t);
        if n == 0 {
            0.0
        } else {
            self.cumulative[n - 1]
        }
    }

    pub fn baseline_survival(&self, t: f64) -> f64 {
        (-self.cumulative_at(t)).exp()
    }

    /// CSV with columns `t, d_k, h0_increment, H0_cum`; `t` in months.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for k in 0..self.times.len() {
            w.write_record([
                standard_to_months(self.times[k]).to_string(),
                self.events[k].to_string(),
                self.increments[k].to_string(),
                self.cumulative[k].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<breslow csv>", e))?;
        Ok(())
    }

    /// Inverse of [`BaselineHazard::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let bad = |line: usize, message: String| Error::Format { path: path.to_path_buf(), line, message };
        if reader.headers()?.iter().ne(CSV_HEADER) {
            return Err(bad(1, "unexpected baseline hazard header".into()));
        }
        let mut table = BaselineHazard { times: Vec::new(), events: Vec::new(), increments: Vec::new(), cumulative: Vec::new() };
        for (k, record) in reader.records().enumerate() {
            let line = k + 2;
            let record = record.map_err(|e| bad(line, e.to_string()))?;
            let num = |i: usize| {
                record
                    .get(i)
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(line, format!("column {} is not a number", CSV_HEADER[i])))
            };
            let t = months_to_standard(num(0)?);
            let d = record
                .get(1)
                .and_then(|v| v.parse::<usize>().ok())
                .ok_or_else(|| bad(line, "d_k is not a count".into()))?;
            let (h, cum) = (num(2)?, num(3)?);
            if table.times.last().is_some_and(|&prev| prev >= t) || table.cumulative.last().is_some_and(|&prev| prev > cum) {
                return Err(bad(line, "times and cumulative hazard must increase".into()));
            }
            table.times.push(t);
            table.events.push(d);
            table.increments.push(h);
            table.cumulative.push(cum);
        }
        Ok(table)
    }
}

const CSV_HEADER: [&str; 4] = ["t", "d_k", "h0_increment", "H0_cum"];

pub fn breslow_baseline(risks: &[f64], records: &[SurvivalRecord]) -> Result<BaselineHazard> {
    check_lengths(risks, records)?;
    if !records.iter().any(|r| r.event) {
        return Err(Error::NoEvents);
    }
    let lse = log_risk_sets(risks, records);
    let mut event_times: Vec<f64> = records.iter().filter(|r| r.event).map(|r| r.time).collect();
    event_times.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    event_times.dedup();

    let mut table = BaselineHazard {
        times: Vec::with_capacity(event_times.len()),
        events: Vec::new(),
        increments: Vec::new(),
        cumulative: Vec::new(),
    };
    let mut total = 0.0;
    for t in event_times {
        let members: Vec<usize> = (0..records.len()).filter(|&i| records[i].time == t).collect();
        let d = members.iter().filter(|&&i| records[i].event).count();
        let h = d as f64 * (-lse[members[0]]).exp();
        total += h;
        table.times.push(t);
        table.events.push(d);
        table.increments.push(h);
        table.cumulative.push(total);
    }
    Ok(table)
}

/// Eq. 1: `exp(-H0(t) exp(r))`.
pub fn survival_probability(risk: f64, t: f64, table: &BaselineHazard) -> f64 {
    (-table.cumulative_at(t) * risk.exp()).exp()
}

/// Eq. 3: `(S0(t* + dt) / S0(t*))^exp(r)`.
pub fn dynamic_survival(risk: f64, t_star: f64, dt: f64, table: &BaselineHazard) -> Result<f64> {
    if !(dt >= 0.0) {
        return Err(Error::Input(format!("negative increment {dt}")));
    }
    let s_start = table.baseline_survival(t_star);
    if s_start == 0.0 {
        return Err(Error::Degenerate(format!("baseline survival is 0 at t* = {t_star}")));
    }
    let s_end = table.baseline_survival(t_star + dt);
    Ok((s_end / s_start).powf(risk.exp()))
}
