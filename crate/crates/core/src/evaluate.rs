//! K-fold landmark cross-validation and report export.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cox::{breslow_baseline, dynamic_survival, BaselineHazard};
use crate::data::{landmark, months_to_standard, Subject, SurvivalRecord};
use crate::error::{Error, Result};
use crate::fpca::FpcaCox;
use crate::metrics::{brier_score, time_dependent_auc, time_dependent_cindex, window_counts, WindowCounts};
use crate::model::ModelConfig;
use crate::train::{landmark_risks, train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub t_star_months: f64,
    pub dt_months: f64,
}

impl Scenario {
    pub fn new(t_star_months: f64, dt_months: f64) -> Self {
        Self { t_star_months, dt_months }
    }

    /// The 3 x 3 grid t* in {12, 18, 24}, dt in {12, 24, 48} months.
    pub fn standard_grid() -> Vec<Scenario> {
        let mut out = Vec::new();
        for t in [12.0, 18.0, 24.0] {
            for dt in [12.0, 24.0, 48.0] {
                out.push(Scenario::new(t, dt));
            }
        }
        out
    }
}

/// Held-out predictions of one method fitted on one training fold.
#[derive(Debug, Clone)]
pub struct FoldFit {
    /// Landmark risk per test patient; `None` when not at risk.
    pub risks: Vec<Option<f64>>,
    pub baseline: Option<BaselineHazard>,
}

pub trait Method {
    fn name(&self) -> &str;
    fn fit(&self, train: &[Subject], test: &[Subject], t_star: f64, seed: u64) -> Result<FoldFit>;
}

/// Generating risks of simulated patients.
pub struct Oracle;

fn true_risks(subjects: &[Subject]) -> Result<Vec<f64>> {
    subjects
        .iter()
        .map(|s| {
            s.true_risk
                .ok_or_else(|| Error::Input(format!("patient {} has no generating risk", s.id())))
        })
        .collect()
}

impl Method for Oracle {
    fn name(&self) -> &str {
        "oracle"
    }

    fn fit(&self, train: &[Subject], test: &[Subject], t_star: f64, _seed: u64) -> Result<FoldFit> {
        let cohort = landmark(train, t_star);
        let fit_risks = cohort
            .iter()
            .map(|l| l.subject.true_risk.ok_or_else(|| Error::Input("missing generating risk".into())))
            .collect::<Result<Vec<_>>>()?;
        let records: Vec<SurvivalRecord> = cohort.iter().map(|l| l.subject.record).collect();
        let baseline = breslow_baseline(&fit_risks, &records).ok();
        let all = true_risks(test)?;
        let risks = test
            .iter()
            .zip(all)
            .map(|(s, r)| (s.record.time >= t_star).then_some(r))
            .collect();
        Ok(FoldFit { risks, baseline })
    }
}

pub struct FpcaCoxMethod {
    pub pve_target: f64,
}

impl Method for FpcaCoxMethod {
    fn name(&self) -> &str {
        "fpca-cox"
    }

    fn fit(&self, train: &[Subject], test: &[Subject], t_star: f64, _seed: u64) -> Result<FoldFit> {
        let model = FpcaCox::fit(train, t_star, self.pve_target)?;
        let risks = test
            .iter()
            .map(|s| {
                let visits = s.sequence.visits_by(t_star);
                if s.record.time < t_star || visits == 0 {
                    Ok(None)
                } else {
                    model.risk(&s.sequence, visits).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FoldFit { risks, baseline: Some(model.baseline) })
    }
}

pub struct Transformer {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub const TRANSFORMER: &str = "surlonformer";

impl Method for Transformer {
    fn name(&self) -> &str {
        TRANSFORMER
    }

    fn fit(&self, train_set: &[Subject], test: &[Subject], t_star: f64, seed: u64) -> Result<FoldFit> {
        let model_config = ModelConfig { seed, ..self.model.clone() };
        let train_config = TrainConfig { landmark: t_star, seed: seed ^ 0x5eed, ..self.train.clone() };
        let fitted = train(train_set, &model_config, &train_config)?;
        let risks = landmark_risks(&fitted.model, test, t_star)?;
        Ok(FoldFit { risks, baseline: Some(fitted.baseline) })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub scenario: Scenario,
    pub method: String,
    pub run: usize,
    pub fold: usize,
    pub auc: Option<f64>,
    pub cindex: Option<f64>,
    pub brier: Option<f64>,
    pub counts: WindowCounts,
}

/// Fold index of each patient: a seeded shuffle dealt round-robin.
pub fn assign_folds(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = pos % folds;
    }
    out
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Undefined(_)) | Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Scores each method on each scenario with patient-level k-fold CV.
///
/// A method that cannot be fitted on a fold for lack of data leaves that
/// fold's scenarios missing; numerical failures abort.
pub fn cross_validate(
    subjects: &[Subject],
    folds: usize,
    scenarios: &[Scenario],
    methods: &[&dyn Method],
    seed: u64,
    run: usize,
    mut progress: impl FnMut(&FoldResult),
) -> Result<Vec<FoldResult>> {
    if folds < 2 {
        return Err(Error::Config(format!("{folds} folds; need at least 2")));
    }
    if subjects.len() < folds {
        return Err(Error::InsufficientData(format!("{} patients for {folds} folds", subjects.len())));
    }
    let assignment = assign_folds(subjects.len(), folds, seed);
    let landmarks: BTreeSet<u64> = scenarios.iter().map(|s| s.t_star_months.to_bits()).collect();
    let mut out = Vec::new();
    for fold in 0..folds {
        let train_set: Vec<Subject> = (0..subjects.len())
            .filter(|&i| assignment[i] != fold)
            .map(|i| subjects[i].clone())
            .collect();
        let test: Vec<Subject> = (0..subjects.len())
            .filter(|&i| assignment[i] == fold)
            .map(|i| subjects[i].clone())
            .collect();
        let records: Vec<SurvivalRecord> = test.iter().map(|s| s.record).collect();
        for &bits in &landmarks {
            let t_star_months = f64::from_bits(bits);
            let t_star = months_to_standard(t_star_months);
            for method in methods {
                let fold_seed = seed
                    .wrapping_mul(1_000_003)
                    .wrapping_add((run as u64) << 32)
                    .wrapping_add(fold as u64 * 7919 + bits % 1009);
                let fit = match method.fit(&train_set, &test, t_star, fold_seed) {
                    Ok(f) => Some(f),
                    Err(Error::InsufficientData(_)) | Err(Error::NoEvents) | Err(Error::Degenerate(_)) => None,
                    Err(e) => return Err(e),
                };
                for scenario in scenarios.iter().filter(|s| s.t_star_months.to_bits() == bits) {
                    let dt = months_to_standard(scenario.dt_months);
                    let counts = window_counts(&records, t_star, dt);
                    let mut result = FoldResult {
                        scenario: *scenario,
                        method: method.name().to_string(),
                        run,
                        fold,
                        auc: None,
                        cindex: None,
                        brier: None,
                        counts,
                    };
                    if let Some(fit) = &fit {
                        let risks: Vec<f64> = fit.risks.iter().map(|r| r.unwrap_or(f64::NAN)).collect();
                        result.auc = defined(time_dependent_auc(&risks, &records, t_star, dt))?;
                        result.cindex = defined(time_dependent_cindex(&risks, &records, t_star, dt))?;
                        if let Some(table) = &fit.baseline {
                            let survival = fit
                                .risks
                                .iter()
                                .map(|r| match r {
                                    Some(r) => dynamic_survival(*r, t_star, dt, table),
                                    None => Ok(f64::NAN),
                                })
                                .collect::<Result<Vec<_>>>();
                            result.brier = match survival {
                                Ok(s) => defined(brier_score(&s, &records, t_star, dt))?,
                                Err(Error::Degenerate(_)) => None,
                                Err(e) => return Err(e),
                            };
                        }
                    }
                    progress(&result);
                    out.push(result);
                }
            }
        }
    }
    Ok(out)
}

/// Mean and sample standard deviation of the defined values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
}

pub fn summarize(values: impl IntoIterator<Item = Option<f64>>) -> Summary {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    let n = v.len();
    if n == 0 {
        return Summary { mean: None, sd: None, n };
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    Summary { mean: Some(mean), sd, n }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: Scenario,
    pub method: String,
    pub auc: Summary,
    pub cindex: Summary,
    pub brier: Summary,
}

/// One row per (scenario, method), in first-seen order; statistics pool all
/// runs and folds.
pub fn aggregate(results: &[FoldResult]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Scenario, String)> = Vec::new();
    for r in results {
        if !keys.iter().any(|(s, m)| *s == r.scenario && *m == r.method) {
            keys.push((r.scenario, r.method.clone()));
        }
    }
    keys.into_iter()
        .map(|(scenario, method)| {
            let rows: Vec<&FoldResult> = results
                .iter()
                .filter(|r| r.scenario == scenario && r.method == method)
                .collect();
            SummaryRow {
                scenario,
                auc: summarize(rows.iter().map(|r| r.auc)),
                cindex: summarize(rows.iter().map(|r| r.cindex)),
                brier: summarize(rows.iter().map(|r| r.brier)),
                method,
            }
        })
        .collect()
}

fn na(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "NA".into())
}

/// Per-fold CSV.
pub fn write_fold_csv<W: Write>(results: &[FoldResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "t_star_months",
        "dt_months",
        "method",
        "run",
        "fold",
        "auc",
        "cindex",
        "brier",
        "at_risk",
        "cases",
        "controls",
    ])?;
    for r in results {
        w.write_record([
            r.scenario.t_star_months.to_string(),
            r.scenario.dt_months.to_string(),
            r.method.clone(),
            r.run.to_string(),
            r.fold.to_string(),
            na(r.auc),
            na(r.cindex),
            na(r.brier),
            r.counts.at_risk.to_string(),
            r.counts.cases.to_string(),
            r.counts.controls.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<fold csv>", e))?;
    Ok(())
}

/// Scenario-by-method table: one row per scenario, an optional `true_auc`
/// column from the oracle method, then mean and sd of each metric per
/// remaining method.
pub fn write_table_csv<W: Write>(summary: &[SummaryRow], out: W) -> Result<()> {
    let mut scenarios: Vec<Scenario> = Vec::new();
    let mut methods: Vec<String> = Vec::new();
    for row in summary {
        if !scenarios.contains(&row.scenario) {
            scenarios.push(row.scenario);
        }
        if row.method != "oracle" && !methods.contains(&row.method) {
            methods.push(row.method.clone());
        }
    }
    let has_oracle = summary.iter().any(|r| r.method == "oracle");
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t_star_months".to_string(), "dt_months".into()];
    if has_oracle {
        header.push("true_auc".into());
    }
    for m in &methods {
        for metric in ["auc", "cindex", "brier"] {
            header.push(format!("{m}_{metric}"));
            header.push(format!("{m}_{metric}_sd"));
        }
    }
    w.write_record(&header)?;
    for s in scenarios {
        let find = |m: &str| summary.iter().find(|r| r.scenario == s && r.method == m);
        let mut row = vec![s.t_star_months.to_string(), s.dt_months.to_string()];
        if has_oracle {
            row.push(na(find("oracle").and_then(|r| r.auc.mean)));
        }
        for m in &methods {
            let r = find(m);
            for pick in [|r: &SummaryRow| r.auc, |r: &SummaryRow| r.cindex, |r: &SummaryRow| r.brier] {
                let stat = r.map(pick);
                row.push(na(stat.and_then(|x| x.mean)));
                row.push(na(stat.and_then(|x| x.sd)));
            }
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<table csv>", e))?;
    Ok(())
}
