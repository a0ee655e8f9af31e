//! Full-batch training on the regularized Cox objective.
//!
//! Each epoch runs one forward pass per patient, evaluates the partial
//! likelihood over the whole cohort (so risk sets are exact), then
//! back-propagates each patient's tape seeded with `dL/dr_i` and sums the
//! parameter gradients in patient order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tensor::{Adam, Gradients, Tape, Tensor, TensorError};

use crate::cox::{add_penalty_gradient, breslow_baseline, elastic_net_penalty, partial_likelihood_with_grad, BaselineHazard};
use crate::data::{landmark, Landmarked, Subject, SurvivalRecord};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::Mode;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping; 0 never stops.
    pub patience: usize,
    /// Landmark time t* (standardized).
    pub landmark: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            alpha: 0.5,
            learning_rate: 1e-3,
            epochs: 200,
            patience: 20,
            landmark: 0.1,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda {} is negative", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation fraction outside [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.landmark) {
            return Err(Error::Config(format!("landmark {} outside [0, 1]", self.landmark)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub penalty: f64,
}

#[derive(Debug, Clone)]
pub struct Fitted {
    pub model: Model,
    pub baseline: BaselineHazard,
    pub trace: Vec<TraceRow>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// A landmarked patient ready for the network.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub patches: Vec<Tensor>,
    pub covariates: Vec<f64>,
    pub record: SurvivalRecord,
}

pub fn prepare(model: &Model, cohort: &[Landmarked<'_>]) -> Result<Vec<Prepared>> {
    cohort
        .iter()
        .map(|l| {
            Ok(Prepared {
                patches: model.prepare(&l.subject.sequence, l.visits)?,
                covariates: l.subject.sequence.covariates.clone(),
                record: l.subject.record,
            })
        })
        .collect()
}

pub fn risks(model: &Model, cohort: &[Prepared]) -> Result<Vec<f64>> {
    cohort
        .iter()
        .map(|p| model.risk_prepared(&p.patches, &p.covariates))
        .collect()
}

fn records(cohort: &[Prepared]) -> Vec<SurvivalRecord> {
    cohort.iter().map(|p| p.record).collect()
}

/// Objective value (partial likelihood + penalty) and its gradient.
pub fn loss_and_gradient(
    model: &Model,
    cohort: &[Prepared],
    lambda: f64,
    alpha: f64,
    mode: &mut Mode<'_>,
) -> Result<(f64, f64, Gradients)> {
    let mut tapes = Vec::with_capacity(cohort.len());
    let mut risk = Vec::with_capacity(cohort.len());
    for p in cohort {
        let mut tape = Tape::new();
        let root = model.risk_on_tape(&mut tape, &p.patches, &p.covariates, mode)?;
        risk.push(tape.value(root).item()?);
        tapes.push((tape, root));
    }
    let (nll, d_risk) = partial_likelihood_with_grad(&risk, &records(cohort))?;
    let mut grads = Gradients::zeros_like(&model.params);
    for ((tape, root), g) in tapes.iter().zip(d_risk) {
        if g != 0.0 {
            grads.accumulate(&tape.backward_scaled(*root, g)?)?;
        }
    }
    let penalty = elastic_net_penalty(&model.params, lambda, alpha);
    add_penalty_gradient(&model.params, lambda, alpha, &mut grads)?;
    Ok((nll, penalty, grads))
}

/// Stratified hold-out: the same fraction of events and of censored
/// patients, at least one event whenever there are two or more.
fn split(cohort: &[Prepared], fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    if fraction == 0.0 {
        return ((0..cohort.len()).collect(), Vec::new());
    }
    let mut events: Vec<usize> = (0..cohort.len()).filter(|&i| cohort[i].record.event).collect();
    let mut censored: Vec<usize> = (0..cohort.len()).filter(|&i| !cohort[i].record.event).collect();
    events.shuffle(rng);
    censored.shuffle(rng);
    let n_events = if events.len() >= 2 {
        ((events.len() as f64 * fraction).round() as usize).clamp(1, events.len() - 1)
    } else {
        0
    };
    let n_censored = (censored.len() as f64 * fraction).round() as usize;
    let mut val: Vec<usize> = events[..n_events].iter().chain(&censored[..n_censored]).copied().collect();
    let mut fit: Vec<usize> = events[n_events..].iter().chain(&censored[n_censored..]).copied().collect();
    val.sort_unstable();
    fit.sort_unstable();
    if n_events == 0 {
        fit.extend(val.drain(..));
        fit.sort_unstable();
    }
    (fit, val)
}

fn diverged(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Tensor(TensorError::NonFinite(op)) => Error::Diverged { epoch, detail: format!("non-finite value in {op}") },
        Error::Input(msg) if msg.contains("non-finite") => Error::Diverged { epoch, detail: msg },
        other => other,
    }
}

pub fn train(subjects: &[Subject], model_config: &ModelConfig, config: &TrainConfig) -> Result<Fitted> {
    train_with(subjects, model_config, config, |_| {})
}

/// [`train`] reporting each trace row to `observe` as it is produced.
pub fn train_with(
    subjects: &[Subject],
    model_config: &ModelConfig,
    config: &TrainConfig,
    mut observe: impl FnMut(&TraceRow),
) -> Result<Fitted> {
    config.validate()?;
    let mut model = Model::new(model_config.clone())?;
    let cohort = landmark(subjects, config.landmark);
    if cohort.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} patients event-free at the landmark",
            cohort.len()
        )));
    }
    if !cohort.iter().any(|l| l.subject.record.event) {
        return Err(Error::InsufficientData("no events after the landmark".into()));
    }
    let prepared = prepare(&model, &cohort)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (fit_idx, val_idx) = split(&prepared, config.validation_fraction, &mut rng);
    let fit: Vec<Prepared> = fit_idx.iter().map(|&i| prepared[i].clone()).collect();
    let val: Vec<Prepared> = val_idx.iter().map(|&i| prepared[i].clone()).collect();
    let val_records = records(&val);

    let mut adam = Adam::new(config.learning_rate);
    let mut trace = Vec::with_capacity(config.epochs);
    let mut best = (f64::INFINITY, 0usize, model.params.clone());

    for epoch in 0..config.epochs {
        let mut mode = if model.config.dropout > 0.0 {
            Mode::Train { dropout: model.config.dropout, rng: &mut rng }
        } else {
            Mode::Eval
        };
        let (nll, penalty, grads) =
            loss_and_gradient(&model, &fit, config.lambda, config.alpha, &mut mode).map_err(diverged(epoch))?;
        if !nll.is_finite() {
            return Err(Error::Diverged { epoch, detail: "loss is not finite".into() });
        }

        // validation loss of the parameters this epoch started from
        let val_loss = if val.is_empty() {
            None
        } else {
            let r = risks(&model, &val).map_err(diverged(epoch))?;
            Some(crate::cox::neg_log_partial_likelihood(&r, &val_records).map_err(diverged(epoch))?)
        };
        let row = TraceRow { epoch, train_loss: nll, val_loss, penalty };
        observe(&row);
        trace.push(row);

        if let Some(v) = val_loss {
            if v < best.0 {
                best = (v, epoch, model.params.clone());
            } else if config.patience > 0 && epoch - best.1 >= config.patience {
                break;
            }
        }
        adam.step(&mut model.params, &grads)?;
        if model.params.iter().any(|(_, t)| !t.is_finite()) {
            return Err(Error::Diverged { epoch, detail: "parameters became non-finite".into() });
        }
    }

    let best_epoch = if val.is_empty() {
        trace.len()
    } else {
        model.params = best.2;
        best.1
    };
    let all = risks(&model, &prepared)?;
    let baseline = breslow_baseline(&all, &records(&prepared))?;
    Ok(Fitted { model, baseline, trace, best_epoch })
}

/// Landmark risks of `subjects` under `model`, in input order; subjects not
/// at risk at the landmark get `None`.
pub fn landmark_risks(model: &Model, subjects: &[Subject], t_star: f64) -> Result<Vec<Option<f64>>> {
    subjects
        .iter()
        .map(|s| {
            if s.record.time < t_star {
                return Ok(None);
            }
            let visits = s.sequence.visits_by(t_star);
            if visits == 0 {
                return Ok(None);
            }
            model.risk_score(&s.sequence, visits).map(Some)
        })
        .collect()
}

/// Trace as CSV: `epoch, train_loss, val_loss, penalty` (empty when no
/// validation split).
pub fn write_trace<W: std::io::Write>(trace: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "val_loss", "penalty"])?;
    for row in trace {
        w.write_record([
            row.epoch.to_string(),
            row.train_loss.to_string(),
            row.val_loss.map(|v| v.to_string()).unwrap_or_default(),
            row.penalty.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<trace csv>", e))?;
    Ok(())
}
