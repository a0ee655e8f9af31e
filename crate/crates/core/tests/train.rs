mod common;

use common::subject;
use longsurv::data::{landmark, Image, ImageSequence, Subject, SurvivalRecord};
use longsurv::model::{is_weight, Model, ModelConfig};
use longsurv::nn::Mode;
use longsurv::train::{loss_and_gradient, prepare, train, train_with, write_trace, TrainConfig};
use longsurv::Error;

fn small() -> ModelConfig {
    ModelConfig {
        patches: 16,
        dim: 8,
        heads: 2,
        vision_layers: 1,
        sequence_layers: 1,
        ffn_dim: 16,
        survival_hidden: 8,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        patience: 0,
        landmark: 0.0,
        validation_fraction: 0.0,
        lambda: 0.0,
        ..TrainConfig::default()
    }
}

fn cohort(n: usize) -> Vec<Subject> {
    (0..n)
        .map(|i| subject(&format!("p{i}"), 16, 2, 0.1 + 0.8 * i as f64 / n as f64, i % 3 != 2, i as u64))
        .collect()
}

#[test]
fn two_identical_patients() {
    let model = Model::new(small()).unwrap();
    let a = subject("a", 16, 2, 0.4, true, 7);
    let mut b = a.clone();
    b.sequence.id = "b".into();
    b.record = SurvivalRecord::new(0.7, false);
    let subjects = vec![a, b];
    let prepared = prepare(&model, &landmark(&subjects, 0.0)).unwrap();
    let (nll, penalty, grads) = loss_and_gradient(&model, &prepared, 0.0, 0.5, &mut Mode::Eval).unwrap();
    assert!((nll - 2f64.ln()).abs() < 1e-12);
    assert_eq!(penalty, 0.0);
    assert!(grads.get("survival.b2").unwrap().data()[0].abs() < 1e-15);
    for (name, g) in grads.iter() {
        assert!(g.data().iter().all(|v| v.abs() < 1e-12), "{name}");
    }
}

#[test]
fn heavy_penalty_shrinks_every_weight() {
    let config = TrainConfig { lambda: 1e3, alpha: 0.5, learning_rate: 5e-4, ..quick(2000) };
    let fitted = train(&cohort(6), &small(), &config).unwrap();
    for (name, t) in fitted.model.params.iter() {
        if is_weight(name) {
            let worst = t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(worst < 1e-3, "{name}: {worst}");
        }
    }
}

/// One bright pixel whose value orders the event times: brighter fails first.
fn separable(n: usize) -> Vec<Subject> {
    (0..n)
        .map(|i| {
            let mut im = Image::filled(16, 16, 0.0);
            im.set(5, 9, 1.0 - i as f64 / n as f64);
            let seq = ImageSequence::new(format!("s{i}"), vec![0.0], vec![im], vec![]).unwrap();
            Subject {
                sequence: seq,
                record: SurvivalRecord::new(0.1 + 0.8 * i as f64 / n as f64, true),
                true_risk: None,
            }
        })
        .collect()
}

#[test]
fn separable_cohort_approaches_zero_loss() {
    let subjects = separable(8);
    let config = TrainConfig { learning_rate: 1e-2, ..quick(300) };
    let fitted = train(&subjects, &small(), &config).unwrap();
    let losses: Vec<f64> = fitted.trace.iter().map(|r| r.train_loss).collect();
    // perfectly ordered risks drive every term log(sum exp) - r to zero
    assert!(losses[0] > 1.0);
    assert!(*losses.last().unwrap() < 0.05, "{:?}", losses.last());
    let warm = 50;
    let blocks: Vec<f64> = losses[warm..].chunks(25).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    assert!(blocks.windows(2).all(|w| w[1] <= w[0]), "{blocks:?}");
    let r: Vec<f64> = subjects.iter().map(|s| fitted.model.risk_score(&s.sequence, 1).unwrap()).collect();
    assert!(r.windows(2).all(|w| w[0] > w[1]), "{r:?}");
}

#[test]
fn training_is_deterministic() {
    let subjects = cohort(10);
    let model = ModelConfig { dropout: 0.2, ..small() };
    let config = TrainConfig { validation_fraction: 0.3, patience: 3, ..quick(12) };
    let a = train(&subjects, &model, &config).unwrap();
    let b = train(&subjects, &model, &config).unwrap();
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.baseline, b.baseline);
    let mut seen = 0;
    let c = train_with(&subjects, &model, &config, |_| seen += 1).unwrap();
    assert_eq!(seen, c.trace.len());
    assert!(a.trace.iter().all(|r| r.val_loss.is_some()));
    assert!(a.best_epoch < a.trace.len());
}

#[test]
fn trace_csv_layout() {
    let fitted = train(&cohort(5), &small(), &quick(3)).unwrap();
    let mut buf = Vec::new();
    write_trace(&fitted.trace, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss,penalty");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,"));
}

#[test]
fn landmark_must_leave_patients_and_events() {
    let subjects = cohort(6);
    let late = TrainConfig { landmark: 0.95, ..quick(2) };
    assert!(matches!(train(&subjects, &small(), &late), Err(Error::InsufficientData(_))));
    let censored: Vec<Subject> = subjects
        .into_iter()
        .map(|mut s| {
            s.record.event = false;
            s
        })
        .collect();
    assert!(matches!(train(&censored, &small(), &quick(2)), Err(Error::InsufficientData(_))));
}

#[test]
fn runaway_learning_rate_reports_epoch() {
    let config = TrainConfig { learning_rate: 1e300, ..quick(50) };
    match train(&separable(6), &small(), &config) {
        Err(Error::Diverged { epoch, .. }) => assert!(epoch < 50),
        other => panic!("expected divergence, got {:?}", other.map(|f| f.trace.len())),
    }
}
