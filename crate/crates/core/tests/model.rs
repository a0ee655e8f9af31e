mod common;

use common::{image, subject, wiggle};
use longsurv::data::{landmark, ImageSequence};
use longsurv::model::{init_parameters, is_weight, Model, ModelConfig};
use longsurv::nn::Mode;
use longsurv::train::{loss_and_gradient, prepare};
use proptest::prelude::*;

fn small_config(covariates: usize) -> ModelConfig {
    ModelConfig {
        patches: 16,
        dim: 8,
        heads: 2,
        vision_layers: 1,
        sequence_layers: 1,
        ffn_dim: 16,
        survival_hidden: 8,
        covariates,
        dropout: 0.0,
        seed: 3,
        ..ModelConfig::default()
    }
}

/// Moves every parameter off its initial value so gains and shifts matter.
fn perturbed(config: ModelConfig, seed: u64) -> Model {
    let mut model = Model::new(config).unwrap();
    let mut k = seed;
    for (_, t) in model.params.iter_mut() {
        k += 1;
        let noise = wiggle(k, t.len());
        for (v, n) in t.data_mut().iter_mut().zip(noise) {
            *v += 0.3 * n;
        }
    }
    model
}

#[test]
fn forward_matches_reference_implementation() {
    for (config, visits) in [
        (small_config(0), 3),
        (small_config(2), 1),
        (ModelConfig { vision_layers: 2, sequence_layers: 2, heads: 4, ..small_config(0) }, 4),
    ] {
        let covariates = wiggle(99, config.covariates);
        let model = perturbed(config, 11);
        let images = (0..visits).map(|k| image(16, 40 + k as u64)).collect();
        let times = (0..visits).map(|k| k as f64 * 0.05).collect();
        let seq = ImageSequence::new("a", times, images, covariates).unwrap();
        let got = model.risk_score(&seq, visits).unwrap();
        let want = common::risk(&model, &seq, visits);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        let emb = model.vision_encode(&seq.images[0]).unwrap();
        let want_emb = common::vision(&model, &seq.images[0]);
        for (a, b) in emb.iter().zip(&want_emb) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn hand_computed_risk_with_zero_encoders() {
    // zero attention and FFN weights, unit gains: each layer output is the
    // layer norm of its input, so the summary is LN(LN(cls_l)).
    let mut model = Model::new(small_config(1)).unwrap();
    let names: Vec<String> = model.params.names().map(String::from).collect();
    for name in &names {
        if name.contains(".attn.") || name.contains(".ffn.") {
            model.params.get_mut(name).unwrap().data_mut().fill(0.0);
        }
    }
    let cls = [1.0, -1.0, 2.0, 0.0, 0.5, 0.5, -2.0, 1.0];
    model.params.get_mut("sequence.cls").unwrap().data_mut().copy_from_slice(&cls);
    let w1 = model.params.get_mut("survival.w1").unwrap();
    w1.data_mut().fill(0.0);
    // hidden unit 0 reads summary[2]; hidden unit 1 reads the covariate
    w1.set(2, 0, 1.0);
    w1.set(8, 1, -0.5);
    model.params.get_mut("survival.b1").unwrap().data_mut().fill(0.0);
    let w2 = model.params.get_mut("survival.w2").unwrap();
    w2.data_mut().fill(0.0);
    w2.set(0, 0, 2.0);
    w2.set(1, 0, 1.0);
    model.params.get_mut("survival.b2").unwrap().data_mut()[0] = 0.25;

    let mean = cls.iter().sum::<f64>() / 8.0;
    let var = cls.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
    let once: Vec<f64> = cls.iter().map(|v| (v - mean) / (var + 1e-5).sqrt()).collect();
    let var2 = once.iter().map(|v| v * v).sum::<f64>() / 8.0;
    let s2 = once[2] / (var2 + 1e-5).sqrt();
    let x = 3.0;
    let want = 2.0 * common::erf_gelu(s2) + common::erf_gelu(-0.5 * x) + 0.25;

    let seq = ImageSequence::new("a", vec![0.0, 0.05], vec![image(16, 1), image(16, 2)], vec![x]).unwrap();
    let got = model.risk_score(&seq, 2).unwrap();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");
}

/// Central differences of the full objective against the tape gradient.
#[test]
fn full_loss_gradient_matches_finite_differences() {
    let config = small_config(0);
    let model = perturbed(config, 5);
    let subjects: Vec<_> = [(0.3, true), (0.5, false), (0.6, true), (0.9, true)]
        .iter()
        .enumerate()
        .map(|(i, &(t, e))| subject(&format!("p{i}"), 16, 3, t, e, i as u64 + 1))
        .collect();
    let cohort = prepare(&model, &landmark(&subjects, 0.1)).unwrap();
    let (lambda, alpha) = (1e-2, 0.5);
    let (_, _, grads) = loss_and_gradient(&model, &cohort, lambda, alpha, &mut Mode::Eval).unwrap();
    let objective = |m: &Model| {
        let (nll, pen, _) = loss_and_gradient(m, &cohort, lambda, alpha, &mut Mode::Eval).unwrap();
        nll + pen
    };

    let names: Vec<String> = model.params.names().map(String::from).collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let name = &names[(k * 7) % names.len()];
        let len = model.params.get(name).unwrap().len();
        let idx = (k * 13 + 5) % len;
        let mut up = model.clone();
        up.params.get_mut(name).unwrap().data_mut()[idx] += h;
        let mut down = model.clone();
        down.params.get_mut(name).unwrap().data_mut()[idx] -= h;
        let numeric = (objective(&up) - objective(&down)) / (2.0 * h);
        let analytic = grads.get(name).unwrap().data()[idx];
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn risk_depends_only_on_visits_up_to_landmark() {
    let model = perturbed(small_config(0), 2);
    let a = subject("a", 16, 4, 1.0, false, 8).sequence;
    let mut b = a.clone();
    b.images[3] = image(16, 1234);
    b.images[2] = image(16, 555);
    assert_eq!(model.risk_score(&a, 2).unwrap(), model.risk_score(&b, 2).unwrap());
    assert_ne!(model.risk_score(&a, 3).unwrap(), model.risk_score(&b, 3).unwrap());
}

#[test]
fn glorot_limits_and_small_biases() {
    let config = ModelConfig::default();
    let params = init_parameters(&config, 17).unwrap();
    for (name, t) in params.iter() {
        if is_weight(name) {
            let (a, b) = (t.shape()[0], t.shape()[1]);
            let limit = (6.0 / (a + b) as f64).sqrt();
            assert!(t.data().iter().all(|v| v.abs() <= limit), "{name}");
        } else if name.ends_with(".gain") {
            assert!(t.data().iter().all(|&v| v == 1.0));
        } else if name.ends_with(".shift") {
            assert!(t.data().iter().all(|&v| v == 0.0));
        } else {
            assert!(t.data().iter().all(|v| v.abs() < 0.2), "{name}");
        }
    }
    // Glorot-uniform variance of the 64x16 projection is 2 / 80
    let w = params.get("vision.patch_proj.w").unwrap().data();
    let var = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
    assert!((var / (2.0 / 80.0) - 1.0).abs() < 0.15, "{var}");
    assert_eq!(params, init_parameters(&config, 17).unwrap());
    assert_ne!(params, init_parameters(&config, 18).unwrap());
}

#[test]
fn resizing_keeps_embedding_dimension() {
    let model = perturbed(small_config(0), 9);
    for side in [8, 16, 20, 33] {
        assert_eq!(model.vision_encode(&image(side, side as u64)).unwrap().len(), 8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn constant_image_risk_is_finite(fill in -5.0f64..5.0, visits in 1usize..4) {
        let model = perturbed(small_config(0), 4);
        let images = vec![longsurv::data::Image::filled(16, 16, fill); visits];
        let times = (0..visits).map(|k| k as f64 * 0.05).collect();
        let seq = ImageSequence::new("c", times, images, vec![]).unwrap();
        let r = model.risk_score(&seq, visits).unwrap();
        prop_assert!(r.is_finite());
        prop_assert!((r - common::risk(&model, &seq, visits)).abs() < 1e-10);
    }
}
