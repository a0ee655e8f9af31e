use longsurv::data::Image;
use longsurv::simgen::{
    coefficient_matrix, generate_cohort, ground_truth_sequence, sample_event_time, true_risk, HazardClock, SimConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn coefficient_blocks() {
    let beta = coefficient_matrix(64);
    let nonzero = beta.pixels().iter().filter(|&&v| v != 0.0).count();
    assert_eq!(nonzero, 7 * 64);
    for g in 0..8 {
        assert_eq!(beta.get(8 * g + 3, 8 * g + 5), g as f64 / 70.0);
    }
    assert_eq!(beta.get(0, 8), 0.0);
    let total: f64 = beta.pixels().iter().sum();
    assert!((total - 25.6).abs() < 1e-12);
}

#[test]
fn ground_truth_examples() {
    let zero = Image::filled(64, 64, 0.0);
    let seq = ground_truth_sequence(&zero, &[0.0, 0.1]);
    assert_eq!(seq[0], zero);
    assert!(seq[1].pixels().iter().all(|&v| (v - 0.0055).abs() < 1e-15));

    let seq = ground_truth_sequence(&zero, &[0.0, 0.05, 0.10, 0.15]);
    let r = true_risk(&seq, &coefficient_matrix(64)).unwrap();
    assert!((r - 25.6 * 0.016750).abs() < 1e-10);
    assert!((r - 0.42880).abs() < 1e-5);
    assert_eq!(true_risk(&seq, &zero).unwrap(), 0.0);
    assert!(true_risk(&seq[..3], &zero).is_err());
}

#[test]
fn inverse_sampling_examples() {
    let e1 = (-1f64).exp();
    assert_eq!(sample_event_time(5.0, e1, -5.0, 1.0).unwrap(), (1.0, true));
    let (u, event) = sample_event_time(6.0, e1, -5.0, 1.0).unwrap();
    assert!((u - e1).abs() < 1e-15 && event);
    let (u, _) = sample_event_time(0.0, 1.0 - 1e-15, -5.0, 1.0).unwrap();
    assert!(u < 1e-10);
    assert!(sample_event_time(0.0, 0.0, -5.0, 1.0).is_err());
    assert!(sample_event_time(0.0, 1.0, -5.0, 1.0).is_err());
    // months clock: the same draw on a 120-month horizon
    let (u, _) = sample_event_time(6.0, e1, -5.0, 1.0 / 120.0).unwrap();
    assert!((u - e1 / 120.0).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn risk_is_bilinear(seed in 0u64..1000, k in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Image::new(16, 16, (0..256).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
        let beta = coefficient_matrix(16);
        let frames = ground_truth_sequence(&base, &[0.0, 0.05, 0.1, 0.15]);
        let scaled: Vec<Image> = frames
            .iter()
            .map(|im| Image::new(16, 16, im.pixels().iter().map(|v| k * v).collect()).unwrap())
            .collect();
        let a = true_risk(&frames, &beta).unwrap();
        prop_assert!((true_risk(&scaled, &beta).unwrap() - k * a).abs() < 1e-10);
        let diff: Vec<f64> = frames[2].pixels().iter().zip(frames[1].pixels()).map(|(x, y)| x - y).collect();
        prop_assert!(diff.iter().all(|d| (d - diff[0]).abs() < 1e-12));
    }
}

fn cohort_config(cohort: usize, seed: u64) -> SimConfig {
    SimConfig { cohort, seed, ..SimConfig::default() }
}

/// Probability that the generating event time falls inside the horizon,
/// by direct Monte Carlo over base images restricted to the nonzero blocks.
fn monte_carlo_event_probability(config: &SimConfig, draws: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(12345);
    let drift: f64 = [0.0f64, 0.05, 0.10, 0.15].iter().map(|t| 0.05 * t + 0.05 * t * t).sum();
    let scale = match config.hazard_clock {
        HazardClock::Months => 1.0 / config.horizon_months,
        HazardClock::Standardized => 1.0,
    };
    let mut hits = 0usize;
    for _ in 0..draws {
        let mut inner = 0.0;
        for g in 1..8 {
            let block: f64 = (0..64).map(|_| rng.random_range(-0.5..0.5)).sum();
            inner += g as f64 / 70.0 * block;
        }
        let r = 4.0 * inner + 25.6 * drift;
        let u: f64 = 1.0 - rng.random::<f64>();
        let time = -u.ln() * (-config.log_hazard - r).exp() * scale;
        if time <= 1.0 {
            hits += 1;
        }
    }
    hits as f64 / draws as f64
}

#[test]
fn cohort_matches_generating_model() {
    let config = cohort_config(700, 3);
    let cohort = generate_cohort(&config).unwrap();
    assert_eq!(cohort.len(), 700);

    // event fraction against the Monte Carlo oracle
    let p = monte_carlo_event_probability(&config, 100_000);
    let uncensored = 700 - (0.05f64 * 700.0).ceil() as usize;
    let events = cohort.iter().filter(|s| s.record.event).count() as f64;
    let expected = uncensored as f64 * p;
    let se = (uncensored as f64 * p * (1.0 - p)).sqrt();
    assert!((events - expected).abs() < 3.0 * se, "{events} events, expected {expected} +- {se}");

    // visits stop at the observed time
    for s in &cohort {
        let t = s.record.time;
        assert!(t > 0.0 && t <= 1.0);
        assert!(s.sequence.times.iter().all(|&v| v <= t + 1e-12));
        assert_eq!(s.sequence.len(), ((t / 0.05 + 1e-9).floor() as usize + 1).min(21));
    }

    // consecutive visits differ by a constant plus two noise draws
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    let mut n = 0.0;
    for s in &cohort {
        for w in s.sequence.images.windows(2) {
            let d: Vec<f64> = w[1].pixels().iter().zip(w[0].pixels()).map(|(a, b)| a - b).collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            for v in d {
                sum += v - mean;
                sum2 += (v - mean).powi(2);
                n += 1.0;
            }
        }
    }
    let var = (sum2 - sum * sum / n) / (n - 1.0) / 2.0;
    assert!((var / 0.001 - 1.0).abs() < 0.1, "{var}");

    // higher risk fails earlier
    let risks: Vec<f64> = cohort.iter().map(|s| s.true_risk.unwrap()).collect();
    let times: Vec<f64> = cohort.iter().map(|s| s.record.time).collect();
    let rho = spearman(&risks, &times);
    assert!(rho < -0.3, "{rho}");
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for k in i..=j {
            out[idx[k]] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    out
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn seeds_reproduce_and_differ() {
    let a = generate_cohort(&cohort_config(12, 9)).unwrap();
    let b = generate_cohort(&cohort_config(12, 9)).unwrap();
    let c = generate_cohort(&cohort_config(12, 10)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(a[0].id(), "p00");
    // per-patient streams: earlier patients do not depend on the cohort size
    let bigger = generate_cohort(&cohort_config(13, 9)).unwrap();
    assert_eq!(a[..5].iter().map(|s| s.true_risk).collect::<Vec<_>>(), bigger[..5].iter().map(|s| s.true_risk).collect::<Vec<_>>());
}

#[test]
fn invalid_configs_rejected() {
    assert!(generate_cohort(&SimConfig { cohort: 5, ..SimConfig::default() }).is_err());
    assert!(generate_cohort(&SimConfig { side: 60, ..SimConfig::default() }).is_err());
    assert!(generate_cohort(&SimConfig { censor_fraction: 1.0, ..SimConfig::default() }).is_err());
}
