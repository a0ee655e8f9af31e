use longsurv::cox::{
    breslow_baseline, dynamic_survival, elastic_net_penalty, neg_log_partial_likelihood, partial_likelihood_with_grad,
    survival_probability, BaselineHazard,
};
use longsurv::data::SurvivalRecord;
use longsurv::tensor::{ParameterStore, Tensor};
use longsurv::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn records(pairs: &[(f64, bool)]) -> Vec<SurvivalRecord> {
    pairs.iter().map(|&(t, e)| SurvivalRecord::new(t, e)).collect()
}

/// Direct transcription of the Breslow partial likelihood: for every event,
/// the log of the summed exponentiated risks over everyone still at risk.
fn hand_nll(risks: &[f64], recs: &[SurvivalRecord]) -> Option<f64> {
    let events = recs.iter().filter(|r| r.event).count();
    if events == 0 {
        return None;
    }
    let mut total = 0.0;
    for (i, ri) in recs.iter().enumerate() {
        if !ri.event {
            continue;
        }
        let denom: f64 = recs
            .iter()
            .zip(risks)
            .filter(|(rk, _)| rk.time >= ri.time)
            .map(|(_, r)| r.exp())
            .sum();
        total += denom.ln() - risks[i];
    }
    Some(total / events as f64)
}

#[test]
fn every_three_patient_configuration_matches_hand_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut checked = 0;
    for times in 0..27usize {
        let t = [times % 3, (times / 3) % 3, times / 9].map(|k| 0.2 + 0.3 * k as f64);
        for events in 0..8usize {
            let recs: Vec<SurvivalRecord> = (0..3).map(|i| SurvivalRecord::new(t[i], events >> i & 1 == 1)).collect();
            for _ in 0..5 {
                let risks: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
                match hand_nll(&risks, &recs) {
                    Some(want) => {
                        let got = neg_log_partial_likelihood(&risks, &recs).unwrap();
                        assert!((got - want).abs() < 1e-10, "{t:?} {events} {risks:?}: {got} vs {want}");
                        checked += 1;
                    }
                    None => assert!(matches!(neg_log_partial_likelihood(&risks, &recs), Err(Error::NoEvents))),
                }
            }
        }
    }
    assert_eq!(checked, 27 * 7 * 5);
}

#[test]
fn documented_likelihood_values() {
    let v = neg_log_partial_likelihood(&[0.0, 0.0], &records(&[(0.2, true), (0.4, true)])).unwrap();
    assert!((v - 0.5 * 2f64.ln()).abs() < 1e-12);
    assert!((v - 0.34657).abs() < 1e-5);
    let recs = records(&[(0.1, true), (0.5, false), (0.6, false), (0.9, false), (1.0, false)]);
    let v = neg_log_partial_likelihood(&[0.0; 5], &recs).unwrap();
    assert!((v - 5f64.ln()).abs() < 1e-12);
}

#[test]
fn penalty_examples() {
    let mut store = ParameterStore::new();
    store.insert("head.w", Tensor::vector(vec![2.0]).unwrap());
    store.insert("head.b", Tensor::vector(vec![7.0]).unwrap());
    assert_eq!(elastic_net_penalty(&store, 0.0, 0.5), 0.0);
    assert_eq!(elastic_net_penalty(&store, 1.0, 1.0), 2.0);
    assert_eq!(elastic_net_penalty(&store, 1.0, 0.0), 4.0);
}

#[test]
fn breslow_hand_examples() {
    let t = breslow_baseline(&[0.0], &records(&[(0.5, true)])).unwrap();
    assert_eq!((t.increments[0], t.cumulative_at(0.5)), (1.0, 1.0));
    let t = breslow_baseline(&[0.0, 0.0], &records(&[(0.3, true), (0.6, true)])).unwrap();
    assert_eq!(t.increments, vec![0.5, 1.0]);
    assert_eq!(t.cumulative_at(0.6), 1.5);
    assert_eq!(t.cumulative_at(0.59), 0.5);
    assert!(matches!(breslow_baseline(&[0.0], &records(&[(0.5, false)])), Err(Error::NoEvents)));
}

/// Exponential lifetimes with hazard `rate`, administratively censored at
/// the time by which half of them have failed.
fn exponential_cohort(n: usize, rate: f64, seed: u64) -> Vec<SurvivalRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = 2f64.ln() / rate;
    (0..n)
        .map(|_| {
            let u: f64 = 1.0 - rng.random::<f64>();
            let t = -u.ln() / rate;
            if t <= tau {
                SurvivalRecord::new(t, true)
            } else {
                SurvivalRecord::new(tau, false)
            }
        })
        .collect()
}

#[test]
fn breslow_recovers_constant_hazard() {
    // exp(-5) per month, on a clock where half the cohort fails by tau
    let rate = (-5f64).exp();
    let mut ratios = Vec::new();
    for seed in 0..20 {
        let recs = exponential_cohort(2000, rate, seed);
        let table = breslow_baseline(&vec![0.0; recs.len()], &recs).unwrap();
        let mut times: Vec<f64> = recs.iter().filter(|r| r.event).map(|r| r.time).collect();
        times.sort_by(f64::total_cmp);
        let median = times[times.len() / 2];
        ratios.push(table.cumulative_at(median) / median / rate);
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((mean - 1.0).abs() < 0.1, "{mean}");
}

#[test]
fn hand_dynamic_survival() {
    let table = BaselineHazard {
        times: vec![0.1, 0.3],
        events: vec![1, 1],
        increments: vec![0.2, 0.3],
        cumulative: vec![0.2, 0.5],
    };
    let p = dynamic_survival(2f64.ln(), 0.1, 0.2, &table).unwrap();
    assert!((p - (-0.3f64).exp().powi(2)).abs() < 1e-12);
    assert!((p - 0.54881).abs() < 1e-5);
    assert_eq!(dynamic_survival(0.7, 0.1, 0.0, &table).unwrap(), 1.0);
    assert!((survival_probability(0.0, 0.5, &table) - (-0.5f64).exp()).abs() < 1e-15);
    assert_eq!(survival_probability(0.0, 0.05, &table), 1.0);
}

fn cohort_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<SurvivalRecord>)> {
    (2usize..12)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec(-4.0f64..4.0, n),
                proptest::collection::vec((1u32..8, any::<bool>()), n),
            )
        })
        .prop_map(|(risks, raw)| {
            let mut recs: Vec<SurvivalRecord> =
                raw.iter().map(|&(t, e)| SurvivalRecord::new(t as f64 / 8.0, e)).collect();
            recs[0].event = true;
            (risks, recs)
        })
}

proptest! {
    #[test]
    fn likelihood_is_location_invariant((risks, recs) in cohort_strategy(), c in -20.0f64..20.0) {
        let shifted: Vec<f64> = risks.iter().map(|r| r + c).collect();
        let a = neg_log_partial_likelihood(&risks, &recs).unwrap();
        let b = neg_log_partial_likelihood(&shifted, &recs).unwrap();
        prop_assert!((a - b).abs() < 1e-9);
        prop_assert!((a - hand_nll(&risks, &recs).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn likelihood_gradient_matches_differences((risks, recs) in cohort_strategy()) {
        let (v, g) = partial_likelihood_with_grad(&risks, &recs).unwrap();
        prop_assert!((v - hand_nll(&risks, &recs).unwrap()).abs() < 1e-10);
        prop_assert!(g.iter().sum::<f64>().abs() < 1e-10);
        let h = 1e-6;
        for i in 0..risks.len() {
            let mut up = risks.clone();
            up[i] += h;
            let mut down = risks.clone();
            down[i] -= h;
            let fd = (hand_nll(&up, &recs).unwrap() - hand_nll(&down, &recs).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() < 1e-7, "{} vs {}", fd, g[i]);
        }
    }

    #[test]
    fn breslow_martingale_identity((risks, recs) in cohort_strategy()) {
        let table = breslow_baseline(&risks, &recs).unwrap();
        let expected: f64 = recs.iter().zip(&risks).map(|(r, x)| table.cumulative_at(r.time) * x.exp()).sum();
        let events = recs.iter().filter(|r| r.event).count() as f64;
        prop_assert!((expected - events).abs() < 1e-10);
        prop_assert!(table.times.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(table.cumulative.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(table.increments.iter().all(|&h| h >= 0.0));
    }

    #[test]
    fn shifted_risks_rescale_baseline((risks, recs) in cohort_strategy(), c in -5.0f64..5.0, t in 0.0f64..1.2) {
        let shifted: Vec<f64> = risks.iter().map(|r| r + c).collect();
        let a = breslow_baseline(&risks, &recs).unwrap();
        let b = breslow_baseline(&shifted, &recs).unwrap();
        for (x, y) in a.cumulative.iter().zip(&b.cumulative) {
            prop_assert!((y - x * (-c).exp()).abs() <= 1e-10 * x.max(1.0));
        }
        for (r, s) in risks.iter().zip(&shifted) {
            let p = survival_probability(*r, t, &a);
            let q = survival_probability(*s, t, &b);
            prop_assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn survival_is_monotone((risks, recs) in cohort_strategy(), ra in -3.0f64..3.0, rb in -3.0f64..3.0) {
        let table = breslow_baseline(&risks, &recs).unwrap();
        let (hi, lo) = if ra >= rb { (ra, rb) } else { (rb, ra) };
        let mut prev = 1.0;
        for k in 0..=20 {
            let t = k as f64 * 0.06;
            let s = survival_probability(hi, t, &table);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!(s <= prev);
            prop_assert!(s <= survival_probability(lo, t, &table));
            prev = s;
        }
    }

    #[test]
    fn dynamic_prediction_identities(
        (risks, recs) in cohort_strategy(),
        r in -3.0f64..3.0,
        t_star in 0.0f64..0.5,
        dt in 0.0f64..0.5,
    ) {
        let table = breslow_baseline(&risks, &recs).unwrap();
        prop_assume!(survival_probability(r, t_star, &table) > 1e-200);
        prop_assert_eq!(dynamic_survival(r, t_star, 0.0, &table).unwrap(), 1.0);
        let p = dynamic_survival(r, t_star, dt, &table).unwrap();
        let ratio = survival_probability(r, t_star + dt, &table) / survival_probability(r, t_star, &table);
        prop_assert!((p - ratio).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(dynamic_survival(r, t_star, dt + 0.1, &table).unwrap() <= p);
    }
}
