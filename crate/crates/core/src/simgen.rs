//! Synthetic cohort: noisy image sequences whose first four ground-truth
//! frames determine the hazard through a block-diagonal coefficient matrix.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Image, ImageSequence, Subject, SurvivalRecord};
use crate::error::{Error, Result};

/// Unit in which the constant baseline hazard `exp(log_hazard)` is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HazardClock {
    /// Per month; event times are drawn in months, then standardized.
    Months,
    /// Per standardized unit (the whole 120-month horizon).
    Standardized,
}

impl std::str::FromStr for HazardClock {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "months" => Ok(Self::Months),
            "standardized" => Ok(Self::Standardized),
            other => Err(Error::Config(format!("unknown hazard clock {other:?}"))),
        }
    }
}

impl std::fmt::Display for HazardClock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Months => "months",
            Self::Standardized => "standardized",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub cohort: usize,
    pub side: usize,
    pub visit_months: f64,
    pub horizon_months: f64,
    pub log_hazard: f64,
    pub hazard_clock: HazardClock,
    pub noise_variance: f64,
    pub censor_fraction: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            cohort: 700,
            side: 64,
            visit_months: 6.0,
            horizon_months: 120.0,
            log_hazard: -5.0,
            hazard_clock: HazardClock::Months,
            noise_variance: 0.001,
            censor_fraction: 0.05,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cohort < 10 {
            return Err(Error::Config(format!("cohort of {} is below 10", self.cohort)));
        }
        if self.side == 0 || self.side % 8 != 0 {
            return Err(Error::Config(format!("image side {} not divisible by 8", self.side)));
        }
        if !(self.visit_months > 0.0 && self.horizon_months >= self.visit_months) {
            return Err(Error::Config("visit spacing must be positive and within the horizon".into()));
        }
        if !(0.0..1.0).contains(&self.censor_fraction) {
            return Err(Error::Config("censoring fraction outside [0, 1)".into()));
        }
        if !(self.noise_variance >= 0.0) {
            return Err(Error::Config("noise variance is negative".into()));
        }
        Ok(())
    }

    /// Visit spacing in standardized units.
    pub fn spacing(&self) -> f64 {
        self.visit_months / self.horizon_months
    }

    /// Number of visits on the grid `0, spacing, ..., 1`.
    pub fn max_visits(&self) -> usize {
        (self.horizon_months / self.visit_months + 1e-9).floor() as usize + 1
    }

    /// Multiplier turning the time-scale of the hazard into standardized units.
    pub fn time_scale(&self) -> f64 {
        match self.hazard_clock {
            HazardClock::Months => 1.0 / self.horizon_months,
            HazardClock::Standardized => 1.0,
        }
    }
}

/// Zero except `8` diagonal blocks of side `side / 8`, block `g` holding `g / 70`.
pub fn coefficient_matrix(side: usize) -> Image {
    let b = side / 8;
    let mut beta = Image::filled(side, side, 0.0);
    for g in 0..8 {
        for r in g * b..(g + 1) * b {
            for c in g * b..(g + 1) * b {
                beta.set(r, c, g as f64 / 70.0);
            }
        }
    }
    beta
}

/// `base + (0.05 t + 0.05 t^2) J` at each time.
pub fn ground_truth_sequence(base: &Image, times: &[f64]) -> Vec<Image> {
    times
        .iter()
        .map(|&t| {
            let shift = 0.05 * t + 0.05 * t * t;
            let mut im = base.clone();
            im.pixels_mut().iter_mut().for_each(|v| *v += shift);
            im
        })
        .collect()
}

fn frobenius(a: &Image, b: &Image) -> f64 {
    a.pixels().iter().zip(b.pixels()).map(|(x, y)| x * y).sum()
}

/// `sum_{j=0..3} <beta, X_j>_F` over the first four ground-truth frames.
pub fn true_risk(images: &[Image], beta: &Image) -> Result<f64> {
    if images.len() < 4 {
        return Err(Error::Input(format!("true risk needs 4 frames, got {}", images.len())));
    }
    Ok(images[..4].iter().map(|im| frobenius(beta, im)).sum())
}

/// Inverse-transform draw under the constant hazard `exp(log_hazard + r)`
/// measured in units of `time_scale` standardized time; returns `(T, delta)`
/// with administrative censoring at 1 (`U = 1` counts as an event).
pub fn sample_event_time(risk: f64, u: f64, log_hazard: f64, time_scale: f64) -> Result<(f64, bool)> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Input(format!("uniform draw {u} outside (0, 1)")));
    }
    let raw = -u.ln() * (-log_hazard - risk).exp() * time_scale;
    Ok(if raw <= 1.0 { (raw, true) } else { (1.0, false) })
}

/// Patients are generated on independent ChaCha streams of the master seed;
/// censoring uses one more stream.
pub fn generate_cohort(config: &SimConfig) -> Result<Vec<Subject>> {
    config.validate()?;
    let beta = coefficient_matrix(config.side);
    let spacing = config.spacing();
    let grid: Vec<f64> = (0..config.max_visits())
        .map(|k| k as f64 * config.visit_months / config.horizon_months)
        .collect();
    let noise = Normal::new(0.0, config.noise_variance.sqrt()).expect("finite sd");
    let n_pix = config.side * config.side;

    struct Draft {
        base: Image,
        risk: f64,
        time: f64,
        event: bool,
        noise_rng: ChaCha8Rng,
    }

    let mut drafts = Vec::with_capacity(config.cohort);
    for i in 0..config.cohort {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(i as u64);
        let base = Image::new(
            config.side,
            config.side,
            (0..n_pix).map(|_| rng.random_range(-0.5..0.5)).collect(),
        )?;
        let truth = ground_truth_sequence(&base, &grid[..4.min(grid.len())]);
        let risk = true_risk(&truth, &beta)?;
        let u: f64 = loop {
            let u = rng.random::<f64>();
            if u > 0.0 {
                break u;
            }
        };
        let (time, event) = sample_event_time(risk, u, config.log_hazard, config.time_scale())?;
        drafts.push(Draft { base, risk, time, event, noise_rng: rng });
    }

    let mut censor_rng = ChaCha8Rng::seed_from_u64(config.seed);
    censor_rng.set_stream(u64::MAX);
    let n_censor = (config.censor_fraction * config.cohort as f64).ceil() as usize;
    let mut chosen = sample(&mut censor_rng, config.cohort, n_censor).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let d = &mut drafts[i];
        let c = (1.0 - censor_rng.random::<f64>()) * d.time;
        d.time = c;
        d.event = false;
    }

    let mut subjects = Vec::with_capacity(config.cohort);
    for (i, mut d) in drafts.into_iter().enumerate() {
        let visits = ((d.time / spacing + 1e-9).floor() as usize + 1).min(grid.len());
        let times = grid[..visits].to_vec();
        let images = ground_truth_sequence(&d.base, &times)
            .into_iter()
            .map(|mut im| {
                for v in im.pixels_mut() {
                    *v += noise.sample(&mut d.noise_rng);
                }
                im
            })
            .collect();
        let width = config.cohort.to_string().len();
        subjects.push(Subject {
            sequence: ImageSequence::new(format!("p{i:0width$}"), times, images, Vec::new())?,
            record: SurvivalRecord::new(d.time, d.event),
            true_risk: Some(d.risk),
        });
    }
    Ok(subjects)
}
