//! Patient-level data: image sequences, survival outcomes and landmarking.
//!
//! Times are standardized: months / 120, so the horizon is 1.

use crate::error::{Error, Result};

pub const MONTHS_PER_UNIT: f64 = 120.0;

pub fn months_to_standard(months: f64) -> f64 {
    months / MONTHS_PER_UNIT
}

pub fn standard_to_months(t: f64) -> f64 {
    t * MONTHS_PER_UNIT
}

/// Row-major grayscale grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    rows: usize,
    cols: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(rows: usize, cols: usize, pixels: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Input("empty image".into()));
        }
        if pixels.len() != rows * cols {
            return Err(Error::Input(format!(
                "{rows}x{cols} image needs {} pixels, got {}",
                rows * cols,
                pixels.len()
            )));
        }
        Ok(Self { rows, cols, pixels })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "empty image");
        Self { rows, cols, pixels: vec![value; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.pixels[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.pixels[r * self.cols + c] = v;
    }
}

/// Observed outcome. `time` in standardized units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurvivalRecord {
    pub time: f64,
    pub event: bool,
}

impl SurvivalRecord {
    pub fn new(time: f64, event: bool) -> Self {
        Self { time, event }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSequence {
    pub id: String,
    /// Standardized visit times, strictly increasing.
    pub times: Vec<f64>,
    pub images: Vec<Image>,
    pub covariates: Vec<f64>,
}

impl ImageSequence {
    pub fn new(id: impl Into<String>, times: Vec<f64>, images: Vec<Image>, covariates: Vec<f64>) -> Result<Self> {
        let id = id.into();
        if images.is_empty() {
            return Err(Error::Input(format!("patient {id} has no images")));
        }
        if times.len() != images.len() {
            return Err(Error::Input(format!(
                "patient {id}: {} times for {} images",
                times.len(),
                images.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input(format!("patient {id}: visit times not increasing")));
        }
        let (r, c) = (images[0].rows(), images[0].cols());
        if images.iter().any(|im| im.rows() != r || im.cols() != c) {
            return Err(Error::Input(format!("patient {id}: images differ in size")));
        }
        Ok(Self { id, times, images, covariates })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// J*: number of visits at or before `t_star`.
    pub fn visits_by(&self, t_star: f64) -> usize {
        self.times.iter().take_while(|&&t| t <= t_star + 1e-12).count()
    }
}

/// One patient: images, outcome and (for simulated data) the generating risk.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub sequence: ImageSequence,
    pub record: SurvivalRecord,
    pub true_risk: Option<f64>,
}

impl Subject {
    pub fn id(&self) -> &str {
        &self.sequence.id
    }
}

/// A patient as seen at a landmark: event-free through `t_star`, with the
/// first `visits` images usable.
#[derive(Debug, Clone, Copy)]
pub struct Landmarked<'a> {
    pub subject: &'a Subject,
    pub visits: usize,
}

/// Keeps subjects with `T >= t_star` and at least one visit by `t_star`.
pub fn landmark(subjects: &[Subject], t_star: f64) -> Vec<Landmarked<'_>> {
    subjects
        .iter()
        .filter(|s| s.record.time >= t_star)
        .filter_map(|s| {
            let visits = s.sequence.visits_by(t_star);
            (visits > 0).then_some(Landmarked { subject: s, visits })
        })
        .collect()
}
