//! Flat `key = value` settings shared by all commands.
//!
//! A config file sets any subset of the keys below; `--set key=value` and the
//! dedicated flags are applied afterwards, so flags win. Unknown keys are
//! rejected. Times are in months.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use longsurv::data::months_to_standard;
use longsurv::evaluate::Scenario;
use longsurv::model::ModelConfig;
use longsurv::simgen::{HazardClock, SimConfig};
use longsurv::train::TrainConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub sim: SimConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub landmark_months: f64,
    pub folds: usize,
    pub runs: usize,
    pub methods: Vec<String>,
    pub scenarios: Vec<Scenario>,
    pub pve: f64,
    pub region_side: usize,
    pub fill: f64,
    pub signed: bool,
    pub grid_months: Vec<f64>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            sim: SimConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            landmark_months: 12.0,
            folds: 4,
            runs: 1,
            methods: vec!["surlonformer".into(), "fpca-cox".into(), "oracle".into()],
            scenarios: Scenario::standard_grid(),
            pve: 0.95,
            region_side: 8,
            fill: 0.0,
            signed: false,
            grid_months: (0..=8).map(|k| k as f64 * 6.0).collect(),
        }
    }
}

#[cfg(test)]
const KEYS: &[&str] = &[
    "seed",
    "cohort",
    "side",
    "visit_months",
    "horizon_months",
    "log_hazard",
    "hazard_clock",
    "noise_variance",
    "censor_fraction",
    "patches",
    "dim",
    "heads",
    "vision_layers",
    "sequence_layers",
    "ffn_dim",
    "survival_hidden",
    "dropout",
    "sequence_position",
    "max_visits",
    "lambda",
    "alpha",
    "learning_rate",
    "epochs",
    "patience",
    "validation_fraction",
    "landmark_months",
    "folds",
    "runs",
    "methods",
    "scenarios",
    "pve",
    "region_side",
    "fill",
    "signed",
    "grid_months",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("bad value {value:?} for {key}"))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, String> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

/// `standard` or a comma list of `t*:dt` month pairs.
pub fn parse_scenarios(value: &str) -> Result<Vec<Scenario>, String> {
    if value == "standard" {
        return Ok(Scenario::standard_grid());
    }
    value
        .split(',')
        .map(|pair| {
            let (t, dt) = pair
                .trim()
                .split_once(':')
                .ok_or_else(|| format!("scenario {pair:?} is not t*:dt"))?;
            Ok(Scenario::new(parse("scenarios", t)?, parse("scenarios", dt)?))
        })
        .collect()
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "cohort" => self.sim.cohort = parse(key, v)?,
            "side" => self.sim.side = parse(key, v)?,
            "visit_months" => self.sim.visit_months = parse(key, v)?,
            "horizon_months" => self.sim.horizon_months = parse(key, v)?,
            "log_hazard" => self.sim.log_hazard = parse(key, v)?,
            "hazard_clock" => self.sim.hazard_clock = v.parse::<HazardClock>().map_err(|e| e.to_string())?,
            "noise_variance" => self.sim.noise_variance = parse(key, v)?,
            "censor_fraction" => self.sim.censor_fraction = parse(key, v)?,
            "patches" => self.model.patches = parse(key, v)?,
            "dim" => self.model.dim = parse(key, v)?,
            "heads" => self.model.heads = parse(key, v)?,
            "vision_layers" => self.model.vision_layers = parse(key, v)?,
            "sequence_layers" => self.model.sequence_layers = parse(key, v)?,
            "ffn_dim" => self.model.ffn_dim = parse(key, v)?,
            "survival_hidden" => self.model.survival_hidden = parse(key, v)?,
            "dropout" => self.model.dropout = parse(key, v)?,
            "sequence_position" => self.model.sequence_position = parse(key, v)?,
            "max_visits" => self.model.max_visits = parse(key, v)?,
            "lambda" => self.train.lambda = parse(key, v)?,
            "alpha" => self.train.alpha = parse(key, v)?,
            "learning_rate" => self.train.learning_rate = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "patience" => self.train.patience = parse(key, v)?,
            "validation_fraction" => self.train.validation_fraction = parse(key, v)?,
            "landmark_months" => self.landmark_months = parse(key, v)?,
            "folds" => self.folds = parse(key, v)?,
            "runs" => self.runs = parse(key, v)?,
            "methods" => self.methods = v.split(',').map(|m| m.trim().to_string()).collect(),
            "scenarios" => self.scenarios = parse_scenarios(v)?,
            "pve" => self.pve = parse(key, v)?,
            "region_side" => self.region_side = parse(key, v)?,
            "fill" => self.fill = parse(key, v)?,
            "signed" => self.signed = parse(key, v)?,
            "grid_months" => self.grid_months = parse_list(key, v)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<(), CliError> {
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| CliError::Config { path: path.to_path_buf(), line: k + 1, message };
            let (key, value) = line.split_once('=').ok_or_else(|| bad(format!("expected key = value, found {line:?}")))?;
            self.set(key.trim(), value).map_err(bad)?;
        }
        Ok(())
    }

    pub fn load(config: Option<&PathBuf>, overrides: &[String]) -> Result<Self, CliError> {
        let mut s = Settings::default();
        if let Some(path) = config {
            let text = fs::read_to_string(path).map_err(|e| CliError::Io { path: path.clone(), source: e })?;
            s.apply_text(&text, path)?;
        }
        for o in overrides {
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, found {o:?}")))?;
            s.set(key.trim(), value).map_err(CliError::Usage)?;
        }
        Ok(s)
    }

    /// Copies the shared seed and landmark into the component configs.
    pub fn resolve(&mut self) {
        self.sim.seed = self.seed;
        self.model.seed = self.seed;
        self.train.seed = self.seed ^ 0x5eed;
        self.train.landmark = months_to_standard(self.landmark_months);
    }

    /// Canonical `key=value` lines of the simulation settings.
    pub fn simulation_text(&self) -> String {
        let s = &self.sim;
        format!(
            "seed={}\ncohort={}\nside={}\nvisit_months={:?}\nhorizon_months={:?}\nlog_hazard={:?}\n\
             hazard_clock={}\nnoise_variance={:?}\ncensor_fraction={:?}\n",
            s.seed,
            s.cohort,
            s.side,
            s.visit_months,
            s.horizon_months,
            s.log_hazard,
            s.hazard_clock,
            s.noise_variance,
            s.censor_fraction
        )
    }
}
