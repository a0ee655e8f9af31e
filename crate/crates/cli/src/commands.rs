use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use longsurv::checkpoint;
use longsurv::cox::BaselineHazard;
use longsurv::data::{months_to_standard, Subject};
use longsurv::dataset::{read_dataset, write_dataset};
use longsurv::evaluate::{aggregate, cross_validate, write_fold_csv, write_table_csv, FpcaCoxMethod, Method, Oracle, Transformer};
use longsurv::interpret::{
    dynamic_survival_curve, occlusion_sensitivity, render_curve, render_heatmap, write_curve_csv, write_sensitivity_csv,
};
use longsurv::simgen::generate_cohort;
use longsurv::train::write_trace;
use sha2::{Digest, Sha256};

use crate::config::Settings;
use crate::error::CliError;
use crate::Common;

pub fn settings(common: &Common) -> Result<Settings, CliError> {
    let mut s = Settings::load(common.config.as_ref(), &common.set)?;
    if let Some(seed) = common.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write(path: PathBuf, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(&path, bytes).map_err(|e| CliError::io(path, e))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> longsurv::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn hex_digest(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn simulate(s: &Settings, out: &Path) -> Result<(), CliError> {
    let mut s = s.clone();
    s.resolve();
    let subjects = generate_cohort(&s.sim)?;
    write_dataset(out, &subjects)?;
    let config = s.simulation_text();
    write(out.join("provenance.txt"), format!("config_sha256={}\n{config}", hex_digest(&config)))?;
    let events = subjects.iter().filter(|p| p.record.event).count();
    info!("wrote {} patients ({events} events) to {}", subjects.len(), out.display());
    Ok(())
}

fn load_data(dir: &Path) -> Result<Vec<Subject>, CliError> {
    let subjects = read_dataset(dir)?;
    if subjects.is_empty() {
        return Err(CliError::Usage(format!("{}: dataset has no patients", dir.display())));
    }
    Ok(subjects)
}

pub fn train(mut s: Settings, data: &Path, out: &Path) -> Result<(), CliError> {
    s.resolve();
    let subjects = load_data(data)?;
    s.model.covariates = subjects[0].sequence.covariates.len();
    let at_risk = subjects.iter().filter(|p| p.record.time >= s.train.landmark).count();
    info!("landmark {} months: {at_risk} of {} patients at risk", s.landmark_months, subjects.len());
    let fitted = longsurv::train::train(&subjects, &s.model, &s.train)?;
    create_dir(out)?;
    checkpoint::save(&fitted.model, &out.join("model.ckpt"))?;
    write(out.join("baseline.csv"), csv_bytes(|b| fitted.baseline.write_csv(b))?)?;
    write(out.join("trace.csv"), csv_bytes(|b| write_trace(&fitted.trace, b))?)?;
    let last = fitted.trace.last().map_or(f64::NAN, |r| r.train_loss);
    info!("{} epochs, best epoch {}, final training loss {last}", fitted.trace.len(), fitted.best_epoch);
    Ok(())
}

pub fn evaluate(mut s: Settings, data: &Path, out: &Path, architecture: Option<&Path>) -> Result<(), CliError> {
    s.resolve();
    let subjects = load_data(data)?;
    if let Some(path) = architecture {
        s.model = checkpoint::load(path)?.config;
    }
    s.model.covariates = subjects[0].sequence.covariates.len();
    let transformer = Transformer { model: s.model.clone(), train: s.train.clone() };
    let fpca = FpcaCoxMethod { pve_target: s.pve };
    let mut methods: Vec<&dyn Method> = Vec::new();
    for name in &s.methods {
        match name.as_str() {
            "surlonformer" => methods.push(&transformer),
            "fpca-cox" => methods.push(&fpca),
            "oracle" => methods.push(&Oracle),
            other => return Err(CliError::Usage(format!("unknown method {other:?}"))),
        }
    }
    if methods.is_empty() || s.runs == 0 {
        return Err(CliError::Usage("nothing to evaluate".into()));
    }
    let mut results = Vec::new();
    for run in 0..s.runs {
        let seed = s.seed.wrapping_add(run as u64);
        results.extend(cross_validate(&subjects, s.folds, &s.scenarios, &methods, seed, run, |r| {
            let show = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.4}"));
            info!(
                "run {} fold {} t*={} dt={} {}: auc {} cindex {}",
                r.run,
                r.fold,
                r.scenario.t_star_months,
                r.scenario.dt_months,
                r.method,
                show(r.auc),
                show(r.cindex)
            );
        })?);
    }
    create_dir(out)?;
    write(out.join("folds.csv"), csv_bytes(|b| write_fold_csv(&results, b))?)?;
    write(out.join("table.csv"), csv_bytes(|b| write_table_csv(&aggregate(&results), b))?)?;
    Ok(())
}

fn find<'a>(subjects: &'a [Subject], id: &str, data: &Path) -> Result<&'a Subject, CliError> {
    subjects
        .iter()
        .find(|p| p.id() == id)
        .ok_or_else(|| CliError::Usage(format!("patient {id:?} is not in {}", data.display())))
}

/// Visits up to the landmark of a patient still at risk there.
fn landmark_visits(patient: &Subject, landmark_months: f64) -> Result<usize, CliError> {
    let t_star = months_to_standard(landmark_months);
    if patient.record.time < t_star {
        return Err(CliError::Usage(format!("patient {} is not at risk at {landmark_months} months", patient.id())));
    }
    match patient.sequence.visits_by(t_star) {
        0 => Err(CliError::Usage(format!("patient {} has no visit by {landmark_months} months", patient.id()))),
        n => Ok(n),
    }
}

pub fn occlude(s: &Settings, ckpt: &Path, data: &Path, id: &str, out: &Path) -> Result<(), CliError> {
    let model = checkpoint::load(ckpt)?;
    let subjects = load_data(data)?;
    let patient = find(&subjects, id, data)?;
    let visits = landmark_visits(patient, s.landmark_months)?;
    let occ = occlusion_sensitivity(&model, &patient.sequence, visits, s.region_side, s.fill, s.signed)?;
    info!("{} probes over {visits} visits", occ.probes);

    let all = occ.maps.iter().flat_map(|m| m.values.iter().copied());
    let range = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    create_dir(out)?;
    write(out.join("sensitivity.csv"), csv_bytes(|b| write_sensitivity_csv(&occ.maps, b))?)?;
    for map in &occ.maps {
        let svg = render_heatmap(map, &patient.sequence.images[map.visit], Some(range))?;
        write(out.join(format!("visit_{:02}.svg", map.visit)), svg)?;
    }
    let meta = format!(
        "patient={id}\nlandmark_months={:?}\nvisits={visits}\nregion_side={}\nfill={:?}\nsigned={}\nprobes={}\nbaseline_risk={:?}\nrange={:?},{:?}\n",
        s.landmark_months, s.region_side, s.fill, s.signed, occ.probes, occ.baseline_risk, range.0, range.1
    );
    write(out.join("occlusion.txt"), meta)
}

pub fn predict(
    s: &Settings,
    ckpt: &Path,
    baseline: Option<&Path>,
    target: Option<(PathBuf, String)>,
    out: &Path,
) -> Result<(), CliError> {
    let model = checkpoint::load(ckpt)?;
    let default = ckpt.with_file_name("baseline.csv");
    let table = BaselineHazard::read_csv(baseline.unwrap_or(&default))?;
    let (risk, title) = match target {
        None => (0.0, "baseline patient".to_string()),
        Some((data, id)) => {
            let subjects = load_data(&data)?;
            let patient = find(&subjects, &id, &data)?;
            let visits = landmark_visits(patient, s.landmark_months)?;
            (model.risk_score(&patient.sequence, visits)?, format!("patient {id}"))
        }
    };
    let curve = dynamic_survival_curve(risk, &table, s.landmark_months, &s.grid_months)?;
    info!("risk {risk} at {} months", s.landmark_months);
    create_dir(out)?;
    write(out.join("curve.csv"), csv_bytes(|b| write_curve_csv(&curve, b))?)?;
    write(out.join("curve.svg"), render_curve(&curve, &format!("{title}, landmark {} months", s.landmark_months)))
}
