//! On-disk dataset: `manifest.csv` plus one binary file per image.
//!
//! Manifest columns: `id, time_months, event, visits, true_risk, x0.., visit_months, images`.
//! `visit_months` and `images` hold `;`-separated lists; image paths are
//! relative to the dataset directory. `true_risk` may be empty.
//!
//! Image files: `"IMG1"`, u32 rows, u32 cols, 4 reserved zero bytes, then
//! `rows * cols` little-endian f64 values in row-major order.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{months_to_standard, standard_to_months, Image, ImageSequence, Subject, SurvivalRecord};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.csv";
pub const IMAGE_MAGIC: &[u8; 4] = b"IMG1";
const HEADER: usize = 16;

pub fn encode_image(image: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 8 * image.pixels().len());
    out.extend_from_slice(IMAGE_MAGIC);
    out.extend_from_slice(&(image.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(image.cols() as u32).to_le_bytes());
    out.extend_from_slice(&[0u8; 4]);
    for v in image.pixels() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < HEADER || &bytes[..4] != IMAGE_MAGIC {
        return Err(Error::Input("not an IMG1 image".into()));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let payload = &bytes[HEADER..];
    if payload.len() != rows * cols * 8 {
        return Err(Error::Input(format!(
            "{rows}x{cols} image needs {} payload bytes, found {}",
            rows * cols * 8,
            payload.len()
        )));
    }
    let pixels = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Image::new(rows, cols, pixels)
}

fn join(values: impl Iterator<Item = String>) -> String {
    values.collect::<Vec<_>>().join(";")
}

/// Writes `subjects` under `dir` (created if needed).
pub fn write_dataset(dir: &Path, subjects: &[Subject]) -> Result<()> {
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let covariates = subjects.first().map_or(0, |s| s.sequence.covariates.len());
    if subjects.iter().any(|s| s.sequence.covariates.len() != covariates) {
        return Err(Error::Input("patients disagree on the number of covariates".into()));
    }

    let manifest = dir.join(MANIFEST);
    let mut w = csv::Writer::from_path(&manifest)?;
    let mut header = vec!["id".to_string(), "time_months".into(), "event".into(), "visits".into(), "true_risk".into()];
    header.extend((0..covariates).map(|k| format!("x{k}")));
    header.push("visit_months".into());
    header.push("images".into());
    w.write_record(&header)?;

    for s in subjects {
        let seq = &s.sequence;
        let mut paths = Vec::with_capacity(seq.len());
        for (j, im) in seq.images.iter().enumerate() {
            let rel = format!("images/{}_{j:02}.img", seq.id);
            let path = dir.join(&rel);
            fs::write(&path, encode_image(im)).map_err(|e| Error::io(&path, e))?;
            paths.push(rel);
        }
        let mut row = vec![
            seq.id.clone(),
            standard_to_months(s.record.time).to_string(),
            u8::from(s.record.event).to_string(),
            seq.len().to_string(),
            s.true_risk.map(|r| r.to_string()).unwrap_or_default(),
        ];
        row.extend(seq.covariates.iter().map(f64::to_string));
        row.push(join(seq.times.iter().map(|&t| standard_to_months(t).to_string())));
        row.push(paths.join(";"));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(())
}

/// Reads a dataset directory. Manifest problems report the 1-based file line.
pub fn read_dataset(dir: &Path) -> Result<Vec<Subject>> {
    let manifest = dir.join(MANIFEST);
    let file = fs::File::open(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let header = reader.headers()?.clone();
    let bad = |line: usize, message: String| Error::Format { path: manifest.clone(), line, message };

    let fixed = ["id", "time_months", "event", "visits", "true_risk"];
    let n = header.len();
    if n < fixed.len() + 2
        || fixed.iter().zip(header.iter()).any(|(a, b)| *a != b)
        || &header[n - 2] != "visit_months"
        || &header[n - 1] != "images"
    {
        return Err(bad(1, "unexpected manifest header".into()));
    }
    let covariates = n - fixed.len() - 2;

    let mut subjects = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| bad(line, e.to_string()))?;
        if record.len() != n {
            return Err(bad(line, format!("expected {n} fields, found {}", record.len())));
        }
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(line, format!("column {} is not a number: {:?}", &header[i], &record[i])))
        };
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(bad(line, "empty id".into()));
        }
        let time = months_to_standard(num(1)?);
        if !(time > 0.0 && time <= 1.0 + 1e-12) {
            return Err(bad(line, format!("time {} months outside (0, 120]", &record[1])));
        }
        let event = match &record[2] {
            "0" => false,
            "1" => true,
            other => return Err(bad(line, format!("event must be 0 or 1, found {other:?}"))),
        };
        let visits: usize = record[3].parse().map_err(|_| bad(line, "visits is not a count".into()))?;
        let true_risk = if record[4].is_empty() { None } else { Some(num(4)?) };
        let covs = (0..covariates).map(|c| num(5 + c)).collect::<Result<Vec<_>>>()?;
        let times = record[n - 2]
            .split(';')
            .map(|v| {
                v.parse::<f64>()
                    .map(months_to_standard)
                    .map_err(|_| bad(line, format!("bad visit time {v:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let paths: Vec<&str> = record[n - 1].split(';').filter(|p| !p.is_empty()).collect();
        if paths.len() != visits || times.len() != visits {
            return Err(bad(line, format!("visits = {visits} but {} times and {} images", times.len(), paths.len())));
        }
        let images = paths
            .iter()
            .map(|p| {
                let path: PathBuf = dir.join(p);
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                decode_image(&bytes).map_err(|e| bad(line, format!("{p}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let sequence = ImageSequence::new(id, times, images, covs).map_err(|e| bad(line, e.to_string()))?;
        subjects.push(Subject { sequence, record: SurvivalRecord::new(time.min(1.0), event), true_risk });
    }
    if subjects.is_empty() {
        return Err(bad(1, "manifest lists no patients".into()));
    }
    Ok(subjects)
}
