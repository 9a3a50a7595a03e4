//! On-disk formats.
//!
//! Datasets are CSV with header `label,x0,...,x{dim-1}` plus a JSON sidecar
//! holding the generating spec. Floats are written with Rust's shortest
//! round-trip formatting, so reading a file back reproduces every bit.

use std::fs;
use std::path::{Path, PathBuf};

use ecc_core::bank::SnapshotHistory;
use ecc_core::trainer::EpochRecord;
use ecc_core::{Dataset, DenseMatrix, Split, SyntheticSpec, TrainLog};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{LabError, LabResult};

pub const TRAIN_CSV: &str = "train.csv";
pub const TEST_CSV: &str = "test.csv";
pub const SPEC_JSON: &str = "spec.json";

pub fn read_json<T: DeserializeOwned>(path: &Path) -> LabResult<T> {
    let text = fs::read_to_string(path).map_err(|e| LabError::missing(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::corrupt(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> LabResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| LabError::io(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| LabError::io(path, e))
}

fn csv_writer(path: &Path) -> LabResult<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| LabError::io(path, e))
}

fn finish(path: &Path, mut w: csv::Writer<fs::File>) -> LabResult<()> {
    w.flush().map_err(|e| LabError::io(path, e))
}

fn row_strings(head: String, values: &[f64]) -> Vec<String> {
    std::iter::once(head).chain(values.iter().map(f64::to_string)).collect()
}

pub fn write_dataset_csv(path: &Path, data: &Dataset) -> LabResult<()> {
    let mut w = csv_writer(path)?;
    let dim = data.inputs().cols();
    let header: Vec<String> = std::iter::once("label".to_string())
        .chain((0..dim).map(|j| format!("x{j}")))
        .collect();
    w.write_record(&header).map_err(|e| LabError::io(path, e))?;
    for (row, &y) in data.inputs().iter_rows().zip(data.labels()) {
        w.write_record(row_strings(y.to_string(), row))
            .map_err(|e| LabError::io(path, e))?;
    }
    finish(path, w)
}

pub fn read_dataset_csv(path: &Path, split: Split, spec: &SyntheticSpec) -> LabResult<Dataset> {
    let file = fs::File::open(path).map_err(|e| LabError::missing(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers().map_err(|e| LabError::corrupt(path, e))?.clone();
    let expected: Vec<String> = std::iter::once("label".to_string())
        .chain((0..spec.input_dim).map(|j| format!("x{j}")))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(LabError::corrupt(path, "header does not match the spec's input_dim"));
    }
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| LabError::corrupt(path, e))?;
        let mut fields = rec.iter();
        let label = fields.next().unwrap_or_default();
        labels.push(label.parse::<usize>().map_err(|e| LabError::corrupt(path, e))?);
        for f in fields {
            values.push(f.parse::<f64>().map_err(|e| LabError::corrupt(path, e))?);
        }
    }
    let inputs = DenseMatrix::new(labels.len(), spec.input_dim, values).map_err(|e| LabError::corrupt(path, e))?;
    Dataset::new(inputs, labels, split, spec.clone()).map_err(|e| LabError::corrupt(path, e))
}

/// Writes `train.csv`, `test.csv` and `spec.json` into `dir`.
pub fn write_dataset_dir(dir: &Path, train: &Dataset, test: &Dataset) -> LabResult<()> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    write_json(&dir.join(SPEC_JSON), train.spec())?;
    write_dataset_csv(&dir.join(TRAIN_CSV), train)?;
    write_dataset_csv(&dir.join(TEST_CSV), test)
}

pub struct DatasetDir {
    pub spec: SyntheticSpec,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn read_dataset_dir(dir: &Path) -> LabResult<DatasetDir> {
    let spec_path = dir.join(SPEC_JSON);
    let spec: SyntheticSpec = read_json(&spec_path)?;
    spec.validate().map_err(|e| LabError::corrupt(&spec_path, e))?;
    Ok(DatasetDir {
        train: read_dataset_csv(&dir.join(TRAIN_CSV), Split::Train, &spec)?,
        test: read_dataset_csv(&dir.join(TEST_CSV), Split::Test, &spec)?,
        spec,
    })
}

pub const LOG_COLUMNS: [&str; 10] = [
    "epoch",
    "lr",
    "ce",
    "mcc",
    "clg",
    "total",
    "train_accuracy",
    "test_accuracy",
    "center_drift",
    "recovery_rate",
];

/// One row per epoch; a missing test accuracy is an empty field.
pub fn write_train_log(path: &Path, log: &TrainLog) -> LabResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(LOG_COLUMNS).map_err(|e| LabError::io(path, e))?;
    for r in &log.records {
        let test = r.test_accuracy.map(|v| v.to_string()).unwrap_or_default();
        let row = [
            r.epoch.to_string(),
            r.lr.to_string(),
            r.ce.to_string(),
            r.mcc.to_string(),
            r.clg.to_string(),
            r.total.to_string(),
            r.train_accuracy.to_string(),
            test,
            r.center_drift.to_string(),
            r.recovery_rate.to_string(),
        ];
        w.write_record(&row).map_err(|e| LabError::io(path, e))?;
    }
    finish(path, w)
}

pub fn read_train_log(path: &Path) -> LabResult<TrainLog> {
    let file = fs::File::open(path).map_err(|e| LabError::missing(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers().map_err(|e| LabError::corrupt(path, e))?.clone();
    if header.iter().ne(LOG_COLUMNS) {
        return Err(LabError::corrupt(path, "unexpected train log columns"));
    }
    let mut records = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| LabError::corrupt(path, e))?;
        let f = |i: usize| -> LabResult<f64> { rec[i].parse().map_err(|e| LabError::corrupt(path, e)) };
        records.push(EpochRecord {
            epoch: rec[0].parse().map_err(|e| LabError::corrupt(path, e))?,
            lr: f(1)?,
            ce: f(2)?,
            mcc: f(3)?,
            clg: f(4)?,
            total: f(5)?,
            train_accuracy: f(6)?,
            test_accuracy: if rec[7].is_empty() { None } else { Some(f(7)?) },
            center_drift: f(8)?,
            recovery_rate: f(9)?,
        });
    }
    Ok(TrainLog { records })
}

/// `snapshots/epoch_NNN.csv`, rows `class,f0,...,f{D-1}`.
pub fn write_snapshots(dir: &Path, history: &SnapshotHistory) -> LabResult<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    let mut paths = Vec::new();
    for snap in history.snapshots() {
        let path = dir.join(format!("epoch_{:03}.csv", snap.epoch()));
        let mut w = csv_writer(&path)?;
        let d = snap.center_features().cols();
        let header: Vec<String> = std::iter::once("class".to_string())
            .chain((0..d).map(|j| format!("f{j}")))
            .collect();
        w.write_record(&header).map_err(|e| LabError::io(&path, e))?;
        for (c, row) in snap.center_features().iter_rows().enumerate() {
            w.write_record(row_strings(c.to_string(), row))
                .map_err(|e| LabError::io(&path, e))?;
        }
        finish(&path, w)?;
        paths.push(path);
    }
    Ok(paths)
}

/// `label,pc1,pc2`.
pub fn write_projection(path: &Path, labels: &[usize], coords: &DenseMatrix) -> LabResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["label", "pc1", "pc2"]).map_err(|e| LabError::io(path, e))?;
    for (row, &y) in coords.iter_rows().zip(labels) {
        w.write_record(row_strings(y.to_string(), row))
            .map_err(|e| LabError::io(path, e))?;
    }
    finish(path, w)
}
