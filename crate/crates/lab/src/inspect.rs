//! `inspect`: rebuild reports from a finished run directory.

use std::path::Path;

use ecc_core::{CenterBank, MlpModel};

use crate::error::{LabError, LabResult};
use crate::io::{read_dataset_dir, read_json};
use crate::reports::{build_reports, summary, write_reports};
use crate::run::{RunManifest, BANK_JSON, MANIFEST_JSON, MODEL_JSON};

/// Regenerates the reports into `run_dir` and returns summary lines.
///
/// Any unreadable or inconsistent input is reported as missing or corrupt.
pub fn inspect(run_dir: &Path) -> LabResult<Vec<String>> {
    let manifest: RunManifest = read_json(&run_dir.join(MANIFEST_JSON))?;
    let model_path = run_dir.join(MODEL_JSON);
    let bank_path = run_dir.join(BANK_JSON);
    let model: MlpModel = read_json(&model_path)?;
    let bank: CenterBank = read_json(&bank_path)?;
    let data = read_dataset_dir(&manifest.config.data_dir)?;
    let n = data.spec.num_classes();
    if model.num_classes() != n || model.input_dim() != data.spec.input_dim {
        return Err(LabError::corrupt(&model_path, "model shape does not match the dataset"));
    }
    if bank.num_classes() != n || bank.feature_dim() != model.feature_dim() {
        return Err(LabError::corrupt(&bank_path, "bank shape does not match the model"));
    }
    let reports = build_reports(&model, &bank, &data.train, &data.test)
        .map_err(|e| LabError::corrupt(run_dir, e))?;
    write_reports(run_dir, &reports)?;
    let mut lines = vec![
        format!("run={}", run_dir.display()),
        format!("status={:?}", manifest.status).to_lowercase(),
        format!("classes={n} layer_dims={:?}", model.layer_dims()),
    ];
    if let Some(acc) = manifest.test_accuracy {
        lines.push(format!("test_accuracy={acc}"));
    }
    lines.extend(summary(&reports));
    Ok(lines)
}
