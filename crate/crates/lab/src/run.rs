//! Run configuration, manifest and the training pipeline behind `train`.

use std::fs;
use std::path::{Path, PathBuf};

use ecc_core::trainer::{train_observed, EpochRecord, TrainObserver};
use ecc_core::{evaluate, CenterBank, InputScaling, MlpModel, SyntheticSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};
use crate::io::{read_dataset_dir, read_json, write_json, write_snapshots, write_train_log};
use crate::reports::{build_reports, write_reports};

pub const MANIFEST_JSON: &str = "manifest.json";
pub const MODEL_JSON: &str = "model.json";
pub const BANK_JSON: &str = "bank.json";
pub const TRAIN_LOG_CSV: &str = "train_log.csv";
pub const SNAPSHOT_DIR: &str = "snapshots";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dims: Vec<usize>,
    /// Width of the feature layer, also the bank's feature dimension.
    pub feature_dim: usize,
    pub init_seed: u64,
    /// Standardize inputs with train-split column statistics.
    pub standardize_inputs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory written by `gen-data`; relative paths resolve against the
    /// config file's directory.
    pub data_dir: PathBuf,
    pub model: ModelConfig,
    pub bank_seed: u64,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn validate(&self) -> LabResult<()> {
        self.train.validate().map_err(|e| LabError::Invalid(e.to_string()))?;
        if self.model.feature_dim == 0 || self.model.hidden_dims.contains(&0) {
            return Err(LabError::Invalid("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn layer_dims(&self, input_dim: usize, num_classes: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.model.hidden_dims);
        dims.push(self.model.feature_dim);
        dims.push(num_classes);
        dims
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub model_init: u64,
    pub bank: u64,
    pub shuffle: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_path: PathBuf,
    pub out_dir: PathBuf,
    /// The config as used, with `data_dir` resolved.
    pub config: RunConfig,
    pub spec: SyntheticSpec,
    pub layer_dims: Vec<usize>,
    pub seeds: Seeds,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: RunStatus,
    pub error: Option<String>,
    pub test_accuracy: Option<f64>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn absolute(p: &Path) -> PathBuf {
    fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Reads and validates a config. Every failure is a bad-input error.
pub fn load_config(path: &Path) -> LabResult<RunConfig> {
    let mut cfg: RunConfig = read_json(path).map_err(|e| LabError::Invalid(e.to_string()))?;
    cfg.validate()?;
    if cfg.data_dir.is_relative() {
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data_dir = base.join(&cfg.data_dir);
    }
    cfg.data_dir = absolute(&cfg.data_dir);
    Ok(cfg)
}

/// Epoch progress on standard error.
struct Progress {
    epochs: usize,
}

impl TrainObserver for Progress {
    fn epoch_end(&mut self, r: &EpochRecord) {
        let test = r.test_accuracy.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        eprintln!(
            "epoch {}/{} lr={} ce={:.5} mcc={:.5} clg={:.5} train_acc={:.4} test_acc={} drift={:.5} recovery={:.3}",
            r.epoch, self.epochs, r.lr, r.ce, r.mcc, r.clg, r.train_accuracy, test, r.center_drift, r.recovery_rate
        );
    }
}

pub struct RunSummary {
    pub out_dir: PathBuf,
    pub test_accuracy: f64,
}

/// Trains per `config_path` and writes every artifact into `out_dir`.
pub fn run_train(config_path: &Path, out_dir: &Path, progress: bool) -> LabResult<RunSummary> {
    let cfg = load_config(config_path)?;
    let data = read_dataset_dir(&cfg.data_dir).map_err(|e| LabError::Invalid(e.to_string()))?;
    let n = data.spec.num_classes();
    let dims = cfg.layer_dims(data.spec.input_dim, n);

    fs::create_dir_all(out_dir).map_err(|e| LabError::io(out_dir, e))?;
    let manifest_path = out_dir.join(MANIFEST_JSON);
    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_path: absolute(config_path),
        out_dir: absolute(out_dir),
        config: cfg.clone(),
        spec: data.spec.clone(),
        layer_dims: dims.clone(),
        seeds: Seeds {
            data: data.spec.seed,
            model_init: cfg.model.init_seed,
            bank: cfg.bank_seed,
            shuffle: cfg.train.shuffle_seed,
        },
        started_at: now(),
        finished_at: None,
        status: RunStatus::Running,
        error: None,
        test_accuracy: None,
    };
    write_json(&manifest_path, &manifest)?;

    let result = (|| -> LabResult<f64> {
        let mut model = MlpModel::new(dims.clone(), cfg.model.init_seed).map_err(|e| LabError::Invalid(e.to_string()))?;
        if cfg.model.standardize_inputs {
            model = model.with_input_scaling(InputScaling::standardize(data.train.inputs())?)?;
        }
        let bank = CenterBank::new(n, cfg.model.feature_dim, cfg.bank_seed).map_err(|e| LabError::Invalid(e.to_string()))?;
        let mut observer = Progress {
            epochs: cfg.train.epochs,
        };
        let outcome = if progress {
            train_observed(model, &data.train, Some(&data.test), bank, &cfg.train, &mut observer)?
        } else {
            train_observed(model, &data.train, Some(&data.test), bank, &cfg.train, &mut ())?
        };
        write_train_log(&out_dir.join(TRAIN_LOG_CSV), &outcome.log)?;
        write_json(&out_dir.join(MODEL_JSON), &outcome.model)?;
        write_json(&out_dir.join(BANK_JSON), &outcome.bank)?;
        write_snapshots(&out_dir.join(SNAPSHOT_DIR), &outcome.snapshots)?;
        let reports = build_reports(&outcome.model, &outcome.bank, &data.train, &data.test)?;
        write_reports(out_dir, &reports)?;
        Ok(evaluate(&outcome.model, &data.test)?.accuracy)
    })();

    manifest.finished_at = Some(now());
    match &result {
        Ok(acc) => {
            manifest.status = RunStatus::Complete;
            manifest.test_accuracy = Some(*acc);
        }
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
        }
    }
    write_json(&manifest_path, &manifest)?;
    result.map(|test_accuracy| RunSummary {
        out_dir: out_dir.to_path_buf(),
        test_accuracy,
    })
}
