//! Mini-batch training of an [`MlpModel`] under cross-entropy plus the
//! class-center terms.
//!
//! Per batch: forward pass, similarity matrix from the current bank, combined
//! loss, backpropagation, one SGD-momentum step, and only then the center
//! updates (one per sample, in batch order, with the forward-pass features
//! and logits). The loss therefore never sees the batch's own contribution
//! to the centers.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bank::{center_drift, CenterBank, SnapshotHistory};
use crate::error::{Error, Result};
use crate::linalg::argmax;
use crate::loss::{build_similarity, final_loss, Batch, LossWeights};
use crate::mlp::{MlpModel, Momentum};
use crate::synthetic::{class_affinity_oracle, Dataset};

/// Named weight settings for the two class-center terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "AIR")]
    Air,
    #[serde(rename = "CUB")]
    Cub,
    #[serde(rename = "CAR")]
    Car,
    #[serde(rename = "NAB")]
    Nab,
    #[serde(rename = "iNat2018")]
    INat2018,
    #[serde(rename = "none")]
    Custom,
}

impl Preset {
    /// `(λ_mcc, λ_clg)` pinned by the preset; `None` for [`Preset::Custom`].
    pub fn weights(self) -> Option<LossWeights> {
        let (mcc, clg) = match self {
            Preset::Air => (1.4, 0.2),
            Preset::Cub => (1.7, 0.6),
            Preset::Car => (1.4, 0.3),
            Preset::Nab => (0.7, 0.08),
            Preset::INat2018 => (0.05, 0.001),
            Preset::Custom => return None,
        };
        Some(LossWeights { mcc, clg })
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Air => "AIR",
            Preset::Cub => "CUB",
            Preset::Car => "CAR",
            Preset::Nab => "NAB",
            Preset::INat2018 => "iNat2018",
            Preset::Custom => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_mcc: f64,
    pub lambda_clg: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub lr_decay_every: usize,
    pub lr_decay_factor: f64,
    pub reset_counters_each_epoch: bool,
    pub shuffle_seed: u64,
    pub preset: Preset,
}

impl TrainConfig {
    /// Defaults for the synthetic setting: batch 32, 40 epochs, lr 0.01,
    /// momentum 0.9, lr × 0.1 every 15 epochs. Plain cross-entropy.
    pub fn reference() -> Self {
        Self {
            lambda_mcc: 0.0,
            lambda_clg: 0.0,
            batch_size: 32,
            epochs: 40,
            lr0: 0.01,
            momentum: 0.9,
            lr_decay_every: 15,
            lr_decay_factor: 0.1,
            reset_counters_each_epoch: false,
            shuffle_seed: 7,
            preset: Preset::Custom,
        }
    }

    /// Same schedule with the preset's weights.
    pub fn with_preset(mut self, preset: Preset) -> Self {
        if let Some(w) = preset.weights() {
            self.lambda_mcc = w.mcc;
            self.lambda_clg = w.clg;
        }
        self.preset = preset;
        self
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            mcc: self.lambda_mcc,
            clg: self.lambda_clg,
        }
    }

    /// Learning rate used during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = (epoch.saturating_sub(1) / self.lr_decay_every) as i32;
        self.lr0 * libm::pow(self.lr_decay_factor, decays as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.lambda_mcc >= 0.0 && self.lambda_clg >= 0.0)
            || !self.lambda_mcc.is_finite()
            || !self.lambda_clg.is_finite()
        {
            return bad("lambda_mcc and lambda_clg must be finite and nonnegative");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.lr_decay_every == 0 {
            return bad("batch_size, epochs and lr_decay_every must be positive");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return bad("lr_decay_factor must lie in (0, 1)");
        }
        if let Some(w) = self.preset.weights() {
            if w != self.weights() {
                return Err(Error::InvalidConfig(format!(
                    "preset {} pins lambda_mcc={} lambda_clg={}, config has {} and {}",
                    self.preset.name(),
                    w.mcc,
                    w.clg,
                    self.lambda_mcc,
                    self.lambda_clg
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub ce: f64,
    pub mcc: f64,
    pub clg: f64,
    pub total: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    /// Mean per-class center drift against the previous epoch's snapshot.
    pub center_drift: f64,
    /// Fraction of classes whose most similar center matches the nearest
    /// class in input space.
    pub recovery_rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub bank: CenterBank,
    pub log: TrainLog,
    /// Epoch 0 (before training) and the end of every epoch.
    pub snapshots: SnapshotHistory,
}

/// Hooks into the training loop. All methods default to no-ops.
pub trait TrainObserver {
    /// Called with the bank state the batch's loss is computed against.
    fn before_loss(&mut self, _epoch: usize, _batch: usize, _labels: &[usize], _bank: &CenterBank) {}

    fn epoch_end(&mut self, _record: &EpochRecord) {}
}

impl TrainObserver for () {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<u64>>,
}

/// Argmax accuracy (lowest index on ties) and confusion counts.
pub fn evaluate(model: &MlpModel, data: &Dataset) -> Result<Evaluation> {
    let n = data.num_classes();
    if model.num_classes() != n {
        return Err(Error::ShapeMismatch {
            context: "model classes vs dataset",
            expected: n,
            found: model.num_classes(),
        });
    }
    let pass = model.forward(data.inputs())?;
    let mut confusion = vec![vec![0u64; n]; n];
    let mut correct = 0u64;
    for (z, &y) in pass.logits().iter_rows().zip(data.labels()) {
        let p = argmax(z);
        confusion[y][p] += 1;
        correct += u64::from(p == y);
    }
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        confusion,
    })
}

pub fn train(
    model: MlpModel,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    bank: CenterBank,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_observed(model, train_data, test_data, bank, cfg, &mut ())
}

pub fn train_observed(
    mut model: MlpModel,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
    mut bank: CenterBank,
    cfg: &TrainConfig,
    observer: &mut impl TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = train_data.num_classes();
    if model.input_dim() != train_data.inputs().cols() {
        return Err(Error::ShapeMismatch {
            context: "model input vs dataset",
            expected: train_data.inputs().cols(),
            found: model.input_dim(),
        });
    }
    if model.num_classes() != n || bank.num_classes() != n {
        return Err(Error::ShapeMismatch {
            context: "class count of model/bank vs dataset",
            expected: n,
            found: if model.num_classes() != n { model.num_classes() } else { bank.num_classes() },
        });
    }
    if bank.feature_dim() != model.feature_dim() {
        return Err(Error::ShapeMismatch {
            context: "bank feature dim vs model",
            expected: model.feature_dim(),
            found: bank.feature_dim(),
        });
    }
    let affinity = class_affinity_oracle(train_data)?;
    let weights = cfg.weights();
    let mut optimizer = Momentum::new(&model, cfg.momentum);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut snapshots = SnapshotHistory::new();
    snapshots.take_snapshot(&bank, 0)?;
    let mut log = TrainLog::default();

    for epoch in 1..=cfg.epochs {
        if cfg.reset_counters_each_epoch {
            bank.reset_counters();
        }
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut batches = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let fail = |cause: Error| Error::Training {
                epoch,
                batch: b,
                cause: alloc::boxed::Box::new(cause),
            };
            let inputs = train_data.inputs().select_rows(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| train_data.labels()[i]).collect();
            let pass = model.forward(&inputs)?;
            if !pass.logits().is_finite() || !pass.features().is_finite() {
                return Err(Error::NonFinite { epoch, batch: b });
            }
            observer.before_loss(epoch, b, &labels, &bank);
            let batch = Batch::new(pass.features().clone(), pass.logits().clone(), labels)
                .map_err(fail)?;
            let sim = build_similarity(&bank).map_err(fail)?;
            let loss = final_loss(&batch, &bank, &sim, weights).map_err(fail)?;
            if !loss.total.is_finite() {
                return Err(Error::NonFinite { epoch, batch: b });
            }
            let grads = model.backward(&pass, &loss.grad_features, &loss.grad_logits)?;
            optimizer.step(&mut model, &grads, lr);
            if !model.params_finite() {
                return Err(Error::NonFinite { epoch, batch: b });
            }
            for (k, &y) in batch.labels().iter().enumerate() {
                bank.update_center(y, batch.features().row(k), batch.logits().row(k))
                    .map_err(fail)?;
            }
            for (s, v) in sums.iter_mut().zip([loss.ce, loss.mcc, loss.clg, loss.total]) {
                *s += v;
            }
            batches += 1;
        }
        let prev = snapshots.last().expect("epoch 0 snapshot").clone();
        let drift = center_drift(&prev, snapshots.take_snapshot(&bank, epoch as u64)?)?.mean;
        let sim = build_similarity(&bank)?;
        let recovered = sim
            .most_similar()
            .iter()
            .zip(&affinity)
            .filter(|(a, b)| a == b)
            .count();
        let nb = batches as f64;
        let record = EpochRecord {
            epoch,
            lr,
            ce: sums[0] / nb,
            mcc: sums[1] / nb,
            clg: sums[2] / nb,
            total: sums[3] / nb,
            train_accuracy: evaluate(&model, train_data)?.accuracy,
            test_accuracy: test_data.map(|t| evaluate(&model, t)).transpose()?.map(|e| e.accuracy),
            center_drift: drift,
            recovery_rate: recovered as f64 / n as f64,
        };
        observer.epoch_end(&record);
        log.records.push(record);
    }
    Ok(TrainOutcome {
        model,
        bank,
        log,
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SyntheticSpec};

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            num_superclusters: 2,
            subclasses_per_cluster: 2,
            input_dim: 5,
            samples_per_class_train: 6,
            samples_per_class_test: 4,
            sigma_super: 5.0,
            sigma_sub: 1.0,
            sigma_noise: 0.2,
            seed: 3,
        }
    }

    fn setup(cfg: &TrainConfig) -> (MlpModel, Dataset, Dataset, CenterBank) {
        let (train, test) = generate(&small_spec()).unwrap();
        let model = MlpModel::new(vec![5, 8, 4, 4], 1).unwrap();
        let bank = CenterBank::new(4, 4, 2).unwrap();
        let _ = cfg;
        (model, train, test, bank)
    }

    #[test]
    fn presets_pin_weights() {
        let expect = [
            (Preset::Air, 1.4, 0.2),
            (Preset::Cub, 1.7, 0.6),
            (Preset::Car, 1.4, 0.3),
            (Preset::Nab, 0.7, 0.08),
            (Preset::INat2018, 0.05, 0.001),
        ];
        for (p, a, b) in expect {
            let cfg = TrainConfig::reference().with_preset(p);
            assert_eq!((cfg.lambda_mcc, cfg.lambda_clg), (a, b));
            cfg.validate().unwrap();
        }
        let mut cfg = TrainConfig::reference().with_preset(Preset::Air);
        cfg.lambda_clg = 0.3;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        assert_eq!(Preset::Custom.weights(), None);
    }

    #[test]
    fn config_validation() {
        let base = TrainConfig::reference();
        for f in [
            (|c: &mut TrainConfig| c.batch_size = 0) as fn(&mut TrainConfig),
            |c| c.momentum = 1.0,
            |c| c.lr_decay_factor = 1.0,
            |c| c.lr0 = 0.0,
            |c| c.lambda_mcc = -0.1,
            |c| c.epochs = 0,
        ] {
            let mut c = base.clone();
            f(&mut c);
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn step_decay_schedule() {
        let cfg = TrainConfig::reference();
        assert_eq!(cfg.lr_at(1), 0.01);
        assert_eq!(cfg.lr_at(15), 0.01);
        assert!((cfg.lr_at(16) - 0.001).abs() < 1e-15);
        assert!((cfg.lr_at(31) - 0.0001).abs() < 1e-15);
    }

    #[test]
    fn ce_only_run_logs_zero_center_terms() {
        let mut cfg = TrainConfig::reference();
        cfg.epochs = 3;
        cfg.batch_size = 5;
        let (model, train, test, bank) = setup(&cfg);
        let out = super::train(model, &train, Some(&test), bank, &cfg).unwrap();
        assert_eq!(out.log.records.len(), 3);
        for (i, r) in out.log.records.iter().enumerate() {
            assert_eq!(r.epoch, i + 1);
            assert_eq!(r.mcc, 0.0);
            assert_eq!(r.clg, 0.0);
            assert_eq!(r.total, r.ce);
            assert!(r.test_accuracy.is_some());
        }
        assert_eq!(out.snapshots.len(), 4);
    }

    #[test]
    fn full_batch_epoch_counts_every_sample_once() {
        let mut cfg = TrainConfig::reference().with_preset(Preset::Air);
        cfg.epochs = 1;
        cfg.batch_size = 24;
        let (model, train, _, bank) = setup(&cfg);
        let out = super::train(model, &train, None, bank, &cfg).unwrap();
        assert_eq!(out.bank.counters(), &[6, 6, 6, 6]);
        assert_eq!(out.log.records[0].test_accuracy, None);
    }

    #[test]
    fn counter_reset_flag() {
        let mut cfg = TrainConfig::reference().with_preset(Preset::Air);
        cfg.epochs = 3;
        cfg.batch_size = 7;
        cfg.reset_counters_each_epoch = true;
        let (model, train, _, bank) = setup(&cfg);
        let out = super::train(model.clone(), &train, None, bank.clone(), &cfg).unwrap();
        assert_eq!(out.bank.counters(), &[6, 6, 6, 6]);
        cfg.reset_counters_each_epoch = false;
        let out = super::train(model, &train, None, bank, &cfg).unwrap();
        assert_eq!(out.bank.counters(), &[18, 18, 18, 18]);
    }

    struct Probe {
        seen: u64,
        batches: usize,
    }

    impl TrainObserver for Probe {
        fn before_loss(&mut self, _e: usize, _b: usize, labels: &[usize], bank: &CenterBank) {
            // the bank reflects previous batches only
            assert_eq!(bank.total_updates(), self.seen);
            self.seen += labels.len() as u64;
            self.batches += 1;
        }
    }

    #[test]
    fn loss_sees_pre_batch_bank() {
        let mut cfg = TrainConfig::reference().with_preset(Preset::Cub);
        cfg.epochs = 2;
        cfg.batch_size = 5;
        let (model, train, _, bank) = setup(&cfg);
        let mut probe = Probe { seen: 0, batches: 0 };
        let out = train_observed(model, &train, None, bank, &cfg, &mut probe).unwrap();
        assert_eq!(probe.batches, 2 * 5);
        assert_eq!(out.bank.total_updates(), 48);
    }

    #[test]
    fn runs_are_reproducible() {
        let mut cfg = TrainConfig::reference().with_preset(Preset::Air);
        cfg.epochs = 2;
        cfg.batch_size = 8;
        let (model, train, test, bank) = setup(&cfg);
        let a = super::train(model.clone(), &train, Some(&test), bank.clone(), &cfg).unwrap();
        let b = super::train(model, &train, Some(&test), bank, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model, b.model);
        assert_eq!(a.bank, b.bank);
    }

    #[test]
    fn diverging_run_reports_nonfinite() {
        let mut cfg = TrainConfig::reference();
        cfg.lr0 = 1e200;
        cfg.epochs = 2;
        let (model, train, _, bank) = setup(&cfg);
        let err = super::train(model, &train, None, bank, &cfg).unwrap_err();
        assert!(err.is_numeric(), "{err:?}");
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let cfg = TrainConfig::reference();
        let (model, train, _, _) = setup(&cfg);
        let bank = CenterBank::new(4, 3, 0).unwrap();
        assert!(matches!(
            super::train(model, &train, None, bank, &cfg),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn evaluate_degenerate_predictors() {
        let (_, train, _, _) = setup(&TrainConfig::reference());
        // all-zero weights: constant logits, argmax picks class 0
        let mut model = MlpModel::new(vec![5, 3, 2, 4], 0).unwrap();
        let zeros = vec![0.0; model.params_flat().len()];
        model.set_params_flat(&zeros).unwrap();
        let e = evaluate(&model, &train).unwrap();
        assert_eq!(e.accuracy, 0.25);
        assert_eq!(e.confusion.iter().map(|r| r[0]).sum::<u64>(), 24);
    }
}
