//! Running-mean class centers.
//!
//! Each class keeps the mean of every feature vector and every logit vector
//! submitted for it, plus the number of submissions. The stored mean is
//! updated in place as `(x + c·mean) / (c + 1)`, so with `c = 0` the random
//! initial row carries no weight after the first update.

use alloc::vec::Vec;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, euclidean_distance, DenseMatrix};

/// Half-width of the uniform range used to initialize unseen centers.
pub const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBank")]
pub struct CenterBank {
    num_classes: usize,
    feature_dim: usize,
    rng_seed: u64,
    center_features: DenseMatrix,
    center_logits: DenseMatrix,
    counters: Vec<u64>,
}

impl CenterBank {
    /// Random bank: features and logits i.i.d. uniform on `[-0.1, 0.1]`.
    pub fn new(num_classes: usize, feature_dim: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidShape("a center bank needs at least two classes"));
        }
        if feature_dim < 1 {
            return Err(Error::InvalidShape("feature dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Uniform::new_inclusive(-INIT_RANGE, INIT_RANGE).expect("valid range");
        let center_features =
            DenseMatrix::from_fn(num_classes, feature_dim, |_, _| dist.sample(&mut rng));
        let center_logits =
            DenseMatrix::from_fn(num_classes, num_classes, |_, _| dist.sample(&mut rng));
        Ok(Self {
            num_classes,
            feature_dim,
            rng_seed: seed,
            center_features,
            center_logits,
            counters: alloc::vec![0; num_classes],
        })
    }

    /// Reassembles a bank from stored parts (used when loading runs).
    pub fn from_parts(
        center_features: DenseMatrix,
        center_logits: DenseMatrix,
        counters: Vec<u64>,
        rng_seed: u64,
    ) -> Result<Self> {
        let n = center_features.rows();
        if n < 2 {
            return Err(Error::InvalidShape("a center bank needs at least two classes"));
        }
        if center_logits.rows() != n || center_logits.cols() != n {
            return Err(Error::ShapeMismatch {
                context: "center logits",
                expected: n,
                found: center_logits.rows(),
            });
        }
        if counters.len() != n {
            return Err(Error::ShapeMismatch {
                context: "center counters",
                expected: n,
                found: counters.len(),
            });
        }
        Ok(Self {
            num_classes: n,
            feature_dim: center_features.cols(),
            rng_seed,
            center_features,
            center_logits,
            counters,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn center_features(&self) -> &DenseMatrix {
        &self.center_features
    }

    pub fn center_logits(&self) -> &DenseMatrix {
        &self.center_logits
    }

    pub fn counters(&self) -> &[u64] {
        &self.counters
    }

    pub fn feature_center(&self, class: usize) -> &[f64] {
        self.center_features.row(class)
    }

    pub fn logit_center(&self, class: usize) -> &[f64] {
        self.center_logits.row(class)
    }

    /// Folds one sample into the running means of `class`.
    pub fn update_center(&mut self, class: usize, feature: &[f64], logits: &[f64]) -> Result<()> {
        if class >= self.num_classes {
            return Err(Error::IndexOutOfRange {
                index: class,
                len: self.num_classes,
            });
        }
        if feature.len() != self.feature_dim {
            return Err(Error::ShapeMismatch {
                context: "center feature",
                expected: self.feature_dim,
                found: feature.len(),
            });
        }
        if logits.len() != self.num_classes {
            return Err(Error::ShapeMismatch {
                context: "center logits",
                expected: self.num_classes,
                found: logits.len(),
            });
        }
        if !all_finite(feature) || !all_finite(logits) {
            return Err(Error::NonFiniteInput("center update"));
        }
        let count = self.counters[class] as f64;
        let inv = 1.0 / (count + 1.0);
        running_mean(self.center_features.row_mut(class), feature, count, inv);
        running_mean(self.center_logits.row_mut(class), logits, count, inv);
        self.counters[class] += 1;
        Ok(())
    }

    /// Zeroes every counter, keeping the stored means. The next update of
    /// each class then replaces its row outright.
    pub fn reset_counters(&mut self) {
        self.counters.iter_mut().for_each(|c| *c = 0);
    }

    pub fn total_updates(&self) -> u64 {
        self.counters.iter().sum()
    }

    pub fn unseen_classes(&self) -> Vec<usize> {
        (0..self.num_classes).filter(|&c| self.counters[c] == 0).collect()
    }
}

#[derive(Deserialize)]
struct RawBank {
    rng_seed: u64,
    center_features: DenseMatrix,
    center_logits: DenseMatrix,
    counters: Vec<u64>,
}

impl TryFrom<RawBank> for CenterBank {
    type Error = Error;

    fn try_from(raw: RawBank) -> Result<Self> {
        CenterBank::from_parts(raw.center_features, raw.center_logits, raw.counters, raw.rng_seed)
    }
}

#[inline]
fn running_mean(row: &mut [f64], x: &[f64], count: f64, inv: f64) {
    for (m, &v) in row.iter_mut().zip(x) {
        *m = (v + count * *m) * inv;
    }
}

/// Copy of the center features at the end of an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterSnapshot {
    epoch: u64,
    center_features: DenseMatrix,
}

impl CenterSnapshot {
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn center_features(&self) -> &DenseMatrix {
        &self.center_features
    }
}

/// Ordered snapshots; epochs strictly increase.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHistory {
    snapshots: Vec<CenterSnapshot>,
}

impl SnapshotHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores a deep copy of the bank's center features under `epoch`.
    pub fn take_snapshot(&mut self, bank: &CenterBank, epoch: u64) -> Result<&CenterSnapshot> {
        if let Some(last) = self.snapshots.last() {
            if epoch <= last.epoch {
                return Err(Error::NonMonotonicEpoch {
                    last: last.epoch,
                    requested: epoch,
                });
            }
        }
        self.snapshots.push(CenterSnapshot {
            epoch,
            center_features: bank.center_features.clone(),
        });
        Ok(self.snapshots.last().expect("just pushed"))
    }

    pub fn snapshots(&self) -> &[CenterSnapshot] {
        &self.snapshots
    }

    pub fn last(&self) -> Option<&CenterSnapshot> {
        self.snapshots.last()
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub per_class: Vec<f64>,
    pub mean: f64,
}

/// Per-class Euclidean distance between two snapshots' center rows.
pub fn center_drift(a: &CenterSnapshot, b: &CenterSnapshot) -> Result<DriftReport> {
    let (fa, fb) = (&a.center_features, &b.center_features);
    if fa.rows() != fb.rows() || fa.cols() != fb.cols() {
        return Err(Error::ShapeMismatch {
            context: "center_drift",
            expected: fa.rows() * fa.cols(),
            found: fb.rows() * fb.cols(),
        });
    }
    let per_class: Vec<f64> = fa
        .iter_rows()
        .zip(fb.iter_rows())
        .map(|(ra, rb)| euclidean_distance(ra, rb))
        .collect();
    let mean = per_class.iter().sum::<f64>() / per_class.len() as f64;
    Ok(DriftReport { per_class, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn init_is_deterministic_and_zero_counted() {
        assert_eq!(CenterBank::new(3, 4, 7).unwrap(), CenterBank::new(3, 4, 7).unwrap());
        assert_ne!(CenterBank::new(3, 4, 7).unwrap(), CenterBank::new(3, 4, 8).unwrap());
        let b = CenterBank::new(5, 2, 42).unwrap();
        assert!(b.counters().iter().all(|&c| c == 0));
        assert!(b
            .center_features()
            .as_slice()
            .iter()
            .chain(b.center_logits().as_slice())
            .all(|v| v.abs() <= INIT_RANGE));
    }

    #[test]
    fn init_rejects_bad_shapes() {
        assert!(matches!(CenterBank::new(1, 4, 0), Err(Error::InvalidShape(_))));
        assert!(matches!(CenterBank::new(3, 0, 0), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn first_updates_are_exact_means() {
        let mut b = CenterBank::new(2, 2, 1).unwrap();
        let other = b.feature_center(1).to_vec();
        b.update_center(0, &[2.0, 0.0], &[1.0, -1.0]).unwrap();
        assert_eq!(b.feature_center(0), &[2.0, 0.0]);
        assert_eq!(b.logit_center(0), &[1.0, -1.0]);
        assert_eq!(b.counters(), &[1, 0]);
        b.update_center(0, &[0.0, 2.0], &[3.0, 1.0]).unwrap();
        assert_eq!(b.feature_center(0), &[1.0, 1.0]);
        assert_eq!(b.logit_center(0), &[2.0, 0.0]);
        assert_eq!(b.counters(), &[2, 0]);
        assert_eq!(b.feature_center(1), other.as_slice());
    }

    #[test]
    fn update_errors() {
        let mut b = CenterBank::new(3, 2, 1).unwrap();
        assert_eq!(
            b.update_center(3, &[0.0; 2], &[0.0; 3]),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        );
        assert!(matches!(
            b.update_center(0, &[0.0; 3], &[0.0; 3]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            b.update_center(0, &[0.0; 2], &[0.0; 2]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(b.update_center(0, &[f64::NAN, 0.0], &[0.0; 3]).is_err());
        assert_eq!(b.total_updates(), 0);
    }

    #[test]
    fn streamed_mean_matches_batch_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let d = 6;
        let mut b = CenterBank::new(3, d, 0).unwrap();
        let stream: Vec<Vec<f64>> = (0..1000)
            .map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        for x in &stream {
            b.update_center(2, x, &[0.0, 0.0, 0.0]).unwrap();
        }
        // sum-then-divide oracle
        for j in 0..d {
            let mean = stream.iter().map(|x| x[j]).sum::<f64>() / stream.len() as f64;
            assert!((b.feature_center(2)[j] - mean).abs() <= 1e-9);
        }
        assert_eq!(b.counters(), &[0, 0, 1000]);
    }

    #[test]
    fn snapshots_copy_and_order() {
        let mut b = CenterBank::new(2, 3, 5).unwrap();
        let mut h = SnapshotHistory::new();
        let s1 = h.take_snapshot(&b, 1).unwrap().clone();
        let s2 = h.take_snapshot(&b, 2).unwrap().clone();
        let d = center_drift(&s1, &s2).unwrap();
        assert_eq!(d.per_class, vec![0.0, 0.0]);
        assert_eq!(d.mean, 0.0);
        b.update_center(0, &[9.0, 9.0, 9.0], &[0.0, 0.0]).unwrap();
        assert_eq!(h.snapshots()[0], s1);
        assert_ne!(h.snapshots()[0].center_features().row(0), b.feature_center(0));
        assert_eq!(
            h.take_snapshot(&b, 1).unwrap_err(),
            Error::NonMonotonicEpoch { last: 2, requested: 1 }
        );
        assert!(h.take_snapshot(&b, 2).is_err());
        assert_eq!(h.len(), 2);
    }

    #[test]
    fn drift_three_four_five() {
        let mut b = CenterBank::new(2, 3, 5).unwrap();
        b.update_center(1, &[0.0, 0.0, 1.0], &[0.0, 0.0]).unwrap();
        let mut h = SnapshotHistory::new();
        let a = h.take_snapshot(&b, 0).unwrap().clone();
        b.reset_counters();
        b.update_center(1, &[3.0, 4.0, 1.0], &[0.0, 0.0]).unwrap();
        let c = h.take_snapshot(&b, 1).unwrap().clone();
        let d = center_drift(&a, &c).unwrap();
        assert_eq!(d.per_class, vec![0.0, 5.0]);
        assert_eq!(d.mean, 2.5);
    }

    #[test]
    fn drift_shape_mismatch() {
        let mut h1 = SnapshotHistory::new();
        let mut h2 = SnapshotHistory::new();
        let a = h1.take_snapshot(&CenterBank::new(2, 3, 0).unwrap(), 0).unwrap();
        let b = h2.take_snapshot(&CenterBank::new(2, 4, 0).unwrap(), 0).unwrap();
        assert!(matches!(center_drift(a, b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn drift_matches_direct_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut h1 = SnapshotHistory::new();
        let mut h2 = SnapshotHistory::new();
        let a = h1.take_snapshot(&CenterBank::new(4, 7, 1).unwrap(), 0).unwrap();
        let mut bank = CenterBank::new(4, 7, 2).unwrap();
        for c in 0..4 {
            let x: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
            bank.update_center(c, &x, &[0.0; 4]).unwrap();
        }
        let b = h2.take_snapshot(&bank, 0).unwrap();
        let d = center_drift(a, b).unwrap();
        for c in 0..4 {
            let mut ss = 0.0;
            for j in 0..7 {
                let diff = a.center_features().get(c, j) - b.center_features().get(c, j);
                ss += diff * diff;
            }
            assert!((d.per_class[c] - ss.sqrt()).abs() <= 1e-12);
        }
    }

    proptest! {
        #[test]
        fn order_does_not_matter(
            stream in proptest::collection::vec(
                (0usize..3, proptest::collection::vec(-10.0f64..10.0, 4)), 1..60),
            perm_seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let mut shuffled = stream.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
            let mut a = CenterBank::new(3, 4, 0).unwrap();
            let mut b = CenterBank::new(3, 4, 0).unwrap();
            for (c, x) in &stream {
                a.update_center(*c, x, &x[..3]).unwrap();
            }
            for (c, x) in &shuffled {
                b.update_center(*c, x, &x[..3]).unwrap();
            }
            prop_assert_eq!(a.total_updates(), stream.len() as u64);
            prop_assert_eq!(a.counters(), b.counters());
            for (u, v) in a.center_features().as_slice().iter().zip(b.center_features().as_slice()) {
                prop_assert!((u - v).abs() <= 1e-9);
            }
            for (u, v) in a.center_logits().as_slice().iter().zip(b.center_logits().as_slice()) {
                prop_assert!((u - v).abs() <= 1e-9);
            }
        }
    }
}
