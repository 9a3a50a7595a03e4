//! Gaussian "fine-grained" datasets.
//!
//! Classes come in superclusters: every class center is its supercluster's
//! center plus a small offset, so siblings inside a supercluster are much
//! closer to each other than to anything outside it. Samples are the class
//! center plus isotropic noise. Train and test share the class centers and
//! draw independent noise.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{squared_distance, DenseMatrix};
use crate::metrics::class_centroids;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_superclusters: usize,
    pub subclasses_per_cluster: usize,
    pub input_dim: usize,
    pub samples_per_class_train: usize,
    pub samples_per_class_test: usize,
    pub sigma_super: f64,
    pub sigma_sub: f64,
    pub sigma_noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// 4 superclusters × 3 subclasses in 16 dimensions, σ = 10 / 1 / 0.3,
    /// 50 train and 50 test samples per class.
    pub fn reference() -> Self {
        Self {
            num_superclusters: 4,
            subclasses_per_cluster: 3,
            input_dim: 16,
            samples_per_class_train: 50,
            samples_per_class_test: 50,
            sigma_super: 10.0,
            sigma_sub: 1.0,
            sigma_noise: 0.3,
            seed: 2024,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_superclusters * self.subclasses_per_cluster
    }

    pub fn supercluster_of(&self, class: usize) -> usize {
        class / self.subclasses_per_cluster
    }

    pub fn samples_per_class(&self, split: Split) -> usize {
        match split {
            Split::Train => self.samples_per_class_train,
            Split::Test => self.samples_per_class_test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_superclusters == 0 || self.subclasses_per_cluster == 0 {
            return Err(Error::InvalidSpec(
                "num_superclusters and subclasses_per_cluster must be positive",
            ));
        }
        if self.num_classes() < 2 {
            return Err(Error::InvalidSpec("need at least two classes"));
        }
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be positive"));
        }
        if self.samples_per_class_train == 0 || self.samples_per_class_test == 0 {
            return Err(Error::InvalidSpec("samples per class must be positive"));
        }
        let sigmas = [self.sigma_super, self.sigma_sub, self.sigma_noise];
        if sigmas.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidSpec("sigmas must be finite"));
        }
        if self.sigma_noise <= 0.0 {
            return Err(Error::InvalidSpec("sigma_noise must be > 0"));
        }
        if self.sigma_sub <= self.sigma_noise {
            return Err(Error::InvalidSpec("sigma_sub must exceed sigma_noise"));
        }
        if self.sigma_super <= self.sigma_sub {
            return Err(Error::InvalidSpec("sigma_super must exceed sigma_sub"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DenseMatrix,
    labels: Vec<usize>,
    split: Split,
    spec: SyntheticSpec,
}

impl Dataset {
    /// Checks class balance against the spec.
    pub fn new(inputs: DenseMatrix, labels: Vec<usize>, split: Split, spec: SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.num_classes();
        if inputs.rows() != labels.len() {
            return Err(Error::ShapeMismatch {
                context: "dataset labels",
                expected: inputs.rows(),
                found: labels.len(),
            });
        }
        if inputs.cols() != spec.input_dim {
            return Err(Error::ShapeMismatch {
                context: "dataset input_dim",
                expected: spec.input_dim,
                found: inputs.cols(),
            });
        }
        let mut counts = alloc::vec![0usize; n];
        for &y in &labels {
            if y >= n {
                return Err(Error::IndexOutOfRange { index: y, len: n });
            }
            counts[y] += 1;
        }
        let want = spec.samples_per_class(split);
        if let Some(bad) = counts.iter().position(|&c| c != want) {
            return Err(Error::ShapeMismatch {
                context: "samples per class",
                expected: want,
                found: counts[bad],
            });
        }
        Ok(Self {
            inputs,
            labels,
            split,
            spec,
        })
    }

    pub fn inputs(&self) -> &DenseMatrix {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    sigma * z
}

/// Draws supercluster centers, then class centers. Returns the class
/// centers and the generator positioned for sample noise.
fn draw_centers(spec: &SyntheticSpec) -> (DenseMatrix, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.input_dim;
    let supers = DenseMatrix::from_fn(spec.num_superclusters, dim, |_, _| {
        gaussian(&mut rng, spec.sigma_super)
    });
    let centers = DenseMatrix::from_fn(spec.num_classes(), dim, |c, j| {
        supers.get(spec.supercluster_of(c), j) + gaussian(&mut rng, spec.sigma_sub)
    });
    (centers, rng)
}

/// True class centers (`N × input_dim`) of a spec.
pub fn class_centers(spec: &SyntheticSpec) -> Result<DenseMatrix> {
    spec.validate()?;
    Ok(draw_centers(spec).0)
}

/// Train and test sets, class-major row order. A pure function of `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let (centers, mut rng) = draw_centers(spec);
    let mut draw = |split: Split| {
        let per = spec.samples_per_class(split);
        let n = spec.num_classes();
        let labels: Vec<usize> = (0..n).flat_map(|c| core::iter::repeat_n(c, per)).collect();
        let inputs = DenseMatrix::from_fn(n * per, spec.input_dim, |r, j| {
            centers.get(labels[r], j) + gaussian(&mut rng, spec.sigma_noise)
        });
        Dataset::new(inputs, labels, split, spec.clone())
    };
    let train = draw(Split::Train)?;
    let test = draw(Split::Test)?;
    Ok((train, test))
}

/// For each class, the class whose empirical input centroid is nearest
/// (Euclidean), itself excluded, lowest index on ties.
pub fn class_affinity_oracle(train: &Dataset) -> Result<Vec<usize>> {
    let n = train.num_classes();
    let centroids = class_centroids(train.inputs(), train.labels(), n, 1)?;
    Ok(nearest_other_rows(&centroids))
}

pub(crate) fn nearest_other_rows(points: &DenseMatrix) -> Vec<usize> {
    let n = points.rows();
    (0..n)
        .map(|y| {
            let mut best = (usize::MAX, f64::INFINITY);
            for w in (0..n).filter(|&w| w != y) {
                let d = squared_distance(points.row(y), points.row(w));
                if d < best.1 {
                    best = (w, d);
                }
            }
            best.0
        })
        .collect()
}
