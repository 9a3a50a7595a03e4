//! Class-center losses for fine-grained classification.
//!
//! The crate keeps, per class, a running mean of the sample features and of
//! the raw logit vectors seen during training. Two loss terms are built on
//! top of those means:
//!
//! - the multiple class-center constraint (MCC) pulls a sample towards its
//!   own class center and pushes it away from the center of the most similar
//!   other class, both measured with cosine geometry;
//! - class-center label generation (CLG) uses the softmax of a class's mean
//!   logit vector as a soft label and trains against it with KL divergence.
//!
//! Both are combined with cross-entropy and come with analytic gradients
//! with respect to features and logits. Centers are constants for
//! backpropagation: they are running means, not parameters.
//!
//! Everything here is `no_std` + `alloc`. File formats, the command line and
//! timing live in the `ecc-lab` crate.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bank;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod mlp;
pub mod synthetic;
pub mod trainer;

pub use bank::{center_drift, CenterBank, CenterSnapshot, DriftReport, SnapshotHistory};
pub use error::{Error, Result};
pub use linalg::{cosine_similarity, kl_divergence, softmax, DenseMatrix, DenseVector};
pub use loss::{
    build_similarity, ce_loss, clg_loss, final_loss, mcc_loss, Batch, LossResult, LossWeights,
    SimilarityMatrix,
};
pub use metrics::{geometry_report, pca_project, soft_label_report, GeometryReport, SoftLabelReport};
pub use mlp::{InputScaling, MlpModel, ParamGrads};
pub use synthetic::{class_affinity_oracle, generate, Dataset, Split, SyntheticSpec};
pub use trainer::{evaluate, train, Evaluation, Preset, TrainConfig, TrainLog, TrainOutcome};
