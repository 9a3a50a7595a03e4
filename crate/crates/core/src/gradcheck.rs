//! Building blocks for checking analytic gradients against central finite
//! differences.
//!
//! Loss-level checks perturb the batch features (MCC) or logits (CLG, CE)
//! with `h = 1e-6` and require relative error at most `1e-6`. The network
//! check perturbs every parameter of a tiny MLP under the combined loss with
//! `h = 1e-5` and requires at most `1e-4`. Entries whose magnitude is below
//! `1e-8` in both gradients are compared absolutely against `1e-8`.
//!
//! This module produces the random instances and their analytic gradients.
//! The numeric side is supplied by the caller; [`central_difference`] is the
//! plain `f64` version.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bank::CenterBank;
use crate::error::Result;
use crate::linalg::DenseMatrix;
use crate::loss::{
    build_similarity, ce_loss, clg_loss, final_loss, mcc_loss, Batch, LossWeights, SimilarityMatrix,
};
use crate::mlp::MlpModel;

pub const LOSS_STEP: f64 = 1e-6;
pub const LOSS_TOLERANCE: f64 = 1e-6;
pub const NETWORK_STEP: f64 = 1e-5;
pub const NETWORK_TOLERANCE: f64 = 1e-4;
pub const SMALL_MAGNITUDE: f64 = 1e-8;

/// `(f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GradComparison {
    /// Largest `|a − n| / max(|a|, |n|)` over entries at or above the small-magnitude cutoff.
    pub max_relative_error: f64,
    /// Largest `|a − n|` over entries below the cutoff.
    pub max_small_abs_error: f64,
    pub entries: usize,
}

impl GradComparison {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error <= tolerance && self.max_small_abs_error <= SMALL_MAGNITUDE
    }

    /// Single figure of merit on the relative scale: the small-entry error
    /// is mapped so that hitting its cutoff equals hitting `tolerance`.
    pub fn badness(&self, tolerance: f64) -> f64 {
        self.max_relative_error
            .max(self.max_small_abs_error / SMALL_MAGNITUDE * tolerance)
    }

    pub fn merge(&mut self, other: &GradComparison) {
        self.max_relative_error = self.max_relative_error.max(other.max_relative_error);
        self.max_small_abs_error = self.max_small_abs_error.max(other.max_small_abs_error);
        self.entries += other.entries;
    }
}

pub fn compare_gradients(analytic: &[f64], numeric: &[f64]) -> GradComparison {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    let mut out = GradComparison {
        entries: analytic.len(),
        ..GradComparison::default()
    };
    for (&a, &n) in analytic.iter().zip(numeric) {
        let diff = (a - n).abs();
        let scale = a.abs().max(n.abs());
        if !diff.is_finite() {
            out.max_relative_error = f64::INFINITY;
        } else if scale < SMALL_MAGNITUDE {
            out.max_small_abs_error = out.max_small_abs_error.max(diff);
        } else {
            out.max_relative_error = out.max_relative_error.max(diff / scale);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Mcc,
    Clg,
    Ce,
    Network,
}

impl Component {
    pub const ALL: [Component; 4] = [Component::Mcc, Component::Clg, Component::Ce, Component::Network];

    pub fn name(self) -> &'static str {
        match self {
            Component::Mcc => "mcc",
            Component::Clg => "clg",
            Component::Ce => "ce",
            Component::Network => "network",
        }
    }

    pub fn step(self) -> f64 {
        match self {
            Component::Network => NETWORK_STEP,
            _ => LOSS_STEP,
        }
    }

    pub fn tolerance(self) -> f64 {
        match self {
            Component::Network => NETWORK_TOLERANCE,
            _ => LOSS_TOLERANCE,
        }
    }
}

impl core::str::FromStr for Component {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| crate::error::Error::InvalidConfig(alloc::format!("unknown component {s:?}")))
    }
}

/// Perturbs the analytic gradient of one component. Negative control for a
/// checking harness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fault {
    pub component: Component,
    pub scale: f64,
}

impl Fault {
    /// Scales the first entry and shifts it by `1e-3`, if `component` matches.
    pub fn apply(self, component: Component, grad: &mut [f64]) {
        if self.component == component {
            if let Some(g) = grad.first_mut() {
                *g = *g * self.scale + 1e-3;
            }
        }
    }
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// Random bank whose rows all carry one update.
fn random_bank(rng: &mut ChaCha8Rng, n: usize, d: usize) -> CenterBank {
    let mut bank = CenterBank::new(n, d, rng.next_u64()).expect("n >= 2, d >= 1");
    for c in 0..n {
        let f = normal_matrix(rng, 1, d, 1.0);
        let l = normal_matrix(rng, 1, n, 2.0);
        bank.update_center(c, f.row(0), l.row(0)).expect("shapes match");
    }
    bank
}

/// A random loss-level instance: `(M, D, N)` drawn from
/// `{1..8} × {2..16} × {2..10}`, standard-normal features, logits with
/// standard deviation 3.
#[derive(Debug, Clone)]
pub struct LossInstance {
    pub batch: Batch,
    pub bank: CenterBank,
    pub sim: SimilarityMatrix,
}

impl LossInstance {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(1..=8);
        let d = rng.random_range(2..=16);
        let n = rng.random_range(2..=10);
        let bank = random_bank(&mut rng, n, d);
        let features = normal_matrix(&mut rng, m, d, 1.0);
        let logits = normal_matrix(&mut rng, m, n, 3.0);
        let labels = (0..m).map(|_| rng.random_range(0..n)).collect();
        let batch = Batch::new(features, logits, labels).expect("valid random batch");
        let sim = build_similarity(&bank).expect("random centers are non-degenerate");
        Self { batch, bank, sim }
    }

    /// The perturbed input of `component`: features for MCC, logits otherwise.
    pub fn inputs(&self, component: Component) -> &DenseMatrix {
        match component {
            Component::Mcc => self.batch.features(),
            _ => self.batch.logits(),
        }
    }

    pub fn analytic_gradient(&self, component: Component) -> Result<Vec<f64>> {
        let g = match component {
            Component::Mcc => mcc_loss(&self.batch, &self.bank, &self.sim)?.1,
            Component::Clg => clg_loss(&self.batch, &self.bank)?.1,
            Component::Ce => ce_loss(&self.batch)?.1,
            Component::Network => {
                return Err(crate::error::Error::InvalidConfig(
                    "network gradients come from NetworkInstance".into(),
                ))
            }
        };
        Ok(g.as_slice().to_vec())
    }
}

/// A tiny network `[input, hidden, D, N]` with every width in `2..=6`,
/// `M ≤ 4` samples, random biases, a fixed random bank and random positive
/// loss weights.
#[derive(Debug, Clone)]
pub struct NetworkInstance {
    pub model: MlpModel,
    pub bank: CenterBank,
    pub sim: SimilarityMatrix,
    pub inputs: DenseMatrix,
    pub labels: Vec<usize>,
    pub weights: LossWeights,
}

impl NetworkInstance {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = rng.random_range(2..=6);
        let hidden = rng.random_range(2..=6);
        let d = rng.random_range(2..=6);
        let n = rng.random_range(2..=6);
        let m = rng.random_range(1..=4);
        let mut model = MlpModel::new(vec![input, hidden, d, n], rng.next_u64()).expect("positive widths");
        // Nonzero biases keep features away from zero when every ReLU is off.
        let params: Vec<f64> = model
            .params_flat()
            .iter()
            .map(|&p| {
                let z: f64 = StandardNormal.sample(&mut rng);
                p + 0.5 * z
            })
            .collect();
        model.set_params_flat(&params).expect("same length");
        let bank = random_bank(&mut rng, n, d);
        let sim = build_similarity(&bank).expect("random centers are non-degenerate");
        let inputs = normal_matrix(&mut rng, m, input, 1.0);
        let labels = (0..m).map(|_| rng.random_range(0..n)).collect();
        let weights = LossWeights {
            mcc: rng.random_range(0.1..2.0),
            clg: rng.random_range(0.01..1.0),
        };
        Self {
            model,
            bank,
            sim,
            inputs,
            labels,
            weights,
        }
    }

    /// Combined loss at the model's current parameters.
    pub fn loss(&self, model: &MlpModel) -> Result<f64> {
        let pass = model.forward(&self.inputs)?;
        let batch = Batch::new(pass.features().clone(), pass.logits().clone(), self.labels.clone())?;
        Ok(final_loss(&batch, &self.bank, &self.sim, self.weights)?.total)
    }

    /// Parameter gradient, flattened like [`MlpModel::params_flat`].
    pub fn analytic_gradient(&self) -> Result<Vec<f64>> {
        let pass = self.model.forward(&self.inputs)?;
        let batch = Batch::new(pass.features().clone(), pass.logits().clone(), self.labels.clone())?;
        let r = final_loss(&batch, &self.bank, &self.sim, self.weights)?;
        Ok(self.model.backward(&pass, &r.grad_features, &r.grad_logits)?.flatten())
    }
}

/// Seed of trial `index` under a base seed (one splitmix64 step).
pub fn trial_seed(base: u64, index: usize) -> u64 {
    let mut z = base.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub component: Component,
    pub trials: usize,
    pub tolerance: f64,
    pub combined: GradComparison,
    /// Seed of the instance with the largest error.
    pub worst_seed: u64,
    pub passed: bool,
}

/// Aggregates per-trial `(seed, comparison)` results of one component.
pub fn summarize(component: Component, results: &[(u64, GradComparison)]) -> ComponentSummary {
    let tol = component.tolerance();
    let mut combined = GradComparison::default();
    let mut worst = (0u64, f64::NEG_INFINITY);
    let mut passed = true;
    for (seed, r) in results {
        combined.merge(r);
        passed &= r.passes(tol);
        let b = r.badness(tol);
        if b > worst.1 || b.is_nan() {
            worst = (*seed, b);
        }
    }
    ComponentSummary {
        component,
        trials: results.len(),
        tolerance: tol,
        combined,
        worst_seed: worst.0,
        passed,
    }
}
