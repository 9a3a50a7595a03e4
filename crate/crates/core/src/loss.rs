//! MCC, CLG and cross-entropy losses with analytic gradients.
//!
//! Gradients are taken with respect to the batch's features and logits
//! only. Center features, center logits and the similarity weights are read
//! from the bank and treated as constants.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bank::CenterBank;
use crate::error::{Error, NormSite, Result};
use crate::linalg::{dot, kl_unchecked, log_sum_exp, norm, softmax, DenseMatrix, NORM_EPS};

/// Cosine similarities between class-center features, and for every class
/// the most similar *other* class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    s: DenseMatrix,
    most_similar: Vec<usize>,
}

impl SimilarityMatrix {
    pub fn num_classes(&self) -> usize {
        self.most_similar.len()
    }

    pub fn get(&self, h: usize, w: usize) -> f64 {
        self.s.get(h, w)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.s
    }

    pub fn most_similar(&self) -> &[usize] {
        &self.most_similar
    }

    /// Similarity between `class` and its most similar other class.
    pub fn top_similarity(&self, class: usize) -> f64 {
        self.s.get(class, self.most_similar[class])
    }
}

/// Builds the N×N similarity matrix of the bank's center features.
///
/// `most_similar[y]` is the argmax over `w != y`, lowest index on ties.
pub fn build_similarity(bank: &CenterBank) -> Result<SimilarityMatrix> {
    let centers = bank.center_features();
    let n = centers.rows();
    let norms: Vec<f64> = centers.iter_rows().map(norm).collect();
    if let Some(bad) = norms.iter().position(|&v| v <= NORM_EPS) {
        return Err(Error::DegenerateNorm(NormSite::Class(bad)));
    }
    let mut s = DenseMatrix::zeros(n, n);
    for h in 0..n {
        let fh = centers.row(h);
        for w in h..n {
            let v = (dot(fh, centers.row(w)) / (norms[h] * norms[w])).clamp(-1.0, 1.0);
            s.set(h, w, v);
            s.set(w, h, v);
        }
    }
    let most_similar = (0..n)
        .map(|y| {
            let row = s.row(y);
            let mut best = if y == 0 { 1 } else { 0 };
            for w in best + 1..n {
                if w != y && row[w] > row[best] {
                    best = w;
                }
            }
            best
        })
        .collect();
    Ok(SimilarityMatrix { s, most_similar })
}

/// A mini-batch: per-sample features, logits and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    features: DenseMatrix,
    logits: DenseMatrix,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: DenseMatrix, logits: DenseMatrix, labels: Vec<usize>) -> Result<Self> {
        let m = labels.len();
        if m == 0 {
            return Err(Error::InvalidShape("batch must hold at least one sample"));
        }
        for (what, rows) in [("batch features", features.rows()), ("batch logits", logits.rows())] {
            if rows != m {
                return Err(Error::ShapeMismatch {
                    context: what,
                    expected: m,
                    found: rows,
                });
            }
        }
        let n = logits.cols();
        if let Some(&bad) = labels.iter().find(|&&y| y >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        if !features.is_finite() || !logits.is_finite() {
            return Err(Error::NonFiniteInput("batch"));
        }
        Ok(Self {
            features,
            logits,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn logits(&self) -> &DenseMatrix {
        &self.logits
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.logits.cols()
    }
}

/// Weights of the two class-center terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub mcc: f64,
    pub clg: f64,
}

impl LossWeights {
    pub const CE_ONLY: LossWeights = LossWeights { mcc: 0.0, clg: 0.0 };
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub ce: f64,
    pub mcc: f64,
    pub clg: f64,
    pub total: f64,
    pub grad_features: DenseMatrix,
    pub grad_logits: DenseMatrix,
}

fn check_bank(batch: &Batch, bank: &CenterBank, need_features: bool) -> Result<()> {
    if bank.num_classes() != batch.num_classes() {
        return Err(Error::ShapeMismatch {
            context: "bank classes vs batch logits",
            expected: bank.num_classes(),
            found: batch.num_classes(),
        });
    }
    if need_features && bank.feature_dim() != batch.features.cols() {
        return Err(Error::ShapeMismatch {
            context: "bank feature dim vs batch features",
            expected: bank.feature_dim(),
            found: batch.features.cols(),
        });
    }
    Ok(())
}

/// Adds `scale · ∂cos(x, f)/∂x` to `grad` and returns `cos(x, f)`.
///
/// `∂cos/∂x = f / (‖x‖‖f‖) − cos · x / ‖x‖²`.
fn accumulate_cos_grad(x: &[f64], x_norm: f64, f: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
    let f_norm = norm(f);
    let cos = dot(x, f) / (x_norm * f_norm);
    let a = scale / (x_norm * f_norm);
    let b = scale * cos / (x_norm * x_norm);
    for ((g, &xi), &fi) in grad.iter_mut().zip(x).zip(f) {
        *g += a * fi - b * xi;
    }
    cos
}

/// Multiple class-center constraint, summed over the batch:
/// `Σ_k 1 − cos(x_k, F_y) + s_{y,sim} · cos(x_k, F_sim)`.
pub fn mcc_loss(batch: &Batch, bank: &CenterBank, sim: &SimilarityMatrix) -> Result<(f64, DenseMatrix)> {
    check_bank(batch, bank, true)?;
    if sim.num_classes() != bank.num_classes() {
        return Err(Error::ShapeMismatch {
            context: "similarity matrix",
            expected: bank.num_classes(),
            found: sim.num_classes(),
        });
    }
    let centers = bank.center_features();
    if let Some(bad) = centers.iter_rows().position(|r| norm(r) <= NORM_EPS) {
        return Err(Error::DegenerateNorm(NormSite::Class(bad)));
    }
    let mut grad = DenseMatrix::zeros(batch.len(), batch.features.cols());
    let mut total = 0.0;
    for (k, &y) in batch.labels.iter().enumerate() {
        let x = batch.features.row(k);
        let x_norm = norm(x);
        if x_norm <= NORM_EPS {
            return Err(Error::DegenerateNorm(NormSite::Sample(k)));
        }
        let neg = sim.most_similar[y];
        let weight = sim.top_similarity(y);
        let g = grad.row_mut(k);
        let cos_target = accumulate_cos_grad(x, x_norm, centers.row(y), -1.0, g);
        let cos_neg = accumulate_cos_grad(x, x_norm, centers.row(neg), weight, g);
        total += 1.0 - cos_target + weight * cos_neg;
    }
    Ok((total, grad))
}

/// Class-center label generation: `Σ_k KL(softmax(z_k) ‖ softmax(L_{y_k}))`.
pub fn clg_loss(batch: &Batch, bank: &CenterBank) -> Result<(f64, DenseMatrix)> {
    check_bank(batch, bank, false)?;
    let n = batch.num_classes();
    let soft_labels: Vec<Option<Vec<f64>>> = {
        let mut v = vec![None; n];
        for &y in &batch.labels {
            if v[y].is_none() {
                v[y] = Some(softmax(bank.logit_center(y)));
            }
        }
        v
    };
    let mut grad = DenseMatrix::zeros(batch.len(), n);
    let mut total = 0.0;
    for (k, &y) in batch.labels.iter().enumerate() {
        let q = soft_labels[y].as_deref().expect("filled above");
        let p = softmax(batch.logits.row(k));
        let kl = kl_unchecked(&p, q);
        // ∂KL/∂z_j = p_j (log(p_j / q_j) − KL)
        for (j, g) in grad.row_mut(k).iter_mut().enumerate() {
            if p[j] > 0.0 {
                *g = p[j] * (libm::log(p[j] / q[j].max(crate::linalg::PROB_FLOOR)) - kl);
            }
        }
        total += kl;
    }
    Ok((total, grad))
}

/// Mean softmax cross-entropy against the hard labels.
pub fn ce_loss(batch: &Batch) -> Result<(f64, DenseMatrix)> {
    let m = batch.len() as f64;
    let mut grad = DenseMatrix::zeros(batch.len(), batch.num_classes());
    let mut total = 0.0;
    for (k, &y) in batch.labels.iter().enumerate() {
        let z = batch.logits.row(k);
        total += log_sum_exp(z) - z[y];
        let g = grad.row_mut(k);
        g.copy_from_slice(&softmax(z));
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v /= m);
    }
    Ok((total / m, grad))
}

/// `ce + λ₁·mcc + λ₂·clg` with the combined gradients.
///
/// A term whose weight is zero is not evaluated and reported as `0.0`.
pub fn final_loss(
    batch: &Batch,
    bank: &CenterBank,
    sim: &SimilarityMatrix,
    weights: LossWeights,
) -> Result<LossResult> {
    if !(weights.mcc >= 0.0 && weights.clg >= 0.0) {
        return Err(Error::InvalidConfig(alloc::format!(
            "loss weights must be nonnegative, got {weights:?}"
        )));
    }
    check_bank(batch, bank, true)?;
    let (ce, mut grad_logits) = ce_loss(batch)?;
    let mut grad_features = DenseMatrix::zeros(batch.len(), batch.features.cols());

    let mut mcc = 0.0;
    if weights.mcc > 0.0 {
        let (value, g) = mcc_loss(batch, bank, sim)?;
        mcc = value;
        grad_features.axpy(weights.mcc, &g);
    }
    let mut clg = 0.0;
    if weights.clg > 0.0 {
        let (value, g) = clg_loss(batch, bank)?;
        clg = value;
        grad_logits.axpy(weights.clg, &g);
    }
    Ok(LossResult {
        ce,
        mcc,
        clg,
        total: ce + weights.mcc * mcc + weights.clg * clg,
        grad_features,
        grad_logits,
    })
}
