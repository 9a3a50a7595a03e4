//! Feature-space geometry, soft-label diagnostics and PCA projection.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bank::CenterBank;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, softmax, squared_distance, DenseMatrix};
use crate::loss::SimilarityMatrix;

/// Mean row per class. Fails with `EmptyClass` for any class with fewer
/// than `min_count` rows.
pub fn class_centroids(
    points: &DenseMatrix,
    labels: &[usize],
    num_classes: usize,
    min_count: usize,
) -> Result<DenseMatrix> {
    if points.rows() != labels.len() {
        return Err(Error::ShapeMismatch {
            context: "labels",
            expected: points.rows(),
            found: labels.len(),
        });
    }
    let mut sums = DenseMatrix::zeros(num_classes, points.cols());
    let mut counts = vec![0usize; num_classes];
    for (row, &y) in points.iter_rows().zip(labels) {
        if y >= num_classes {
            return Err(Error::IndexOutOfRange {
                index: y,
                len: num_classes,
            });
        }
        counts[y] += 1;
        for (s, v) in sums.row_mut(y).iter_mut().zip(row) {
            *s += v;
        }
    }
    for (c, &count) in counts.iter().enumerate() {
        if count < min_count.max(1) {
            return Err(Error::EmptyClass(c));
        }
        let inv = 1.0 / count as f64;
        sums.row_mut(c).iter_mut().for_each(|v| *v *= inv);
    }
    Ok(sums)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    /// Mean over classes of the mean squared distance from a sample to its
    /// class centroid.
    pub intra_class_variance: f64,
    /// Mean over classes of the distance from the class centroid to the
    /// nearest other centroid.
    pub nearest_nontarget_margin: f64,
    pub per_class_variance: Vec<f64>,
    pub per_class_margin: Vec<f64>,
    pub nearest_class: Vec<usize>,
}

/// Compactness and separation of labelled features. Every class in
/// `0..num_classes` needs at least two samples.
pub fn geometry_report(features: &DenseMatrix, labels: &[usize], num_classes: usize) -> Result<GeometryReport> {
    if num_classes < 2 {
        return Err(Error::InvalidShape("geometry needs at least two classes"));
    }
    let centroids = class_centroids(features, labels, num_classes, 2)?;
    let mut sq = vec![0.0; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (row, &y) in features.iter_rows().zip(labels) {
        sq[y] += squared_distance(row, centroids.row(y));
        counts[y] += 1;
    }
    let per_class_variance: Vec<f64> = sq.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    let nearest_class = crate::synthetic::nearest_other_rows(&centroids);
    let per_class_margin: Vec<f64> = nearest_class
        .iter()
        .enumerate()
        .map(|(y, &w)| libm::sqrt(squared_distance(centroids.row(y), centroids.row(w))))
        .collect();
    let n = num_classes as f64;
    Ok(GeometryReport {
        intra_class_variance: per_class_variance.iter().sum::<f64>() / n,
        nearest_nontarget_margin: per_class_margin.iter().sum::<f64>() / n,
        per_class_variance,
        per_class_margin,
        nearest_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelRow {
    pub class: usize,
    pub soft_label: Vec<f64>,
    pub most_similar: usize,
    pub similar_confidence: f64,
    /// Mean confidence over nontarget classes other than `most_similar`;
    /// absent with only two classes.
    pub other_confidence: Option<f64>,
}

impl SoftLabelRow {
    pub fn similar_dominates(&self) -> bool {
        self.other_confidence.is_none_or(|o| self.similar_confidence > o)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftLabelReport {
    pub classes: Vec<SoftLabelRow>,
    /// Fraction of classes whose soft label puts strictly more mass on the
    /// most similar class than on the average other nontarget class.
    pub similar_dominant_fraction: f64,
}

/// Soft label of every class and how much of it lands on the most similar
/// class.
pub fn soft_label_report(bank: &CenterBank, sim: &SimilarityMatrix) -> Result<SoftLabelReport> {
    let n = bank.num_classes();
    if sim.num_classes() != n {
        return Err(Error::ShapeMismatch {
            context: "similarity matrix",
            expected: n,
            found: sim.num_classes(),
        });
    }
    let unseen = bank.unseen_classes();
    if !unseen.is_empty() {
        return Err(Error::UnseenClass(unseen));
    }
    let classes: Vec<SoftLabelRow> = (0..n)
        .map(|y| {
            let q = softmax(bank.logit_center(y));
            let s = sim.most_similar()[y];
            let others: Vec<f64> = (0..n).filter(|&w| w != y && w != s).map(|w| q[w]).collect();
            let other_confidence = if others.is_empty() {
                None
            } else {
                Some(others.iter().sum::<f64>() / others.len() as f64)
            };
            SoftLabelRow {
                class: y,
                similar_confidence: q[s],
                soft_label: q,
                most_similar: s,
                other_confidence,
            }
        })
        .collect();
    let dominant = classes.iter().filter(|r| r.similar_dominates()).count();
    Ok(SoftLabelReport {
        similar_dominant_fraction: dominant as f64 / n as f64,
        classes,
    })
}

pub const PCA_TOLERANCE: f64 = 1e-9;
pub const PCA_MAX_ITERATIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// `M × k` coordinates of the centered samples.
    pub coords: DenseMatrix,
    /// `k × D` unit principal directions.
    pub components: DenseMatrix,
    /// Sample variance (denominator `M − 1`) along each component.
    pub variances: Vec<f64>,
}

/// Projects onto the top-`k` principal components.
///
/// Power iteration with deflation on the sample covariance. A component is
/// accepted once `‖Cv − λv‖ ≤ 1e-9 · trace(C)`. Each direction's largest
/// loading (by magnitude) is made positive.
pub fn pca_project(features: &DenseMatrix, k: usize) -> Result<Projection> {
    let (m, d) = (features.rows(), features.cols());
    if m < 2 || d < 2 {
        return Err(Error::InvalidShape("PCA needs at least two samples and two dimensions"));
    }
    if k == 0 || k > d {
        return Err(Error::InvalidShape("component count must be in 1..=D"));
    }
    let mut mean = vec![0.0; d];
    for row in features.iter_rows() {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let centered = DenseMatrix::from_fn(m, d, |r, c| features.get(r, c) - mean[c]);

    let mut cov = DenseMatrix::zeros(d, d);
    for row in centered.iter_rows() {
        for (i, &ri) in row.iter().enumerate() {
            for (j, &rj) in row.iter().enumerate().skip(i) {
                let v = cov.get(i, j) + ri * rj;
                cov.set(i, j, v);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov.get(i, j) / (m - 1) as f64;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    let scale = (0..d).map(|i| cov.get(i, i)).sum::<f64>().max(f64::MIN_POSITIVE);

    let mut rng = ChaCha8Rng::seed_from_u64(0x5CA1_AB1E);
    let mut components = DenseMatrix::zeros(k, d);
    let mut variances = Vec::with_capacity(k);
    for c in 0..k {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        orthogonalize(&mut v, &components, c);
        normalize(&mut v);
        let mut lambda = 0.0;
        let mut converged = false;
        for _ in 0..PCA_MAX_ITERATIONS {
            let mut w = cov.matvec(&v);
            lambda = dot(&v, &w);
            let residual = libm::sqrt(
                w.iter()
                    .zip(&v)
                    .map(|(a, b)| (a - lambda * b) * (a - lambda * b))
                    .sum(),
            );
            if residual <= PCA_TOLERANCE * scale {
                converged = true;
                break;
            }
            orthogonalize(&mut w, &components, c);
            if norm(&w) <= PCA_TOLERANCE * scale {
                // Remaining spectrum is (numerically) zero: any unit vector
                // orthogonal to the found components will do.
                lambda = 0.0;
                converged = true;
                break;
            }
            normalize(&mut w);
            v = w;
        }
        if !converged {
            return Err(Error::ConvergenceFailure(PCA_MAX_ITERATIONS));
        }
        orthogonalize(&mut v, &components, c);
        normalize(&mut v);
        let lead = crate::linalg::argmax(&v.iter().map(|x| x.abs()).collect::<Vec<_>>());
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        // deflate
        for i in 0..d {
            for j in 0..d {
                let val = cov.get(i, j) - lambda * v[i] * v[j];
                cov.set(i, j, val);
            }
        }
        components.row_mut(c).copy_from_slice(&v);
        variances.push(lambda.max(0.0));
    }
    let coords = DenseMatrix::from_fn(m, k, |r, c| dot(centered.row(r), components.row(c)));
    Ok(Projection {
        coords,
        components,
        variances,
    })
}

fn orthogonalize(v: &mut [f64], basis: &DenseMatrix, count: usize) {
    for b in 0..count {
        let row = basis.row(b);
        let p = dot(v, row);
        for (x, &r) in v.iter_mut().zip(row) {
            *x -= p * r;
        }
    }
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
