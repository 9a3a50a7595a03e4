//! Diagnostics regenerated from a trained model and bank.

use std::path::Path;

use ecc_core::{
    build_similarity, geometry_report, pca_project, soft_label_report, CenterBank, Dataset, GeometryReport,
    MlpModel, SoftLabelReport,
};
use serde::{Deserialize, Serialize};

use crate::error::LabResult;
use crate::io::{write_json, write_projection};

pub const GEOMETRY_JSON: &str = "geometry.json";
pub const SOFT_LABELS_JSON: &str = "soft_labels.json";
pub const PROJECTION_CSV: &str = "projection.csv";

/// Feature-space geometry of both splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReports {
    pub train: GeometryReport,
    pub test: GeometryReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reports {
    pub geometry: GeometryReports,
    pub soft_labels: SoftLabelReport,
    /// Test-split labels and their 2-D principal-component coordinates.
    pub projection_labels: Vec<usize>,
    pub projection: ecc_core::DenseMatrix,
}

pub fn build_reports(model: &MlpModel, bank: &CenterBank, train: &Dataset, test: &Dataset) -> LabResult<Reports> {
    let n = train.num_classes();
    let geom = |d: &Dataset| -> LabResult<GeometryReport> {
        let pass = model.forward(d.inputs())?;
        Ok(geometry_report(pass.features(), d.labels(), n)?)
    };
    let sim = build_similarity(bank)?;
    let test_pass = model.forward(test.inputs())?;
    let projection = pca_project(test_pass.features(), 2)?;
    Ok(Reports {
        geometry: GeometryReports {
            train: geom(train)?,
            test: geom(test)?,
        },
        soft_labels: soft_label_report(bank, &sim)?,
        projection_labels: test.labels().to_vec(),
        projection: projection.coords,
    })
}

pub fn write_reports(dir: &Path, reports: &Reports) -> LabResult<()> {
    write_json(&dir.join(GEOMETRY_JSON), &reports.geometry)?;
    write_json(&dir.join(SOFT_LABELS_JSON), &reports.soft_labels)?;
    write_projection(&dir.join(PROJECTION_CSV), &reports.projection_labels, &reports.projection)
}

/// A few human-readable lines.
pub fn summary(reports: &Reports) -> Vec<String> {
    let g = &reports.geometry;
    vec![
        format!(
            "intra_class_variance train={} test={}",
            g.train.intra_class_variance, g.test.intra_class_variance
        ),
        format!(
            "nearest_nontarget_margin train={} test={}",
            g.train.nearest_nontarget_margin, g.test.nearest_nontarget_margin
        ),
        format!(
            "similar_dominant_fraction={}",
            reports.soft_labels.similar_dominant_fraction
        ),
    ]
}
