//! Detector metrics, baselines, ω tuning and ablations.

mod mahalanobis;
mod metrics;
mod tuning;

pub use mahalanobis::{mahalanobis_fit, mahalanobis_score, MahalanobisModel, RIDGE_FRACTION};
pub use metrics::{
    auroc, baseline_max_softmax, sample_variance, tnr_at_tpr, variance_report, TnrAtTpr,
    VarianceReport, TPR_TARGET,
};
pub use tuning::{
    ablation_grid, ablation_grid_with, default_omega_grid, tune_omega, tune_omega_with,
    validate_grid, TunedOmega, GRID_UPPER_ENDPOINT,
};

use crate::error::Result;

/// One line of a detector report.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRow {
    pub method: String,
    pub auroc: f64,
    pub tnr_at_tpr95: f64,
    pub threshold: f64,
    pub omega: Option<f64>,
    pub n_id: usize,
    pub n_ood: usize,
}

impl MethodRow {
    pub fn evaluate(method: &str, id: &[f64], ood: &[f64], omega: Option<f64>) -> Result<Self> {
        let t = tnr_at_tpr(id, ood, TPR_TARGET)?;
        Ok(Self {
            method: method.to_string(),
            auroc: auroc(id, ood)?,
            tnr_at_tpr95: t.tnr,
            threshold: t.threshold,
            omega,
            n_id: id.len(),
            n_ood: ood.len(),
        })
    }
}

/// Method rows plus the optional variance comparison of `S_α` and `S_β`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub rows: Vec<MethodRow>,
    pub variance: Option<VarianceReport>,
}

impl Report {
    pub fn row(&self, method: &str) -> Option<&MethodRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}
