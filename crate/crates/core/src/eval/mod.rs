//! Metrics, comparison tables and the confidence probe.

mod metrics;
mod probe;
mod report;

use crate::data::{Dataset, MimoBatch};
use crate::error::Result;
use crate::fusion::{FusionModel, FusionPrediction};

pub use metrics::{compute_metrics, roc_auc, ConfusionMatrix, MetricsReport};
pub use probe::{
    confidence_probe, probe_input, ConfidenceProfile, HeadConfidence, ProbeFill, ProbeMode,
    DEFAULT_BINS,
};
pub use report::{
    complexity_table, millions, render_profile_png, ComparisonTable, MeanStd, TableRow,
};

/// Aligned prediction of `model` over dataset `indices`.
pub fn predict_indices(model: &FusionModel, dataset: &Dataset, indices: &[usize]) -> Result<FusionPrediction> {
    let mut probs = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(128) {
        let batch = MimoBatch::aligned(dataset, chunk)?;
        probs.extend(model.predict(&batch)?.probs);
    }
    Ok(FusionPrediction {
        probs,
        source: model.strategy(),
    })
}

/// Metrics (with complexity attached) of `model` on dataset `indices`.
pub fn evaluate(model: &FusionModel, dataset: &Dataset, indices: &[usize]) -> Result<MetricsReport> {
    let pred = predict_indices(model, dataset, indices)?;
    let labels: Vec<usize> = indices.iter().map(|&i| dataset.sample(i).label).collect();
    let mut report = compute_metrics(&pred.probs, &labels, dataset.n_classes())?;
    report.complexity = Some(model.complexity());
    Ok(report)
}
