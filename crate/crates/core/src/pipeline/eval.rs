use crate::data::dataset::Dataset;
use crate::data::metrics::{compute_metrics_named, MetricsReport};
use crate::error::Result;
use crate::pipeline::config::Branch;
use crate::pipeline::fusion::FusionStrategy;
use crate::pipeline::infer::{predict_dataset, GroupPrediction, InferenceSettings};
use crate::pipeline::model::UalModel;

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub predictions: Vec<GroupPrediction>,
    /// Metrics of each branch's own argmax.
    pub per_branch: Vec<(Branch, MetricsReport)>,
    pub fused: MetricsReport,
}

impl Evaluation {
    pub fn branch(&self, b: Branch) -> Option<&MetricsReport> {
        self.per_branch.iter().find(|(x, _)| *x == b).map(|(_, m)| m)
    }
}

pub fn evaluate(
    model: &UalModel,
    data: &Dataset,
    settings: &InferenceSettings,
    strategy: FusionStrategy,
) -> Result<Evaluation> {
    let predictions = predict_dataset(model, data, settings, strategy)?;
    let truth = data.labels();
    let names = &data.header.class_names;
    let mut per_branch = Vec::new();
    for b in model.branches() {
        let pred: Vec<usize> = predictions
            .iter()
            .map(|p| p.branch(b).map_or(0, |bp| bp.probs.argmax()))
            .collect();
        per_branch.push((b, compute_metrics_named(&truth, &pred, names)?));
    }
    let fused_pred: Vec<usize> = predictions.iter().map(|p| p.label).collect();
    let fused = compute_metrics_named(&truth, &fused_pred, names)?;
    Ok(Evaluation {
        predictions,
        per_branch,
        fused,
    })
}
