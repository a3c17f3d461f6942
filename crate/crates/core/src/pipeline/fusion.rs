//! Score-level fusion of branch predictions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UalError};
use crate::numerics::DenseVector;
use crate::pipeline::config::Branch;
use crate::pipeline::infer::BranchPrediction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionStrategy {
    /// Weights proportional to each branch's top probability.
    Pwfs,
    Equal,
    /// Scene weight is twice the sum of the other present weights.
    GlobalPriority,
    /// Face weight is twice the sum of the other present weights.
    FacePriority,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 4] = [
        FusionStrategy::Pwfs,
        FusionStrategy::Equal,
        FusionStrategy::GlobalPriority,
        FusionStrategy::FacePriority,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FusionStrategy::Pwfs => "pwfs",
            FusionStrategy::Equal => "equal",
            FusionStrategy::GlobalPriority => "global-priority",
            FusionStrategy::FacePriority => "face-priority",
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionStrategy {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        FusionStrategy::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown fusion `{s}` (pwfs, equal, global-priority, face-priority)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusedPrediction {
    pub probs: DenseVector,
    /// Weight of every present branch, in input order.
    pub weights: Vec<(Branch, f64)>,
}

impl FusedPrediction {
    /// Argmax with ties going to the lowest class index.
    pub fn label(&self) -> usize {
        self.probs.argmax()
    }
}

fn check_simplex(p: &BranchPrediction) -> Result<()> {
    let sum: f64 = p.probs.iter().sum();
    if p.probs.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || (sum - 1.0).abs() > 1e-9 {
        return Err(UalError::InvalidArgument(format!(
            "{} prediction is not a probability vector (sum {sum})",
            p.branch
        )));
    }
    Ok(())
}

fn priority_weights(present: &[&BranchPrediction], favored: Branch) -> Vec<f64> {
    let others = present.iter().filter(|p| p.branch != favored).count() as f64;
    present
        .iter()
        .map(|p| if p.branch == favored { (2.0 * others).max(1.0) } else { 1.0 })
        .collect()
}

/// Fuse the present branch predictions with the given strategy.
pub fn fuse(preds: &[BranchPrediction], strategy: FusionStrategy) -> Result<FusedPrediction> {
    let present: Vec<&BranchPrediction> = preds.iter().filter(|p| p.present).collect();
    if present.is_empty() {
        return Err(UalError::InvalidArgument("fusion needs at least one present branch".into()));
    }
    let classes = present[0].probs.len();
    for p in &present {
        if p.probs.len() != classes {
            return Err(UalError::dim(format!("{} prediction", p.branch), classes, p.probs.len()));
        }
        check_simplex(p)?;
    }
    let raw: Vec<f64> = match strategy {
        FusionStrategy::Pwfs => present.iter().map(|p| p.probs.max()).collect(),
        FusionStrategy::Equal => vec![1.0; present.len()],
        FusionStrategy::GlobalPriority => priority_weights(&present, Branch::Scene),
        FusionStrategy::FacePriority => priority_weights(&present, Branch::Face),
    };
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|c| c / total).collect();
    let mut fused = DenseVector::zeros(classes);
    for (p, w) in present.iter().zip(&weights) {
        fused.axpy(*w, &p.probs)?;
    }
    let s = fused.sum();
    let fused = fused.scale(1.0 / s);
    Ok(FusedPrediction {
        probs: fused,
        weights: present.iter().map(|p| p.branch).zip(weights).collect(),
    })
}

pub fn pwfs_fuse(preds: &[BranchPrediction]) -> Result<FusedPrediction> {
    fuse(preds, FusionStrategy::Pwfs)
}
