//! Branch inference and group prediction.
//!
//! Individuals are put in a canonical order (lexicographic on features)
//! before noise streams are assigned, so reordering the faces or objects of a
//! group does not change any output.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::dataset::{Dataset, GroupSample};
use crate::embedding::{mc_predict, reparameterize, GaussianEmbedding};
use crate::error::{Result, UalError};
use crate::numerics::{softmax, DenseVector};
use crate::pipeline::branch::{IndividualBranch, SceneBranch};
use crate::pipeline::config::{Branch, TrainingConfig};
use crate::pipeline::fusion::{fuse, FusionStrategy};
use crate::pipeline::model::{infer_stream, UalModel, PURPOSE_QUALITY, PURPOSE_REPARAM};
use crate::quality::filter_embeddings;
use crate::scoring::{importance, uncertainty_score, weighted_mean};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceSettings {
    pub mc_samples: usize,
    pub ual: bool,
    pub fiqe: bool,
    pub fiqe_samples: usize,
    pub delta2: f64,
    pub seed: u64,
    /// Index of a repeated inference; each repeat gets fresh noise.
    pub repeat: u64,
}

impl InferenceSettings {
    pub fn from_config(cfg: &TrainingConfig) -> Self {
        InferenceSettings {
            mc_samples: cfg.mc_samples,
            ual: cfg.ablation.uses_ual(),
            fiqe: cfg.fiqe_at_test(),
            fiqe_samples: cfg.fiqe_samples,
            delta2: cfg.delta2,
            seed: cfg.seed,
            repeat: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndividualDiagnostic {
    /// Position in the group record.
    pub index: usize,
    /// Mean uncertainty score over the Monte-Carlo rounds.
    pub score: Option<f64>,
    /// Mean importance over the Monte-Carlo rounds.
    pub alpha: Option<f64>,
    pub quality: Option<f64>,
    pub kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchPrediction {
    pub branch: Branch,
    pub probs: DenseVector,
    /// False when the group has nothing for this branch (no objects).
    pub present: bool,
    pub individuals: Vec<IndividualDiagnostic>,
}

impl BranchPrediction {
    pub fn new(branch: Branch, probs: DenseVector) -> Self {
        BranchPrediction {
            branch,
            probs,
            present: true,
            individuals: Vec::new(),
        }
    }
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// Indices that sort the rows lexicographically (stable).
pub fn canonical_order(rows: &[DenseVector]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&i, &j| lexicographic(&rows[i], &rows[j]));
    order
}

fn check_dims(rows: &[DenseVector], dim: usize, what: &str) -> Result<()> {
    for r in rows {
        if r.len() != dim {
            return Err(UalError::dim(what.to_string(), dim, r.len()));
        }
    }
    Ok(())
}

/// Face branch: optional quality filter, then per round draw every kept
/// face, weight by importance and aggregate; the group feature averaged over
/// rounds is classified.
pub fn face_infer(
    branch: &IndividualBranch,
    faces: &[DenseVector],
    group_id: &str,
    s: &InferenceSettings,
) -> Result<BranchPrediction> {
    if faces.is_empty() {
        return Err(UalError::InvalidArgument(format!("group `{group_id}` has no faces")));
    }
    if s.mc_samples == 0 {
        return Err(UalError::field("mc_samples", "must be >= 1"));
    }
    check_dims(faces, branch.in_dim(), "face feature")?;
    let order = canonical_order(faces);
    let embs = order
        .iter()
        .map(|&i| branch.head.embed(&faces[i]))
        .collect::<Result<Vec<GaussianEmbedding>>>()?;
    let stream = |purpose, k| infer_stream(s.seed, s.repeat, Branch::Face, group_id, purpose, k);

    let mut diag: Vec<IndividualDiagnostic> = order
        .iter()
        .map(|&i| IndividualDiagnostic {
            index: i,
            score: None,
            alpha: None,
            quality: None,
            kept: true,
        })
        .collect();
    let kept: Vec<usize> = if s.fiqe {
        let mut noise: Vec<_> = (0..embs.len()).map(|k| stream(PURPOSE_QUALITY, k)).collect();
        let outcome = filter_embeddings(&embs, s.fiqe_samples, s.delta2, &mut noise)?;
        for (d, a) in diag.iter_mut().zip(&outcome.assessments) {
            d.quality = Some(a.score);
            d.kept = a.kept;
        }
        outcome.kept
    } else {
        (0..embs.len()).collect()
    };

    let latent = branch.latent_dim();
    let x_group = if s.ual {
        let mut noise: Vec<_> = kept.iter().map(|&k| stream(PURPOSE_REPARAM, k)).collect();
        let mut acc = DenseVector::zeros(latent);
        let mut score_sum = vec![0.0; kept.len()];
        let mut alpha_sum = vec![0.0; kept.len()];
        for _ in 0..s.mc_samples {
            let draws: Vec<_> = kept
                .iter()
                .zip(noise.iter_mut())
                .map(|(&k, rng)| reparameterize(&embs[k], rng))
                .collect();
            let scores: Vec<f64> = kept
                .iter()
                .zip(&draws)
                .map(|(&k, d)| uncertainty_score(&embs[k].sigma, &d.eps))
                .collect();
            let alphas = importance(&scores).alphas;
            let zs: Vec<&[f64]> = draws.iter().map(|d| d.z_star.as_slice()).collect();
            acc.axpy(1.0, &weighted_mean(&zs, &alphas)?)?;
            for j in 0..kept.len() {
                score_sum[j] += scores[j];
                alpha_sum[j] += alphas[j];
            }
        }
        let n = s.mc_samples as f64;
        for (j, &k) in kept.iter().enumerate() {
            diag[k].score = Some(score_sum[j] / n);
            diag[k].alpha = Some(alpha_sum[j] / n);
        }
        acc.scale(1.0 / n)
    } else {
        let mus: Vec<DenseVector> = kept.iter().map(|&k| embs[k].mu.clone()).collect();
        DenseVector::mean_of(&mus)?
    };
    let probs = softmax(&branch.classifier.apply(&x_group)?);
    if !probs.is_finite() {
        return Err(UalError::NonFinite {
            context: format!("face prediction for group `{group_id}`"),
        });
    }
    diag.sort_by_key(|d| d.index);
    Ok(BranchPrediction {
        branch: Branch::Face,
        probs,
        present: true,
        individuals: diag,
    })
}

/// Object branch: Monte-Carlo prediction per object, then the mean of the
/// per-object probability vectors. No objects gives a uniform, absent
/// prediction.
pub fn object_infer(
    branch: &IndividualBranch,
    objects: &[DenseVector],
    group_id: &str,
    s: &InferenceSettings,
) -> Result<BranchPrediction> {
    let c = branch.num_classes();
    if objects.is_empty() {
        return Ok(BranchPrediction {
            branch: Branch::Object,
            probs: DenseVector::filled(c, 1.0 / c as f64),
            present: false,
            individuals: Vec::new(),
        });
    }
    check_dims(objects, branch.in_dim(), "object feature")?;
    let order = canonical_order(objects);
    let mut acc = DenseVector::zeros(c);
    let mut diag = Vec::with_capacity(objects.len());
    for (k, &i) in order.iter().enumerate() {
        let emb = branch.head.embed(&objects[i])?;
        let p = if s.ual {
            let mut rng = infer_stream(s.seed, s.repeat, Branch::Object, group_id, PURPOSE_REPARAM, k);
            mc_predict(&emb, &branch.classifier, s.mc_samples, &mut rng)?.probs
        } else {
            softmax(&branch.classifier.apply(&emb.mu)?)
        };
        acc.axpy(1.0, &p)?;
        diag.push(IndividualDiagnostic {
            index: i,
            score: None,
            alpha: None,
            quality: None,
            kept: true,
        });
    }
    diag.sort_by_key(|d| d.index);
    let probs = acc.scale(1.0 / objects.len() as f64);
    if !probs.is_finite() {
        return Err(UalError::NonFinite {
            context: format!("object prediction for group `{group_id}`"),
        });
    }
    Ok(BranchPrediction {
        branch: Branch::Object,
        probs,
        present: true,
        individuals: diag,
    })
}

pub fn scene_infer(branch: &SceneBranch, scene: &[f64]) -> Result<BranchPrediction> {
    if scene.len() != branch.classifier.in_dim() {
        return Err(UalError::dim("scene feature", branch.classifier.in_dim(), scene.len()));
    }
    Ok(BranchPrediction::new(Branch::Scene, softmax(&branch.classifier.apply(scene)?)))
}

/// Prediction of one branch; `None` if the model lacks that branch.
pub fn branch_infer(
    model: &UalModel,
    branch: Branch,
    group: &GroupSample,
    s: &InferenceSettings,
) -> Result<Option<BranchPrediction>> {
    Ok(match branch {
        Branch::Face => match &model.face {
            Some(b) => Some(face_infer(b, &group.faces, &group.id, s)?),
            None => None,
        },
        Branch::Object => match &model.object {
            Some(b) => Some(object_infer(b, &group.objects, &group.id, s)?),
            None => None,
        },
        Branch::Scene => match &model.scene {
            Some(b) => Some(scene_infer(b, &group.scene)?),
            None => None,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupPrediction {
    pub id: String,
    pub label: usize,
    pub probs: DenseVector,
    pub weights: Vec<(Branch, f64)>,
    pub branches: Vec<BranchPrediction>,
}

impl GroupPrediction {
    pub fn branch(&self, b: Branch) -> Option<&BranchPrediction> {
        self.branches.iter().find(|p| p.branch == b)
    }
}

/// Fused prediction over the model's branches; ties go to the lowest class.
pub fn predict_group(
    model: &UalModel,
    group: &GroupSample,
    s: &InferenceSettings,
    strategy: FusionStrategy,
) -> Result<GroupPrediction> {
    let mut branches = Vec::new();
    for b in Branch::ALL {
        if let Some(p) = branch_infer(model, b, group, s)? {
            branches.push(p);
        }
    }
    let fused = fuse(&branches, strategy)?;
    Ok(GroupPrediction {
        id: group.id.clone(),
        label: fused.label(),
        probs: fused.probs,
        weights: fused.weights,
        branches,
    })
}

/// Predictions for every group, computed in parallel, returned in order.
pub fn predict_dataset(
    model: &UalModel,
    data: &Dataset,
    s: &InferenceSettings,
    strategy: FusionStrategy,
) -> Result<Vec<GroupPrediction>> {
    model.check_header(&data.header)?;
    data.groups
        .par_iter()
        .map(|g| predict_group(model, g, s, strategy))
        .collect()
}

/// Standard deviation of a branch's class probabilities over `repeats`
/// independent inferences, averaged over classes.
pub fn prediction_spread(
    model: &UalModel,
    branch: Branch,
    group: &GroupSample,
    s: &InferenceSettings,
    repeats: usize,
) -> Result<f64> {
    let mut runs = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let settings = InferenceSettings {
            repeat: r as u64,
            ..*s
        };
        match branch_infer(model, branch, group, &settings)? {
            Some(p) => runs.push(p.probs),
            None => return Err(UalError::InvalidArgument(format!("model has no {branch} branch"))),
        }
    }
    let n = runs.len() as f64;
    let c = runs.first().map_or(0, |p| p.len());
    let mut total = 0.0;
    for k in 0..c {
        let mean = runs.iter().map(|p| p[k]).sum::<f64>() / n;
        let var = runs.iter().map(|p| (p[k] - mean).powi(2)).sum::<f64>() / n;
        total += var.sqrt();
    }
    Ok(total / c.max(1) as f64)
}
