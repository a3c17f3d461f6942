//! Mini-batch training of each branch with its own optimizer.
//!
//! Per-group gradients inside a batch are computed in parallel and summed in
//! batch order, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::data::dataset::{Dataset, GroupSample};
use crate::embedding::GaussianEmbedding;
use crate::error::{Result, UalError};
use crate::losses::{total_object_loss, LossBreakdown, LossWeights};
use crate::numerics::{DenseVector, LinearGrad, NoiseSource, SeededRng};
use crate::pipeline::branch::{
    face_group_step, object_group_step, scene_step, BranchStep, FaceObjectiveScales, IndividualBranch,
    IndividualBranchGrad, ObjectObjectiveScales, SceneBranch,
};
use crate::pipeline::config::{Branch, OptimizerConfig, OptimizerKind, TrainingConfig};
use crate::pipeline::eval::{evaluate, Evaluation};
use crate::pipeline::infer::{canonical_order, InferenceSettings};
use crate::pipeline::model::{train_stream, UalModel, KEY_TRAIN, PURPOSE_QUALITY, PURPOSE_REPARAM, PURPOSE_SHUFFLE};
use crate::quality::filter_embeddings;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        step: i32,
        m: Vec<Vec<f64>>,
        v: Vec<Vec<f64>>,
    },
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, sizes: &[usize]) -> Self {
        match cfg.kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr: cfg.lr },
            OptimizerKind::Adam => Optimizer::Adam {
                lr: cfg.lr,
                step: 0,
                m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
                v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            },
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), grads.len(), "parameter and gradient tensor counts differ");
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (p, g) in p.iter_mut().zip(g) {
                        *p -= *lr * g;
                    }
                }
            }
            Optimizer::Adam { lr, step, m, v } => {
                *step += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*step);
                let c2 = 1.0 - ADAM_BETA2.powi(*step);
                for (((p, g), m), v) in params.into_iter().zip(grads).zip(m.iter_mut()).zip(v.iter_mut()) {
                    for (((p, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                        *p -= *lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    }
                }
            }
        }
    }
}

/// Mean losses of one epoch per trained branch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub losses: Vec<(Branch, LossBreakdown)>,
}

impl EpochReport {
    pub fn branch(&self, b: Branch) -> Option<&LossBreakdown> {
        self.losses.iter().find(|(x, _)| *x == b).map(|(_, l)| l)
    }
}

pub struct Trainer {
    pub cfg: TrainingConfig,
    pub model: UalModel,
    face_opt: Option<Optimizer>,
    object_opt: Option<Optimizer>,
    scene_opt: Option<Optimizer>,
}

fn sizes(tensors: Vec<&[f64]>) -> Vec<usize> {
    tensors.iter().map(|t| t.len()).collect()
}

fn non_finite(branch: Branch, group: &str, term: &str) -> UalError {
    UalError::NonFinite {
        context: format!("{branch} loss term `{term}` on group `{group}`"),
    }
}

fn epoch_order(seed: u64, epoch: usize, branch: Branch, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::stream(seed, &[KEY_TRAIN, epoch as u64, branch.key(), PURPOSE_SHUFFLE]).shuffle(&mut order);
    order
}

impl Trainer {
    pub fn new(model: UalModel, cfg: TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        let face_opt = model.face.as_ref().map(|b| Optimizer::new(cfg.face_optimizer, &sizes(b.tensors())));
        let object_opt = model
            .object
            .as_ref()
            .map(|b| Optimizer::new(cfg.object_optimizer, &sizes(b.tensors())));
        let scene_opt = model.scene.as_ref().map(|b| Optimizer::new(cfg.scene_optimizer, &sizes(b.tensors())));
        Ok(Trainer {
            cfg,
            model,
            face_opt,
            object_opt,
            scene_opt,
        })
    }

    /// One pass over the data for every branch in the model.
    pub fn train_epoch(&mut self, data: &Dataset, epoch: usize) -> Result<EpochReport> {
        if data.is_empty() {
            return Err(UalError::InvalidArgument("training on an empty dataset".into()));
        }
        self.model.check_header(&data.header)?;
        let mut losses = Vec::new();
        if let (Some(b), Some(opt)) = (self.model.face.as_mut(), self.face_opt.as_mut()) {
            losses.push((Branch::Face, face_epoch(b, opt, &self.cfg, data, epoch)?));
        }
        if let (Some(b), Some(opt)) = (self.model.object.as_mut(), self.object_opt.as_mut()) {
            if let Some(l) = object_epoch(b, opt, &self.cfg, data, epoch)? {
                losses.push((Branch::Object, l));
            }
        }
        if let (Some(b), Some(opt)) = (self.model.scene.as_mut(), self.scene_opt.as_mut()) {
            losses.push((Branch::Scene, scene_epoch(b, opt, &self.cfg, data, epoch)?));
        }
        Ok(EpochReport { epoch, losses })
    }
}

/// Faces of a group in canonical order, after the training-time quality
/// filter when enabled.
fn training_faces<'a>(
    branch: &IndividualBranch,
    cfg: &TrainingConfig,
    g: &'a GroupSample,
    epoch: usize,
) -> Result<Vec<(usize, &'a [f64])>> {
    let order = canonical_order(&g.faces);
    if !cfg.fiqe_at_train() {
        return Ok(order.iter().enumerate().map(|(k, &i)| (k, g.faces[i].as_slice())).collect());
    }
    let embs = order
        .iter()
        .map(|&i| branch.head.embed(&g.faces[i]))
        .collect::<Result<Vec<GaussianEmbedding>>>()?;
    let mut noise: Vec<_> = (0..embs.len())
        .map(|k| train_stream(cfg.seed, epoch, Branch::Face, &g.id, PURPOSE_QUALITY, k))
        .collect();
    let outcome = filter_embeddings(&embs, cfg.fiqe_samples, cfg.delta2, &mut noise)?;
    Ok(outcome.kept.iter().map(|&k| (k, g.faces[order[k]].as_slice())).collect())
}

fn face_group(
    branch: &IndividualBranch,
    cfg: &TrainingConfig,
    w: &LossWeights,
    g: &GroupSample,
    epoch: usize,
) -> Result<BranchStep> {
    let ual = cfg.ablation.uses_ual();
    let faces = training_faces(branch, cfg, g, epoch)?;
    let eps: Vec<DenseVector> = if ual {
        faces
            .iter()
            .map(|(k, _)| {
                train_stream(cfg.seed, epoch, Branch::Face, &g.id, PURPOSE_REPARAM, *k)
                    .standard_normal_vec(branch.latent_dim())
            })
            .collect()
    } else {
        Vec::new()
    };
    let rows: Vec<&[f64]> = faces.iter().map(|(_, x)| *x).collect();
    let step = face_group_step(branch, &rows, &eps, g.label, w, FaceObjectiveScales::from_weights(w), ual)?;
    if let Some(term) = step.face_breakdown(w).non_finite_term() {
        return Err(non_finite(Branch::Face, &g.id, term));
    }
    Ok(step)
}

fn face_epoch(
    branch: &mut IndividualBranch,
    opt: &mut Optimizer,
    cfg: &TrainingConfig,
    data: &Dataset,
    epoch: usize,
) -> Result<LossBreakdown> {
    let w = cfg.effective_weights();
    let order = epoch_order(cfg.seed, epoch, Branch::Face, data.len());
    let mut sums = [0.0f64; 4];
    for batch in order.chunks(cfg.batch_size) {
        let current = &*branch;
        let steps = batch
            .par_iter()
            .map(|&i| face_group(current, cfg, &w, &data.groups[i], epoch))
            .collect::<Result<Vec<_>>>()?;
        let mut grad = IndividualBranchGrad::zeros_like(branch);
        let inv = 1.0 / batch.len() as f64;
        for s in &steps {
            grad.add_scaled(inv, &s.grad);
            sums[0] += s.cls;
            sums[1] += s.kl;
            sums[2] += s.rank;
            sums[3] += s.rec;
        }
        opt.step(branch.tensors_mut(), grad.tensors());
    }
    let n = data.len() as f64;
    Ok(crate::losses::total_face_loss(sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n, &w))
}

fn object_group(
    branch: &IndividualBranch,
    cfg: &TrainingConfig,
    w: &LossWeights,
    g: &GroupSample,
    epoch: usize,
) -> Result<BranchStep> {
    let ual = cfg.ablation.uses_ual();
    let order = canonical_order(&g.objects);
    let rows: Vec<&[f64]> = order.iter().map(|&i| g.objects[i].as_slice()).collect();
    let eps: Vec<DenseVector> = if ual {
        (0..rows.len())
            .map(|k| {
                train_stream(cfg.seed, epoch, Branch::Object, &g.id, PURPOSE_REPARAM, k)
                    .standard_normal_vec(branch.latent_dim())
            })
            .collect()
    } else {
        Vec::new()
    };
    let step = object_group_step(branch, &rows, &eps, g.label, ObjectObjectiveScales::from_weights(w), ual)?;
    let l = total_object_loss(step.cls, step.kl, w);
    if let Some(term) = l.non_finite_term() {
        return Err(non_finite(Branch::Object, &g.id, term));
    }
    Ok(step)
}

/// `None` when the data holds no objects at all.
fn object_epoch(
    branch: &mut IndividualBranch,
    opt: &mut Optimizer,
    cfg: &TrainingConfig,
    data: &Dataset,
    epoch: usize,
) -> Result<Option<LossBreakdown>> {
    let w = cfg.effective_weights();
    let order = epoch_order(cfg.seed, epoch, Branch::Object, data.len());
    let (mut cls, mut kl, mut count) = (0.0, 0.0, 0usize);
    for batch in order.chunks(cfg.batch_size) {
        let current = &*branch;
        let steps = batch
            .par_iter()
            .map(|&i| object_group(current, cfg, &w, &data.groups[i], epoch))
            .collect::<Result<Vec<_>>>()?;
        let objects: usize = batch.iter().map(|&i| data.groups[i].objects.len()).sum();
        if objects == 0 {
            continue;
        }
        let mut grad = IndividualBranchGrad::zeros_like(branch);
        let inv = 1.0 / objects as f64;
        for s in &steps {
            grad.add_scaled(inv, &s.grad);
            cls += s.cls;
            kl += s.kl;
        }
        count += objects;
        opt.step(branch.tensors_mut(), grad.tensors());
    }
    if count == 0 {
        return Ok(None);
    }
    let n = count as f64;
    Ok(Some(total_object_loss(cls / n, kl / n, &w)))
}

fn scene_epoch(
    branch: &mut SceneBranch,
    opt: &mut Optimizer,
    cfg: &TrainingConfig,
    data: &Dataset,
    epoch: usize,
) -> Result<LossBreakdown> {
    let order = epoch_order(cfg.seed, epoch, Branch::Scene, data.len());
    let mut total = 0.0;
    for batch in order.chunks(cfg.batch_size) {
        let current = &*branch;
        let steps = batch
            .par_iter()
            .map(|&i| {
                let g = &data.groups[i];
                let (loss, grad) = scene_step(current, &g.scene, g.label)?;
                if !loss.is_finite() {
                    return Err(non_finite(Branch::Scene, &g.id, "cls"));
                }
                Ok((loss, grad))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut grad = LinearGrad::zeros_like(&branch.classifier);
        let inv = 1.0 / batch.len() as f64;
        for (loss, g) in &steps {
            grad.add_scaled(inv, g);
            total += loss;
        }
        opt.step(branch.tensors_mut(), grad.tensors().to_vec());
    }
    let cls = total / data.len() as f64;
    Ok(LossBreakdown {
        cls,
        total: cls,
        ..LossBreakdown::default()
    })
}

/// Validation results after one epoch.
#[derive(Debug, Clone)]
pub struct ValidationRecord {
    pub epoch: usize,
    pub evaluation: Evaluation,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub model: UalModel,
    pub history: Vec<EpochReport>,
    /// Epoch whose parameters were kept (the last one unless best-epoch
    /// selection is on).
    pub selected_epoch: Option<usize>,
}

/// Train from a fresh initialization for `cfg.epochs` epochs. When `val` is
/// given it is evaluated after every epoch and passed to `on_epoch`.
pub fn fit(
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainingConfig,
    mut on_epoch: impl FnMut(&EpochReport, Option<&ValidationRecord>) -> Result<()>,
) -> Result<TrainingRun> {
    let model = UalModel::init(&train.header, cfg);
    fit_from(model, train, val, cfg, &mut on_epoch)
}

pub fn fit_from(
    model: UalModel,
    train: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainingConfig,
    on_epoch: &mut dyn FnMut(&EpochReport, Option<&ValidationRecord>) -> Result<()>,
) -> Result<TrainingRun> {
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let settings = InferenceSettings::from_config(cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, UalModel)> = None;
    for epoch in 0..cfg.epochs {
        let report = trainer.train_epoch(train, epoch)?;
        log::info!(
            "epoch {epoch}: {}",
            report
                .losses
                .iter()
                .map(|(b, l)| format!("{b} {:.5}", l.total))
                .collect::<Vec<_>>()
                .join(", ")
        );
        let record = match val {
            Some(v) => Some(ValidationRecord {
                epoch,
                evaluation: evaluate(&trainer.model, v, &settings, cfg.fusion)?,
            }),
            None => None,
        };
        if let (true, Some(r)) = (cfg.select_best_epoch, record.as_ref()) {
            let uar = r.evaluation.fused.uar;
            if best.as_ref().is_none_or(|(b, _, _)| uar > *b) {
                best = Some((uar, epoch, trainer.model.clone()));
            }
        }
        on_epoch(&report, record.as_ref())?;
        history.push(report);
    }
    let (model, selected_epoch) = match best {
        Some((_, epoch, model)) => (model, Some(epoch)),
        None => (trainer.model, cfg.epochs.checked_sub(1)),
    };
    Ok(TrainingRun {
        model,
        history,
        selected_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_dataset, SynthesisSpec};

    fn tiny() -> (Dataset, TrainingConfig) {
        let spec = SynthesisSpec {
            num_groups: 30,
            face_dim: 6,
            object_dim: 4,
            scene_dim: 3,
            ..SynthesisSpec::default()
        };
        let cfg = TrainingConfig {
            latent_dim: 4,
            epochs: 2,
            batch_size: 8,
            log_var_init: -3.0,
            ..TrainingConfig::default()
        };
        (generate_dataset(&spec).unwrap().dataset, cfg)
    }

    #[test]
    fn zero_learning_rate_leaves_params_unchanged() {
        let (data, mut cfg) = tiny();
        cfg.face_optimizer.lr = 0.0;
        cfg.object_optimizer.lr = 0.0;
        cfg.scene_optimizer.lr = 0.0;
        let init = UalModel::init(&data.header, &cfg);
        let run = fit(&data, None, &cfg, |_, _| Ok(())).unwrap();
        assert_eq!(run.model, init);
    }

    #[test]
    fn same_seed_same_losses() {
        let (data, cfg) = tiny();
        let a = fit(&data, None, &cfg, |_, _| Ok(())).unwrap();
        let b = fit(&data, None, &cfg, |_, _| Ok(())).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn branches_train_in_isolation() {
        let (data, cfg) = tiny();
        let all = fit(&data, None, &cfg, |_, _| Ok(())).unwrap();
        let only_object = TrainingConfig {
            branches: vec![Branch::Object],
            ..cfg
        };
        let obj = fit(&data, None, &only_object, |_, _| Ok(())).unwrap();
        assert_eq!(obj.model.object, all.model.object);
        assert!(obj.model.face.is_none() && obj.model.scene.is_none());
    }

    #[test]
    fn non_finite_loss_names_group_and_term() {
        let (data, cfg) = tiny();
        let mut model = UalModel::init(&data.header, &cfg);
        model.scene.as_mut().unwrap().classifier.bias[0] = f64::NAN;
        let mut t = Trainer::new(model, cfg).unwrap();
        let err = t.train_epoch(&data, 0).unwrap_err().to_string();
        assert!(err.contains("scene") && err.contains("g000"), "{err}");
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Optimizer::new(
            OptimizerConfig {
                kind: OptimizerKind::Adam,
                lr: 0.1,
            },
            &[2],
        );
        let mut p = vec![1.0, -1.0];
        opt.step(vec![&mut p], vec![&[3.0, -0.5]]);
        assert!((p[0] - 0.9).abs() < 1e-7 && (p[1] + 0.9).abs() < 1e-7);
    }
}
