//! Branch models and their per-group forward/backward passes.
//!
//! Face and object branches share the same parameter layout: a Gaussian head
//! and a linear classifier over the latent space. The scene branch is a
//! single linear classifier on the scene feature.

use crate::embedding::{GaussianHead, GaussianHeadGrad};
use crate::error::{Result, UalError};
use crate::losses::{LossBreakdown, LossWeights};
use crate::numerics::{softmax_cross_entropy, DenseVector, Linear, LinearGrad, ParameterStore, SeededRng};
use crate::scoring::{importance, score_with_gradient, split_high_low};

/// Gaussian head plus classifier (face and object branches).
#[derive(Debug, Clone, PartialEq)]
pub struct IndividualBranch {
    pub head: GaussianHead,
    pub classifier: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndividualBranchGrad {
    pub head: GaussianHeadGrad,
    pub classifier: LinearGrad,
}

/// Scene branch: one linear classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBranch {
    pub classifier: Linear,
}

impl IndividualBranch {
    pub fn init(in_dim: usize, latent_dim: usize, num_classes: usize, log_var_bias: f64, rng: &mut SeededRng) -> Self {
        IndividualBranch {
            head: GaussianHead::init(in_dim, latent_dim, log_var_bias, rng),
            classifier: Linear::init(latent_dim, num_classes, 1.0, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.head.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.head.latent_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_dim()
    }

    pub fn tensor_names(prefix: &str) -> Vec<String> {
        ["mu.weight", "mu.bias", "log_var.weight", "log_var.bias", "cls.weight", "cls.bias"]
            .iter()
            .map(|s| format!("{prefix}.{s}"))
            .collect()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.head.mu.weight.as_slice(),
            &self.head.mu.bias,
            self.head.log_var.weight.as_slice(),
            &self.head.log_var.bias,
            self.classifier.weight.as_slice(),
            &self.classifier.bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let [mw, mb] = self.head.mu.tensors_mut();
        let [lw, lb] = self.head.log_var.tensors_mut();
        let [cw, cb] = self.classifier.tensors_mut();
        vec![mw, mb, lw, lb, cw, cb]
    }

    pub fn is_finite(&self) -> bool {
        self.head.mu.is_finite() && self.head.log_var.is_finite() && self.classifier.is_finite()
    }

    pub fn to_store(&self, prefix: &str, store: &mut ParameterStore) -> Result<()> {
        store.insert_linear(&format!("{prefix}.mu"), &self.head.mu)?;
        store.insert_linear(&format!("{prefix}.log_var"), &self.head.log_var)?;
        store.insert_linear(&format!("{prefix}.cls"), &self.classifier)
    }

    /// Read a branch back; shapes are taken from the stored arrays and
    /// checked for consistency.
    pub fn from_store(prefix: &str, store: &mut ParameterStore) -> Result<Self> {
        let (in_dim, latent) = store.linear_dims(&format!("{prefix}.mu"))?;
        let (_, classes) = store.linear_dims(&format!("{prefix}.cls"))?;
        let mu = store.take_linear(&format!("{prefix}.mu"), in_dim, latent)?;
        let log_var = store.take_linear(&format!("{prefix}.log_var"), in_dim, latent)?;
        let classifier = store.take_linear(&format!("{prefix}.cls"), latent, classes)?;
        Ok(IndividualBranch {
            head: GaussianHead::new(mu, log_var)?,
            classifier,
        })
    }
}

impl IndividualBranchGrad {
    pub fn zeros_like(branch: &IndividualBranch) -> Self {
        IndividualBranchGrad {
            head: GaussianHeadGrad::zeros_like(&branch.head),
            classifier: LinearGrad::zeros_like(&branch.classifier),
        }
    }

    pub fn add_scaled(&mut self, factor: f64, other: &IndividualBranchGrad) {
        self.head.add_scaled(factor, &other.head);
        self.classifier.add_scaled(factor, &other.classifier);
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let [mw, mb] = self.head.mu.tensors();
        let [lw, lb] = self.head.log_var.tensors();
        let [cw, cb] = self.classifier.tensors();
        vec![mw, mb, lw, lb, cw, cb]
    }
}

impl SceneBranch {
    pub fn init(in_dim: usize, num_classes: usize, rng: &mut SeededRng) -> Self {
        SceneBranch {
            classifier: Linear::init(in_dim, num_classes, 1.0, rng),
        }
    }

    pub fn tensor_names(prefix: &str) -> Vec<String> {
        vec![format!("{prefix}.cls.weight"), format!("{prefix}.cls.bias")]
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        vec![self.classifier.weight.as_slice(), &self.classifier.bias]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.classifier.tensors_mut().into()
    }

    pub fn to_store(&self, prefix: &str, store: &mut ParameterStore) -> Result<()> {
        store.insert_linear(&format!("{prefix}.cls"), &self.classifier)
    }

    pub fn from_store(prefix: &str, store: &mut ParameterStore) -> Result<Self> {
        let (in_dim, classes) = store.linear_dims(&format!("{prefix}.cls"))?;
        Ok(SceneBranch {
            classifier: store.take_linear(&format!("{prefix}.cls"), in_dim, classes)?,
        })
    }
}

/// Multipliers applied to each face loss term when forming the objective
/// that is differentiated. Training uses `(1, l2, l3, l4)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceObjectiveScales {
    pub cls: f64,
    pub kl: f64,
    pub rank: f64,
    pub rec: f64,
}

impl FaceObjectiveScales {
    pub fn from_weights(w: &LossWeights) -> Self {
        FaceObjectiveScales {
            cls: 1.0,
            kl: w.lambda2,
            rank: w.lambda3,
            rec: w.lambda4,
        }
    }
}

/// Multipliers for the object objective: `cls_mu * CE(mu) + cls_z * CE(z) + kl * KL`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectObjectiveScales {
    pub cls_mu: f64,
    pub cls_z: f64,
    pub kl: f64,
}

impl ObjectObjectiveScales {
    pub fn from_weights(w: &LossWeights) -> Self {
        ObjectObjectiveScales {
            cls_mu: w.lambda1,
            cls_z: 1.0 - w.lambda1,
            kl: w.lambda2,
        }
    }
}

/// Raw loss terms of one group and the gradient of the scaled objective.
#[derive(Debug, Clone)]
pub struct BranchStep {
    pub cls: f64,
    pub kl: f64,
    pub rank: f64,
    pub rec: f64,
    /// Value of the scaled objective that `grad` differentiates.
    pub objective: f64,
    pub grad: IndividualBranchGrad,
}

impl BranchStep {
    pub fn face_breakdown(&self, w: &LossWeights) -> LossBreakdown {
        crate::losses::total_face_loss(self.cls, self.kl, self.rank, self.rec, w)
    }
}

fn check_rows(rows: &[&[f64]], dim: usize, what: &str) -> Result<()> {
    for r in rows {
        if r.len() != dim {
            return Err(UalError::dim(what.to_string(), dim, r.len()));
        }
    }
    Ok(())
}

/// Latent moments of one individual, keeping the raw log-variance.
struct Moments {
    mu: DenseVector,
    log_var: DenseVector,
    sigma: DenseVector,
}

fn moments(head: &GaussianHead, x: &[f64]) -> Result<Moments> {
    let mu = head.mu.apply(x)?;
    let log_var = head.log_var.apply(x)?;
    let sigma: DenseVector = log_var.iter().map(|lv| (0.5 * lv).exp()).collect();
    Ok(Moments { mu, log_var, sigma })
}

fn kl_from_log_var(mu: &[f64], log_var: &[f64]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

/// Face-branch loss and gradient for one group.
///
/// `eps[n]` is the reparameterization noise of face `n`. With `ual` off the
/// group feature is the plain mean of the face means and only the
/// classification term is used.
pub fn face_group_step(
    branch: &IndividualBranch,
    faces: &[&[f64]],
    eps: &[DenseVector],
    label: usize,
    w: &LossWeights,
    scales: FaceObjectiveScales,
    ual: bool,
) -> Result<BranchStep> {
    let k = faces.len();
    if k == 0 {
        return Err(UalError::InvalidArgument("face step on a group without faces".into()));
    }
    check_rows(faces, branch.in_dim(), "face feature")?;
    let d = branch.latent_dim();
    let mut grad = IndividualBranchGrad::zeros_like(branch);
    let mom = faces
        .iter()
        .map(|x| moments(&branch.head, x))
        .collect::<Result<Vec<_>>>()?;
    let kf = k as f64;

    if !ual {
        let mut x_group = DenseVector::zeros(d);
        for m in &mom {
            x_group.axpy(1.0 / kf, &m.mu)?;
        }
        let ce = softmax_cross_entropy(&branch.classifier.apply(&x_group)?, label)?;
        let d_logits = ce.grad_logits(label).scale(scales.cls);
        grad.classifier.accumulate(&x_group, &d_logits)?;
        let d_x = branch.classifier.weight.matvec_transposed(&d_logits)?;
        let d_mu = d_x.scale(1.0 / kf);
        let zero = vec![0.0; d];
        for x in faces {
            grad.head.accumulate(x, &d_mu, &zero)?;
        }
        return Ok(BranchStep {
            cls: ce.loss,
            kl: 0.0,
            rank: 0.0,
            rec: 0.0,
            objective: scales.cls * ce.loss,
            grad,
        });
    }

    if eps.len() != k {
        return Err(UalError::dim("face noise vectors", k, eps.len()));
    }
    for e in eps {
        if e.len() != d {
            return Err(UalError::dim("face noise", d, e.len()));
        }
    }

    // Forward.
    let zs: Vec<DenseVector> = mom
        .iter()
        .zip(eps)
        .map(|(m, e)| m.mu.iter().zip(m.sigma.iter()).zip(e.iter()).map(|((mu, s), e)| mu + e * s).collect())
        .collect();
    let (scores, score_grads): (Vec<f64>, Vec<Vec<f64>>) = mom
        .iter()
        .zip(eps)
        .map(|(m, e)| score_with_gradient(&m.sigma, e))
        .unzip();
    let imp = importance(&scores);
    let alpha_sum: f64 = imp.alphas.iter().sum();
    let mut x_group = DenseVector::zeros(d);
    for (z, a) in zs.iter().zip(&imp.alphas) {
        x_group.axpy(a / alpha_sum, z)?;
    }
    let ce = softmax_cross_entropy(&branch.classifier.apply(&x_group)?, label)?;
    let kl = mom.iter().map(|m| kl_from_log_var(&m.mu, &m.log_var)).sum::<f64>() / kf;
    let split = split_high_low(&imp.alphas, w.beta);
    let rank = split
        .as_ref()
        .map(|s| crate::losses::rank_loss(s.mean_high, s.mean_low, w.delta1))
        .unwrap_or(0.0);
    // |z - mu| computed as |eps * sigma| so it carries no dependence on mu.
    let rec = mom
        .iter()
        .zip(eps)
        .map(|(m, e)| m.sigma.iter().zip(e.iter()).map(|(s, e)| (e * s).abs()).sum::<f64>())
        .sum::<f64>()
        / kf;
    let objective = scales.cls * ce.loss + scales.kl * kl + scales.rank * rank + scales.rec * rec;

    // Backward.
    let d_logits = ce.grad_logits(label).scale(scales.cls);
    grad.classifier.accumulate(&x_group, &d_logits)?;
    let d_x = branch.classifier.weight.matvec_transposed(&d_logits)?;
    let mut d_alpha: Vec<f64> = zs
        .iter()
        .map(|z| {
            z.iter()
                .zip(x_group.iter())
                .zip(d_x.iter())
                .map(|((z, xg), g)| (z - xg) * g)
                .sum::<f64>()
                / alpha_sum
        })
        .collect();
    if let Some(s) = split.as_ref().filter(|_| rank > 0.0) {
        let hi = scales.rank / s.high.len() as f64;
        let lo = scales.rank / s.low.len() as f64;
        for &i in &s.high {
            d_alpha[i] -= hi;
        }
        for &i in &s.low {
            d_alpha[i] += lo;
        }
    }
    let d_score = imp.backward(&d_alpha);
    let kl_scale = scales.kl / kf;
    let rec_scale = scales.rec / kf;
    for n in 0..k {
        let m = &mom[n];
        let share = imp.alphas[n] / alpha_sum;
        let mut d_mu = vec![0.0; d];
        let mut d_lv = vec![0.0; d];
        for j in 0..d {
            let dz = share * d_x[j];
            let e = eps[n][j];
            let s = m.sigma[j];
            let d_sigma = e * dz + d_score[n] * score_grads[n][j] + rec_scale * e.abs();
            d_mu[j] = dz + kl_scale * m.mu[j];
            d_lv[j] = d_sigma * 0.5 * s + kl_scale * 0.5 * (m.log_var[j].exp() - 1.0);
        }
        grad.head.accumulate(faces[n], &d_mu, &d_lv)?;
    }
    Ok(BranchStep {
        cls: ce.loss,
        kl,
        rank,
        rec,
        objective,
        grad,
    })
}

/// Object-branch loss and gradient summed over the objects of one group.
/// Returned terms are sums; divide by the object count for means.
pub fn object_group_step(
    branch: &IndividualBranch,
    objects: &[&[f64]],
    eps: &[DenseVector],
    label: usize,
    scales: ObjectObjectiveScales,
    ual: bool,
) -> Result<BranchStep> {
    check_rows(objects, branch.in_dim(), "object feature")?;
    let d = branch.latent_dim();
    let mut grad = IndividualBranchGrad::zeros_like(branch);
    let mut cls_sum = 0.0;
    let mut kl_sum = 0.0;
    let mut objective = 0.0;
    if ual && eps.len() != objects.len() {
        return Err(UalError::dim("object noise vectors", objects.len(), eps.len()));
    }
    for (n, x) in objects.iter().enumerate() {
        let m = moments(&branch.head, x)?;
        let ce_mu = softmax_cross_entropy(&branch.classifier.apply(&m.mu)?, label)?;
        if !ual {
            cls_sum += ce_mu.loss;
            objective += ce_mu.loss;
            let g = ce_mu.grad_logits(label);
            grad.classifier.accumulate(&m.mu, &g)?;
            let d_mu = branch.classifier.weight.matvec_transposed(&g)?;
            grad.head.accumulate(x, &d_mu, &vec![0.0; d])?;
            continue;
        }
        let e = &eps[n];
        if e.len() != d {
            return Err(UalError::dim("object noise", d, e.len()));
        }
        let z: DenseVector = m
            .mu
            .iter()
            .zip(m.sigma.iter())
            .zip(e.iter())
            .map(|((mu, s), e)| mu + e * s)
            .collect();
        let ce_z = softmax_cross_entropy(&branch.classifier.apply(&z)?, label)?;
        let kl = kl_from_log_var(&m.mu, &m.log_var);
        let cls = scales_cls(scales, ce_mu.loss, ce_z.loss);
        cls_sum += cls;
        kl_sum += kl;
        objective += cls + scales.kl * kl;

        let g_mu = ce_mu.grad_logits(label).scale(scales.cls_mu);
        let g_z = ce_z.grad_logits(label).scale(scales.cls_z);
        grad.classifier.accumulate(&m.mu, &g_mu)?;
        grad.classifier.accumulate(&z, &g_z)?;
        let back_mu = branch.classifier.weight.matvec_transposed(&g_mu)?;
        let back_z = branch.classifier.weight.matvec_transposed(&g_z)?;
        let mut d_mu = vec![0.0; d];
        let mut d_lv = vec![0.0; d];
        for j in 0..d {
            d_mu[j] = back_mu[j] + back_z[j] + scales.kl * m.mu[j];
            let d_sigma = e[j] * back_z[j];
            d_lv[j] = d_sigma * 0.5 * m.sigma[j] + scales.kl * 0.5 * (m.log_var[j].exp() - 1.0);
        }
        grad.head.accumulate(x, &d_mu, &d_lv)?;
    }
    Ok(BranchStep {
        cls: cls_sum,
        kl: kl_sum,
        rank: 0.0,
        rec: 0.0,
        objective,
        grad,
    })
}

fn scales_cls(s: ObjectObjectiveScales, ce_mu: f64, ce_z: f64) -> f64 {
    s.cls_mu * ce_mu + s.cls_z * ce_z
}

/// Cross-entropy of the scene classifier and its gradient.
pub fn scene_step(branch: &SceneBranch, scene: &[f64], label: usize) -> Result<(f64, LinearGrad)> {
    let ce = softmax_cross_entropy(&branch.classifier.apply(scene)?, label)?;
    let mut grad = LinearGrad::zeros_like(&branch.classifier);
    grad.accumulate(scene, &ce.grad_logits(label))?;
    Ok((ce.loss, grad))
}
