//! Loss terms of the uncertainty-aware objective and their weighted totals.
//!
//! Face branch: `cls + l2 * kl + l3 * rank + l4 * rec`.
//! Object branch: `cls_obj + l2 * kl`, where `cls_obj` mixes the cross-entropy
//! of the mean and of the sampled embedding with weight `l1`.

use serde::{Deserialize, Serialize};

use crate::embedding::{GaussianEmbedding, StochasticDraw};
use crate::error::{Result, UalError};
use crate::numerics::{softmax_cross_entropy, DenseVector, Linear};
use crate::scoring::{importance, split_high_low, uncertainty_score, weighted_mean};

/// Which optional face-loss terms are active. Classification is always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossTerms {
    pub kl: bool,
    pub rank: bool,
    pub rec: bool,
}

impl LossTerms {
    pub const ALL: LossTerms = LossTerms {
        kl: true,
        rank: true,
        rec: true,
    };
    pub const CLS_ONLY: LossTerms = LossTerms {
        kl: false,
        rank: false,
        rec: false,
    };

    /// Parse `cls+kl+rank+rec` style lists; `cls` is mandatory.
    pub fn parse(s: &str) -> Result<Self> {
        let mut terms = LossTerms::CLS_ONLY;
        let mut has_cls = false;
        for part in s.split('+').map(str::trim) {
            match part {
                "cls" => has_cls = true,
                "kl" => terms.kl = true,
                "rank" => terms.rank = true,
                "rec" => terms.rec = true,
                other => {
                    return Err(UalError::field("loss_terms", format!("unknown term `{other}`")))
                }
            }
        }
        if !has_cls {
            return Err(UalError::field("loss_terms", "must include `cls`"));
        }
        Ok(terms)
    }
}

impl std::fmt::Display for LossTerms {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "cls")?;
        for (on, name) in [(self.kl, "kl"), (self.rank, "rank"), (self.rec, "rec")] {
            if on {
                write!(f, "+{name}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    /// High-importance fraction for the rank split.
    pub beta: f64,
    /// Rank margin.
    pub delta1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.1,
            lambda2: 1e-4,
            lambda3: 1.0,
            lambda4: 0.01,
            beta: 0.5,
            delta1: 0.2,
        }
    }
}

impl LossWeights {
    /// Zero the weights of disabled terms.
    pub fn masked(&self, terms: LossTerms) -> LossWeights {
        LossWeights {
            lambda2: if terms.kl { self.lambda2 } else { 0.0 },
            lambda3: if terms.rank { self.lambda3 } else { 0.0 },
            lambda4: if terms.rec { self.lambda4 } else { 0.0 },
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub kl: f64,
    pub rank: f64,
    pub rec: f64,
    pub total: f64,
    /// `[l1, l2, l3, l4]` used to form `total`.
    pub weights: [f64; 4],
}

impl LossBreakdown {
    /// `epoch,cls,kl,rank,rec,total`
    pub fn csv_line(&self, epoch: usize) -> String {
        format!(
            "{epoch},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            self.cls, self.kl, self.rank, self.rec, self.total
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.cls, self.kl, self.rank, self.rec, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Name of the first non-finite term.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("cls", self.cls),
            ("kl", self.kl),
            ("rank", self.rank),
            ("rec", self.rec),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }

    /// Average of several breakdowns (all produced with the same weights).
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let Some(first) = items.first() else {
            return LossBreakdown::default();
        };
        let n = items.len() as f64;
        let sum = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        LossBreakdown {
            cls: sum(|b| b.cls),
            kl: sum(|b| b.kl),
            rank: sum(|b| b.rank),
            rec: sum(|b| b.rec),
            total: sum(|b| b.total),
            weights: first.weights,
        }
    }
}

pub fn face_cls_loss(x_group: &[f64], label: usize, classifier: &Linear) -> Result<f64> {
    Ok(softmax_cross_entropy(&classifier.apply(x_group)?, label)?.loss)
}

/// `l1 * CE(mu) + (1 - l1) * CE(z_star)`.
pub fn object_cls_loss(
    mu: &[f64],
    z_star: &[f64],
    label: usize,
    classifier: &Linear,
    lambda1: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda1) {
        return Err(UalError::field("lambda1", format!("{lambda1} not in [0, 1]")));
    }
    let ce_mu = softmax_cross_entropy(&classifier.apply(mu)?, label)?.loss;
    let ce_z = softmax_cross_entropy(&classifier.apply(z_star)?, label)?.loss;
    Ok(lambda1 * ce_mu + (1.0 - lambda1) * ce_z)
}

/// KL divergence of one diagonal Gaussian from `N(0, I)`, summed over dims.
pub fn kl_single(mu: &[f64], sigma: &[f64]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(sigma)
        .map(|(m, s)| {
            let var = s * s;
            1.0 + var.ln() - m * m - var
        })
        .sum::<f64>()
}

/// Mean over embeddings of `KL(N(mu, sigma^2) || N(0, I))`.
pub fn kl_loss(embeddings: &[GaussianEmbedding]) -> Result<f64> {
    if embeddings.is_empty() {
        return Err(UalError::InvalidArgument("KL loss of an empty embedding list".into()));
    }
    let total: f64 = embeddings.iter().map(|e| kl_single(&e.mu, &e.sigma)).sum();
    Ok(total / embeddings.len() as f64)
}

/// `max(0, delta1 - (alpha_high - alpha_low))`.
pub fn rank_loss(alpha_high: f64, alpha_low: f64, delta1: f64) -> f64 {
    (delta1 - (alpha_high - alpha_low)).max(0.0)
}

/// `||z_star - mu||_1`.
pub fn rec_loss(z_star: &[f64], mu: &[f64]) -> Result<f64> {
    if z_star.len() != mu.len() {
        return Err(UalError::dim("reconstruction loss", mu.len(), z_star.len()));
    }
    Ok(z_star.iter().zip(mu).map(|(z, m)| (z - m).abs()).sum())
}

pub fn total_face_loss(cls: f64, kl: f64, rank: f64, rec: f64, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        cls,
        kl,
        rank,
        rec,
        total: cls + w.lambda2 * kl + w.lambda3 * rank + w.lambda4 * rec,
        weights: [w.lambda1, w.lambda2, w.lambda3, w.lambda4],
    }
}

pub fn total_object_loss(cls: f64, kl: f64, w: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        cls,
        kl,
        rank: 0.0,
        rec: 0.0,
        total: cls + w.lambda2 * kl,
        weights: [w.lambda1, w.lambda2, 0.0, 0.0],
    }
}

/// Face-branch loss of one group, composed term by term from given
/// embeddings and draws. Used as the reference the fused training pass is
/// checked against.
pub fn face_group_loss(
    embeddings: &[GaussianEmbedding],
    draws: &[StochasticDraw],
    label: usize,
    classifier: &Linear,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    if embeddings.len() != draws.len() {
        return Err(UalError::dim("face draws", embeddings.len(), draws.len()));
    }
    let scores: Vec<f64> = embeddings
        .iter()
        .zip(draws)
        .map(|(e, d)| uncertainty_score(&e.sigma, &d.eps))
        .collect();
    let alphas = importance(&scores).alphas;
    let zs: Vec<&[f64]> = draws.iter().map(|d| d.z_star.as_slice()).collect();
    let x_group = weighted_mean(&zs, &alphas)?;
    let cls = face_cls_loss(&x_group, label, classifier)?;
    let kl = kl_loss(embeddings)?;
    let rank = split_high_low(&alphas, w.beta)
        .map(|s| rank_loss(s.mean_high, s.mean_low, w.delta1))
        .unwrap_or(0.0);
    let mut rec = 0.0;
    for (e, d) in embeddings.iter().zip(draws) {
        rec += rec_loss(&d.z_star, &e.mu)?;
    }
    rec /= embeddings.len() as f64;
    Ok(total_face_loss(cls, kl, rank, rec, w))
}

/// Deterministic group feature: plain mean of the face means.
pub fn mean_embedding(embeddings: &[GaussianEmbedding]) -> Result<DenseVector> {
    let mus: Vec<DenseVector> = embeddings.iter().map(|e| e.mu.clone()).collect();
    DenseVector::mean_of(&mus)
}
