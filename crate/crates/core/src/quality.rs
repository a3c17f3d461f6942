//! Face quality filtering by embedding dispersion.
//!
//! A face is scored from `m` stochastic embeddings (reparameterized draws
//! from its own Gaussian embedding): `2 * sigmoid(-(2 / m^2) * sum_{i<j} d_ij)`
//! with Euclidean `d`. Crisp faces score near 1; faces whose draws scatter
//! score near 0 and are dropped below the threshold.

use serde::Serialize;

use crate::embedding::{reparameterize, GaussianEmbedding, GaussianHead};
use crate::error::{Result, UalError};
use crate::numerics::{DenseVector, NoiseSource};

pub const DEFAULT_THRESHOLD: f64 = 0.3;
pub const DEFAULT_SAMPLES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityAssessment {
    pub face: usize,
    pub score: f64,
    pub kept: bool,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    /// Indices of surviving faces, ascending. Never empty for nonempty input.
    pub kept: Vec<usize>,
    pub assessments: Vec<QualityAssessment>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn fiqe_score(embeddings: &[DenseVector]) -> Result<f64> {
    let m = embeddings.len();
    if m < 2 {
        return Err(UalError::InvalidArgument(format!(
            "quality score needs at least 2 embeddings, got {m}"
        )));
    }
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            total += embeddings[i].euclidean_distance(&embeddings[j])?;
        }
    }
    let m2 = (m * m) as f64;
    Ok(2.0 * sigmoid(-(2.0 / m2) * total))
}

/// Score each embedding from `samples` draws using its own noise source and
/// keep those at or above `threshold`. If nothing passes, the best-scoring
/// face (lowest index on ties) is kept alone.
pub fn filter_embeddings<N: NoiseSource>(
    embeddings: &[GaussianEmbedding],
    samples: usize,
    threshold: f64,
    noise: &mut [N],
) -> Result<FilterOutcome> {
    if samples < 2 {
        return Err(UalError::field("fiqe_samples", "must be at least 2"));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(UalError::field("delta2", format!("{threshold} not in (0, 1)")));
    }
    if noise.len() != embeddings.len() {
        return Err(UalError::dim("quality noise streams", embeddings.len(), noise.len()));
    }
    let mut assessments = Vec::with_capacity(embeddings.len());
    for (k, (emb, rng)) in embeddings.iter().zip(noise.iter_mut()).enumerate() {
        let draws: Vec<DenseVector> = (0..samples)
            .map(|_| reparameterize(emb, rng).z_star)
            .collect();
        let score = fiqe_score(&draws)?;
        assessments.push(QualityAssessment {
            face: k,
            score,
            kept: score >= threshold,
            samples,
        });
    }
    if !assessments.is_empty() && assessments.iter().all(|a| !a.kept) {
        let mut best = 0;
        for (i, a) in assessments.iter().enumerate() {
            if a.score > assessments[best].score {
                best = i;
            }
        }
        assessments[best].kept = true;
    }
    let kept = assessments.iter().filter(|a| a.kept).map(|a| a.face).collect();
    Ok(FilterOutcome { kept, assessments })
}

pub fn filter_faces<N: NoiseSource>(
    faces: &[&[f64]],
    head: &GaussianHead,
    samples: usize,
    threshold: f64,
    noise: &mut [N],
) -> Result<FilterOutcome> {
    let embeddings = faces
        .iter()
        .map(|x| head.embed(x))
        .collect::<Result<Vec<_>>>()?;
    filter_embeddings(&embeddings, samples, threshold, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{FixedNoise, SeededRng};

    fn emb(mu: Vec<f64>, sigma: f64) -> GaussianEmbedding {
        let d = mu.len();
        GaussianEmbedding::new(mu.into(), DenseVector::filled(d, sigma)).unwrap()
    }

    #[test]
    fn identical_embeddings_score_one() {
        let v = DenseVector::new(vec![0.3, -1.0, 2.0]);
        assert_eq!(fiqe_score(&[v.clone(), v.clone(), v]).unwrap(), 1.0);
    }

    #[test]
    fn two_points_at_distance_two() {
        let a = DenseVector::new(vec![0.0, 0.0]);
        let b = DenseVector::new(vec![2.0, 0.0]);
        let expected = 2.0 / (1.0 + 1f64.exp());
        let s = fiqe_score(&[a, b]).unwrap();
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 0.53788).abs() < 1e-5);
    }

    #[test]
    fn far_apart_scores_vanish() {
        let a = DenseVector::new(vec![0.0]);
        let b = DenseVector::new(vec![1e6]);
        assert!(fiqe_score(&[a, b]).unwrap() < 1e-100);
    }

    #[test]
    fn score_decreases_with_distance() {
        let base = DenseVector::new(vec![0.0, 0.0]);
        let mut prev = 1.0;
        for d in [0.1, 0.5, 1.0, 3.0] {
            let s = fiqe_score(&[base.clone(), DenseVector::new(vec![d, 0.0])]).unwrap();
            assert!(s < prev);
            prev = s;
        }
    }

    #[test]
    fn needs_two_embeddings() {
        assert!(fiqe_score(&[DenseVector::zeros(2)]).is_err());
    }

    fn streams(n: usize, seed: u64) -> Vec<SeededRng> {
        (0..n).map(|i| SeededRng::stream(seed, &[i as u64])).collect()
    }

    #[test]
    fn crisp_faces_all_kept() {
        let embs: Vec<_> = (0..4).map(|i| emb(vec![i as f64; 8], 1e-9)).collect();
        let out = filter_embeddings(&embs, 8, 0.3, &mut streams(4, 1)).unwrap();
        assert_eq!(out.kept, vec![0, 1, 2, 3]);
        assert!(out.assessments.iter().all(|a| (a.score - 1.0).abs() < 1e-6));
    }

    /// With sigma = 1 in 16 dims the expected pairwise distance is about
    /// sqrt(2 * 16) ~ 5.6; for m = 8 that is 28 pairs, exponent ~ -4.9 and an
    /// expected score ~ 0.015, far below 0.3.
    #[test]
    fn noisy_face_dropped() {
        let d = 16;
        let oracle_exponent = -(2.0 / 64.0) * 28.0 * (2.0 * d as f64).sqrt();
        assert!(2.0 * sigmoid(oracle_exponent) < 0.3);
        let mut embs: Vec<_> = (0..3).map(|i| emb(vec![i as f64; d], 1e-3)).collect();
        embs.insert(1, emb(vec![0.5; d], 1.0));
        let out = filter_embeddings(&embs, 8, 0.3, &mut streams(4, 2)).unwrap();
        assert_eq!(out.kept, vec![0, 2, 3]);
        assert!(!out.assessments[1].kept);
    }

    #[test]
    fn all_fail_keeps_best() {
        let embs: Vec<_> = [2.0, 1.0, 3.0].iter().map(|&s| emb(vec![0.0; 16], s)).collect();
        let out = filter_embeddings(&embs, 8, 0.3, &mut streams(3, 3)).unwrap();
        assert_eq!(out.kept.len(), 1);
        let best = out
            .assessments
            .iter()
            .max_by(|a, b| a.score.total_cmp(&b.score))
            .unwrap();
        assert_eq!(out.kept[0], best.face);
    }

    #[test]
    fn filtering_is_idempotent() {
        let embs: Vec<_> = [1e-3, 1.0, 2e-3, 0.5]
            .iter()
            .enumerate()
            .map(|(i, &s)| emb(vec![i as f64; 12], s))
            .collect();
        let first = filter_embeddings(&embs, 8, 0.3, &mut streams(4, 9)).unwrap();
        let kept: Vec<_> = first.kept.iter().map(|&i| embs[i].clone()).collect();
        let mut kept_streams: Vec<_> = first
            .kept
            .iter()
            .map(|&i| SeededRng::stream(9, &[i as u64]))
            .collect();
        let second = filter_embeddings(&kept, 8, 0.3, &mut kept_streams).unwrap();
        assert_eq!(second.kept.len(), kept.len());
        for (a, &i) in second.assessments.iter().zip(&first.kept) {
            assert_eq!(a.score, first.assessments[i].score);
        }
    }

    #[test]
    fn larger_sigma_never_raises_score() {
        let mu = vec![0.2; 6];
        let mut prev = f64::INFINITY;
        for s in [0.01, 0.05, 0.2, 1.0] {
            let e = emb(mu.clone(), s);
            let mut noise = [FixedNoise::new(vec![0.3, -1.2, 0.8, 1.5, -0.4, 0.1, 0.9])];
            let out = filter_embeddings(&[e], 8, 0.3, &mut noise).unwrap();
            assert!(out.assessments[0].score <= prev);
            prev = out.assessments[0].score;
        }
    }

    #[test]
    fn invalid_settings() {
        let e = [emb(vec![0.0], 1.0)];
        assert!(filter_embeddings(&e, 1, 0.3, &mut streams(1, 0)).is_err());
        assert!(filter_embeddings(&e, 8, 1.0, &mut streams(1, 0)).is_err());
    }
}
