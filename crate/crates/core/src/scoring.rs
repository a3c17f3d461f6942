//! Uncertainty-sensitive scores, importance scalars and weighted aggregation
//! of face draws into a group feature.

use crate::embedding::StochasticDraw;
use crate::error::{Result, UalError};
use crate::numerics::DenseVector;

/// Lower bound on `|sigma_d * eps_d|` inside the harmonic mean.
pub const SCORE_FLOOR: f64 = 1e-8;

/// A face draw with its score and importance.
#[derive(Debug, Clone)]
pub struct ScoredIndividual {
    pub draw: StochasticDraw,
    pub score: f64,
    pub importance: f64,
}

/// Harmonic mean of `max(|sigma_d * eps_d|, 1e-8)`. Larger means more
/// uncertain. Panics if the lengths differ or are zero.
pub fn uncertainty_score(sigma: &[f64], eps: &[f64]) -> f64 {
    score_with_gradient(sigma, eps).0
}

/// Score and its gradient with respect to `sigma`. Components on the floor
/// get zero gradient.
pub fn score_with_gradient(sigma: &[f64], eps: &[f64]) -> (f64, Vec<f64>) {
    assert_eq!(sigma.len(), eps.len(), "sigma and eps lengths differ");
    assert!(!sigma.is_empty(), "score of an empty vector");
    let d = sigma.len() as f64;
    let terms: Vec<f64> = sigma
        .iter()
        .zip(eps)
        .map(|(s, e)| (s * e).abs().max(SCORE_FLOOR))
        .collect();
    let inv_sum: f64 = terms.iter().map(|t| 1.0 / t).sum();
    let score = d / inv_sum;
    // ds/dt = d / (inv_sum^2 t^2); dt/dsigma = |eps| (sigma > 0) above the floor.
    let grad = sigma
        .iter()
        .zip(eps)
        .zip(&terms)
        .map(|((s, e), &t)| {
            if (s * e).abs() > SCORE_FLOOR {
                d / (inv_sum * inv_sum * t * t) * e.abs()
            } else {
                0.0
            }
        })
        .collect();
    (score, grad)
}

/// Importance scalars plus the bookkeeping needed to differentiate them.
#[derive(Debug, Clone, PartialEq)]
pub struct Importance {
    pub alphas: Vec<f64>,
    /// `(argmin, argmax)` of the scores (first occurrence); `None` when all
    /// scores are equal and every alpha is the constant 1.
    pub extremes: Option<(usize, usize)>,
}

impl Importance {
    /// Pull `dL/dalpha` back to `dL/dscore`.
    pub fn backward(&self, d_alpha: &[f64]) -> Vec<f64> {
        let mut d_score = vec![0.0; self.alphas.len()];
        if let Some((lo, hi)) = self.extremes {
            let total: f64 = d_alpha.iter().sum();
            for (ds, da) in d_score.iter_mut().zip(d_alpha) {
                *ds -= da;
            }
            d_score[lo] += total;
            d_score[hi] += total;
        }
        d_score
    }
}

/// `alpha_n = s_min + s_max - s_n`; all ones when `s_max == s_min`.
///
/// This is the min-max reflection `beta s_min + (1 - beta) s_max` with
/// `beta = (s - s_min) / (s_max - s_min)`, simplified.
pub fn importance_scalars(scores: &[f64]) -> Vec<f64> {
    importance(scores).alphas
}

pub fn importance(scores: &[f64]) -> Importance {
    assert!(!scores.is_empty(), "importance of an empty score list");
    let mut lo = 0;
    let mut hi = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[lo] {
            lo = i;
        }
        if s > scores[hi] {
            hi = i;
        }
    }
    let (s_min, s_max) = (scores[lo], scores[hi]);
    if s_max > s_min {
        Importance {
            alphas: scores.iter().map(|s| s_min + s_max - s).collect(),
            extremes: Some((lo, hi)),
        }
    } else {
        Importance {
            alphas: vec![1.0; scores.len()],
            extremes: None,
        }
    }
}

/// `sum alpha_n z_n / sum alpha_n`.
pub fn weighted_mean(zs: &[&[f64]], alphas: &[f64]) -> Result<DenseVector> {
    if zs.is_empty() {
        return Err(UalError::InvalidArgument("aggregation of an empty face list".into()));
    }
    if zs.len() != alphas.len() {
        return Err(UalError::dim("importance scalars", zs.len(), alphas.len()));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0)) {
        return Err(UalError::InvalidArgument(format!(
            "importance scalars must be positive, got {a}"
        )));
    }
    let dim = zs[0].len();
    let total: f64 = alphas.iter().sum();
    let mut acc = vec![0.0; dim];
    for (z, &a) in zs.iter().zip(alphas) {
        if z.len() != dim {
            return Err(UalError::dim("face draw", dim, z.len()));
        }
        for (o, v) in acc.iter_mut().zip(z.iter()) {
            *o += a * v;
        }
    }
    Ok(acc.into_iter().map(|v| v / total).collect())
}

pub fn aggregate_group(draws: &[StochasticDraw], alphas: &[f64]) -> Result<DenseVector> {
    let zs: Vec<&[f64]> = draws.iter().map(|d| d.z_star.as_slice()).collect();
    weighted_mean(&zs, alphas)
}

/// High/low importance partition used by the rank regularizer.
#[derive(Debug, Clone, PartialEq)]
pub struct HighLowSplit {
    pub high: Vec<usize>,
    pub low: Vec<usize>,
    pub mean_high: f64,
    pub mean_low: f64,
}

/// Sort alphas descending (stable, so ties keep index order) and put the
/// first `ceil(ratio * n)` into the high group, clamped so both groups are
/// nonempty. `None` for fewer than two faces.
pub fn split_high_low(alphas: &[f64], ratio: f64) -> Option<HighLowSplit> {
    let n = alphas.len();
    if n < 2 {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| alphas[b].total_cmp(&alphas[a]));
    let cut = ((ratio * n as f64).ceil() as usize).clamp(1, n - 1);
    let (high, low) = order.split_at(cut);
    let mean = |idx: &[usize]| idx.iter().map(|&i| alphas[i]).sum::<f64>() / idx.len() as f64;
    Some(HighLowSplit {
        mean_high: mean(high),
        mean_low: mean(low),
        high: high.to_vec(),
        low: low.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn score_examples() {
        assert_eq!(uncertainty_score(&[1.0, 1.0], &[1.0, 1.0]), 1.0);
        assert_eq!(uncertainty_score(&[2.0, 2.0], &[1.0, 1.0]), 2.0);
        assert!((uncertainty_score(&[1.0, 3.0], &[1.0, 1.0]) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn score_handles_sign_and_zero() {
        assert_eq!(uncertainty_score(&[1.0, 1.0], &[-1.0, 1.0]), 1.0);
        let s = uncertainty_score(&[1.0, 1.0], &[0.0, 1.0]);
        assert!(s > 0.0 && s < 1e-7);
    }

    #[test]
    fn score_gradient_matches_differences() {
        let sigma = [0.7, 1.3, 0.4, 2.2];
        let eps = [0.5, -1.1, 0.9, 0.3];
        let (_, g) = score_with_gradient(&sigma, &eps);
        let h = 1e-6;
        for d in 0..4 {
            let mut p = sigma;
            let mut m = sigma;
            p[d] += h;
            m[d] -= h;
            let fd = (uncertainty_score(&p, &eps) - uncertainty_score(&m, &eps)) / (2.0 * h);
            assert!((fd - g[d]).abs() < 1e-8, "d={d}: {fd} vs {}", g[d]);
        }
    }

    #[test]
    fn importance_examples() {
        assert_eq!(importance_scalars(&[1.0, 2.0, 3.0]), vec![3.0, 2.0, 1.0]);
        assert_eq!(importance_scalars(&[2.0, 2.0, 2.0]), vec![1.0, 1.0, 1.0]);
        assert_eq!(importance_scalars(&[0.5, 1.0]), vec![1.0, 0.5]);
        assert_eq!(importance_scalars(&[4.2]), vec![1.0]);
    }

    #[test]
    fn importance_matches_projection_formula() {
        let s = [0.3, 1.7, 0.9, 1.1];
        let (mn, mx) = (0.3, 1.7);
        let alphas = importance_scalars(&s);
        for (a, si) in alphas.iter().zip(s) {
            let beta = (si - mn) / (mx - mn);
            let projected = beta * mn + (1.0 - beta) * mx;
            assert!((a - projected).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_examples() {
        let zs: [&[f64]; 2] = [&[1.0, 0.0], &[0.0, 1.0]];
        let g = weighted_mean(&zs, &[2.0, 1.0]).unwrap();
        assert!((g[0] - 2.0 / 3.0).abs() < 1e-15 && (g[1] - 1.0 / 3.0).abs() < 1e-15);

        let g = weighted_mean(&zs, &[1.0, 1.0]).unwrap();
        assert_eq!(g.as_slice(), &[0.5, 0.5]);

        let zs: [&[f64]; 2] = [&[3.0, -2.0], &[100.0, 100.0]];
        let g = weighted_mean(&zs, &[1.0, 1e-12]).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-9 && (g[1] + 2.0).abs() < 1e-9);
    }

    #[test]
    fn aggregate_errors() {
        assert!(weighted_mean(&[], &[]).is_err());
        let zs: [&[f64]; 1] = [&[1.0]];
        assert!(weighted_mean(&zs, &[0.0]).is_err());
        assert!(weighted_mean(&zs, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn split_examples() {
        let s = split_high_low(&[1.0, 0.0], 0.5).unwrap();
        assert_eq!((s.mean_high, s.mean_low), (1.0, 0.0));
        let s = split_high_low(&[3.0, 2.0, 1.0], 0.5).unwrap();
        assert_eq!(s.high, vec![0, 1]);
        assert_eq!((s.mean_high, s.mean_low), (2.5, 1.0));
        let s = split_high_low(&[0.7; 4], 0.5).unwrap();
        assert_eq!(s.mean_high, s.mean_low);
        assert!(split_high_low(&[1.0], 0.5).is_none());
    }

    proptest! {
        #[test]
        fn alpha_reverses_score_order(scores in prop::collection::vec(0.01f64..10.0, 2..12)) {
            let alphas = importance_scalars(&scores);
            let (mn, mx) = scores.iter().fold((f64::MAX, f64::MIN), |(a, b), &s| (a.min(s), b.max(s)));
            if mx > mn {
                for (a, s) in alphas.iter().zip(&scores) {
                    prop_assert!((a + s - (mn + mx)).abs() < 1e-12);
                    prop_assert!(*a >= mn - 1e-12 && *a <= mx + 1e-12);
                }
            }
            for i in 0..scores.len() {
                for j in 0..scores.len() {
                    if scores[i] < scores[j] {
                        prop_assert!(alphas[i] > alphas[j]);
                    }
                }
            }
        }

        #[test]
        fn aggregation_is_convex_and_permutation_invariant(
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..8),
            weights in prop::collection::vec(0.1f64..3.0, 8),
        ) {
            let alphas = &weights[..rows.len()];
            let zs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
            let g = weighted_mean(&zs, alphas).unwrap();
            for d in 0..3 {
                let lo = rows.iter().map(|r| r[d]).fold(f64::MAX, f64::min);
                let hi = rows.iter().map(|r| r[d]).fold(f64::MIN, f64::max);
                prop_assert!(g[d] >= lo - 1e-12 && g[d] <= hi + 1e-12);
            }
            let rev_z: Vec<&[f64]> = zs.iter().rev().copied().collect();
            let rev_a: Vec<f64> = alphas.iter().rev().copied().collect();
            let g2 = weighted_mean(&rev_z, &rev_a).unwrap();
            prop_assert!(g.max_abs_diff(&g2).unwrap() < 1e-12);
            if rows.len() == 1 {
                for (a, b) in g.iter().zip(&rows[0]) {
                    prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs());
                }
            }
        }

        #[test]
        fn high_mean_never_below_low(alphas in prop::collection::vec(0.0f64..5.0, 2..10), ratio in 0.05f64..0.95) {
            let s = split_high_low(&alphas, ratio).unwrap();
            prop_assert!(s.mean_high >= s.mean_low);
            prop_assert_eq!(s.high.len() + s.low.len(), alphas.len());
        }
    }
}
