//! Gaussian individual embeddings, reparameterized sampling and Monte-Carlo
//! prediction.
//!
//! Each individual feature `x` is mapped to `N(mu, diag(sigma^2))` by two
//! affine heads. The second head predicts `log sigma^2`, so
//! `sigma = exp(0.5 * head(x))` is always positive.

use crate::error::{Result, UalError};
use crate::numerics::{
    softmax, DenseVector, DifferentiableUnit, Linear, LinearGrad, NoiseSource, SeededRng,
    UnitGradients,
};

/// Mean and log-variance projectors for one branch.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHead {
    pub mu: Linear,
    pub log_var: Linear,
}

impl GaussianHead {
    pub fn new(mu: Linear, log_var: Linear) -> Result<Self> {
        if mu.in_dim() != log_var.in_dim() || mu.out_dim() != log_var.out_dim() {
            return Err(UalError::InvalidArgument(format!(
                "mean head {}x{} and log-variance head {}x{} disagree",
                mu.out_dim(),
                mu.in_dim(),
                log_var.out_dim(),
                log_var.in_dim()
            )));
        }
        Ok(GaussianHead { mu, log_var })
    }

    /// Random mean head; the log-variance head starts with small weights and
    /// a constant bias `log_var_bias`.
    pub fn init(in_dim: usize, latent_dim: usize, log_var_bias: f64, rng: &mut SeededRng) -> Self {
        let mu = Linear::init(in_dim, latent_dim, 1.0, rng);
        let mut log_var = Linear::init(in_dim, latent_dim, 0.1, rng);
        log_var.bias.iter_mut().for_each(|b| *b = log_var_bias);
        GaussianHead { mu, log_var }
    }

    pub fn in_dim(&self) -> usize {
        self.mu.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.mu.out_dim()
    }

    pub fn embed(&self, x: &[f64]) -> Result<GaussianEmbedding> {
        embed_individual(x, self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianHeadGrad {
    pub mu: LinearGrad,
    pub log_var: LinearGrad,
}

impl GaussianHeadGrad {
    pub fn zeros_like(head: &GaussianHead) -> Self {
        GaussianHeadGrad {
            mu: LinearGrad::zeros_like(&head.mu),
            log_var: LinearGrad::zeros_like(&head.log_var),
        }
    }

    /// Accumulate `(dL/dmu, dL/dlog_var)` for input `x`.
    pub fn accumulate(&mut self, x: &[f64], d_mu: &[f64], d_log_var: &[f64]) -> Result<()> {
        self.mu.accumulate(x, d_mu)?;
        self.log_var.accumulate(x, d_log_var)
    }

    pub fn add_scaled(&mut self, factor: f64, other: &GaussianHeadGrad) {
        self.mu.add_scaled(factor, &other.mu);
        self.log_var.add_scaled(factor, &other.log_var);
    }
}

/// `N(mu, diag(sigma^2))` for one individual.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEmbedding {
    pub mu: DenseVector,
    pub sigma: DenseVector,
    pub source_id: Option<String>,
}

impl GaussianEmbedding {
    pub fn new(mu: DenseVector, sigma: DenseVector) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(UalError::dim("gaussian embedding sigma", mu.len(), sigma.len()));
        }
        if let Some(d) = sigma.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(UalError::InvalidArgument(format!(
                "sigma[{d}] = {} is not strictly positive",
                sigma[d]
            )));
        }
        if !mu.is_finite() {
            return Err(UalError::NonFinite {
                context: "gaussian embedding mean".into(),
            });
        }
        Ok(GaussianEmbedding {
            mu,
            sigma,
            source_id: None,
        })
    }

    pub fn with_source(mut self, id: impl Into<String>) -> Self {
        self.source_id = Some(id.into());
        self
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// One reparameterized sample `z_star = mu + eps * sigma` together with the
/// noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticDraw {
    pub z_star: DenseVector,
    pub eps: DenseVector,
}

impl StochasticDraw {
    /// `max |z_star - (mu + eps * sigma)|`; zero for draws made by [`reparameterize`].
    pub fn reconstruction_error(&self, emb: &GaussianEmbedding) -> f64 {
        self.z_star
            .iter()
            .zip(emb.mu.iter().zip(emb.sigma.iter()).zip(self.eps.iter()))
            .map(|(z, ((m, s), e))| (z - (m + e * s)).abs())
            .fold(0.0, f64::max)
    }
}

/// `mu = head_mu(x)`, `sigma = exp(0.5 * head_logvar(x))`.
pub fn embed_individual(x: &[f64], head: &GaussianHead) -> Result<GaussianEmbedding> {
    if x.len() != head.in_dim() {
        return Err(UalError::dim("individual feature", head.in_dim(), x.len()));
    }
    let mu = head.mu.apply(x)?;
    let log_var = head.log_var.apply(x)?;
    if !mu.is_finite() || !log_var.is_finite() {
        return Err(UalError::NonFinite {
            context: "embedding head output".into(),
        });
    }
    let sigma: DenseVector = log_var.iter().map(|lv| (0.5 * lv).exp()).collect();
    if sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(UalError::NonFinite {
            context: "embedding sigma (log-variance out of range)".into(),
        });
    }
    Ok(GaussianEmbedding {
        mu,
        sigma,
        source_id: None,
    })
}

pub fn reparameterize(emb: &GaussianEmbedding, noise: &mut impl NoiseSource) -> StochasticDraw {
    let eps = noise.standard_normal_vec(emb.dim());
    let z_star = emb
        .mu
        .iter()
        .zip(emb.sigma.iter())
        .zip(eps.iter())
        .map(|((m, s), e)| m + e * s)
        .collect();
    StochasticDraw { z_star, eps }
}

/// Monte-Carlo prediction for one individual.
#[derive(Debug, Clone)]
pub struct McPrediction {
    /// `(1/N) sum_n softmax(classifier(z*_n))`
    pub probs: DenseVector,
    /// `(1/N) sum_n z*_n`
    pub mean_z: DenseVector,
}

pub fn mc_predict(
    emb: &GaussianEmbedding,
    classifier: &Linear,
    samples: usize,
    noise: &mut impl NoiseSource,
) -> Result<McPrediction> {
    if samples == 0 {
        return Err(UalError::InvalidArgument(
            "Monte-Carlo prediction needs at least one sample".into(),
        ));
    }
    if classifier.in_dim() != emb.dim() {
        return Err(UalError::dim("classifier input", classifier.in_dim(), emb.dim()));
    }
    let mut probs = DenseVector::zeros(classifier.out_dim());
    let mut mean_z = DenseVector::zeros(emb.dim());
    for _ in 0..samples {
        let draw = reparameterize(emb, noise);
        let p = softmax(&classifier.apply(&draw.z_star)?);
        probs.axpy(1.0, &p)?;
        mean_z.axpy(1.0, &draw.z_star)?;
    }
    let inv = 1.0 / samples as f64;
    Ok(McPrediction {
        probs: probs.scale(inv),
        mean_z: mean_z.scale(inv),
    })
}

pub struct GaussianHeadTape {
    input: DenseVector,
    sigma: DenseVector,
}

/// Output is `[mu; sigma]` (length `2 * latent_dim`).
impl DifferentiableUnit for GaussianHead {
    type Tape = GaussianHeadTape;

    fn forward(&self, input: &[f64]) -> Result<(DenseVector, GaussianHeadTape)> {
        let emb = embed_individual(input, self)?;
        let mut out = emb.mu.to_vec();
        out.extend_from_slice(&emb.sigma);
        Ok((
            DenseVector::new(out),
            GaussianHeadTape {
                input: DenseVector::new(input.to_vec()),
                sigma: emb.sigma,
            },
        ))
    }

    fn backward(&self, tape: &GaussianHeadTape, grad_output: &[f64]) -> Result<UnitGradients> {
        let d = self.latent_dim();
        if grad_output.len() != 2 * d {
            return Err(UalError::dim("gaussian head output gradient", 2 * d, grad_output.len()));
        }
        let d_mu = &grad_output[..d];
        let d_log_var: Vec<f64> = grad_output[d..]
            .iter()
            .zip(tape.sigma.iter())
            .map(|(g, s)| g * 0.5 * s)
            .collect();
        let mut grad = GaussianHeadGrad::zeros_like(self);
        grad.accumulate(&tape.input, d_mu, &d_log_var)?;
        let mut d_input = self.mu.weight.matvec_transposed(d_mu)?;
        d_input.axpy(1.0, &self.log_var.weight.matvec_transposed(&d_log_var)?)?;
        let [mw, mb] = grad.mu.tensors();
        let [lw, lb] = grad.log_var.tensors();
        Ok(UnitGradients {
            input: d_input,
            params: vec![mw.to_vec(), mb.to_vec(), lw.to_vec(), lb.to_vec()],
        })
    }

    fn parameters(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for (prefix, layer) in [("mu", &self.mu), ("log_var", &self.log_var)] {
            for (n, v) in layer.parameters() {
                out.push((format!("{prefix}.{n}"), v));
            }
        }
        out
    }

    fn with_parameters(&self, values: &[Vec<f64>]) -> Result<Self> {
        if values.len() != 4 {
            return Err(UalError::dim("gaussian head parameter count", 4, values.len()));
        }
        GaussianHead::new(
            self.mu.with_parameters(&values[..2])?,
            self.log_var.with_parameters(&values[2..])?,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{gradient_check, ClassifierObjective};
    use crate::numerics::{DenseMatrix, FixedNoise};

    fn random_head(seed: u64, in_dim: usize, d: usize) -> GaussianHead {
        let mut rng = SeededRng::new(seed);
        let mut head = GaussianHead::init(in_dim, d, 0.0, &mut rng);
        for b in head.mu.bias.iter_mut().chain(head.log_var.bias.iter_mut()) {
            *b = 0.3 * rng.standard_normal();
        }
        head
    }

    #[test]
    fn constant_heads() {
        let mu = Linear::new(DenseMatrix::zeros(2, 3), DenseVector::new(vec![0.5, -1.0])).unwrap();
        let lv = Linear::new(DenseMatrix::zeros(2, 3), DenseVector::new(vec![2.0, 0.0])).unwrap();
        let head = GaussianHead::new(mu, lv).unwrap();
        let emb = embed_individual(&[3.0, -7.0, 1.0], &head).unwrap();
        assert_eq!(emb.mu.as_slice(), &[0.5, -1.0]);
        assert_eq!(emb.sigma[0], 1f64.exp());
        assert_eq!(emb.sigma[1], 1.0);
    }

    #[test]
    fn head_matches_recomputation() {
        let head = random_head(5, 6, 4);
        let x: Vec<f64> = (0..6).map(|i| (i as f64 * 0.7).sin()).collect();
        let emb = embed_individual(&x, &head).unwrap();
        for r in 0..4 {
            let mut m = 0.0;
            let mut l = 0.0;
            for c in 0..6 {
                m += head.mu.weight.get(r, c) * x[c];
                l += head.log_var.weight.get(r, c) * x[c];
            }
            m += head.mu.bias[r];
            l += head.log_var.bias[r];
            assert_eq!(emb.mu[r].to_bits(), m.to_bits());
            assert_eq!(emb.sigma[r].to_bits(), (0.5 * l).exp().to_bits());
        }
    }

    #[test]
    fn wrong_input_dim() {
        let head = random_head(1, 3, 2);
        assert!(matches!(
            embed_individual(&[1.0, 2.0], &head),
            Err(UalError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn overflowing_head_is_non_finite() {
        let lv = Linear::new(DenseMatrix::zeros(1, 1), DenseVector::new(vec![1e6])).unwrap();
        let head = GaussianHead::new(Linear::zeros(1, 1), lv).unwrap();
        assert!(matches!(
            embed_individual(&[0.0], &head),
            Err(UalError::NonFinite { .. })
        ));
    }

    #[test]
    fn reparameterize_cases() {
        let emb = GaussianEmbedding::new(vec![0.0, 0.0].into(), vec![1.0, 1.0].into()).unwrap();
        let d = reparameterize(&emb, &mut FixedNoise::new(vec![1.0, -1.0]));
        assert_eq!(d.z_star.as_slice(), &[1.0, -1.0]);

        let emb = GaussianEmbedding::new(vec![1.0, 1.0].into(), vec![2.0, 3.0].into()).unwrap();
        let d = reparameterize(&emb, &mut FixedNoise::new(vec![0.5, -1.0]));
        assert_eq!(d.z_star.as_slice(), &[2.0, -2.0]);

        let d = reparameterize(&emb, &mut FixedNoise::zeros());
        assert_eq!(d.z_star, emb.mu);
    }

    #[test]
    fn draws_reconstruct_exactly() {
        let head = random_head(9, 5, 7);
        let mut rng = SeededRng::new(3);
        for i in 0..20 {
            let x: Vec<f64> = (0..5).map(|j| ((i * 5 + j) as f64).cos()).collect();
            let emb = head.embed(&x).unwrap();
            let draw = reparameterize(&emb, &mut rng);
            assert_eq!(draw.reconstruction_error(&emb), 0.0);
        }
    }

    #[test]
    fn invalid_sigma_rejected() {
        assert!(GaussianEmbedding::new(vec![0.0].into(), vec![0.0].into()).is_err());
        assert!(GaussianEmbedding::new(vec![0.0].into(), vec![-1.0].into()).is_err());
        assert!(GaussianEmbedding::new(vec![0.0, 1.0].into(), vec![1.0].into()).is_err());
    }

    #[test]
    fn mc_predict_degenerate_gaussian() {
        let mut rng = SeededRng::new(17);
        let cls = Linear::init(3, 3, 2.0, &mut rng);
        let emb = GaussianEmbedding::new(vec![0.4, -0.3, 1.2].into(), DenseVector::filled(3, 1e-12)).unwrap();
        let det = softmax(&cls.apply(&emb.mu).unwrap());
        for n in [1, 5, 50] {
            let p = mc_predict(&emb, &cls, n, &mut rng).unwrap();
            assert!(p.probs.max_abs_diff(&det).unwrap() < 1e-9);
        }
        let p = mc_predict(&emb, &cls, 1, &mut FixedNoise::zeros()).unwrap();
        assert_eq!(p.probs, det);
        assert_eq!(p.mean_z, emb.mu);
    }

    #[test]
    fn mc_predict_rejects_zero_samples() {
        let emb = GaussianEmbedding::new(vec![0.0, 0.0].into(), vec![1.0, 1.0].into()).unwrap();
        let cls = Linear::zeros(2, 3);
        assert!(mc_predict(&emb, &cls, 0, &mut FixedNoise::zeros()).is_err());
    }

    /// Quadrature oracle on a 2-D Gaussian: E[softmax(W z + b)] integrated with
    /// a midpoint rule over ±8 sigma.
    #[test]
    fn mc_predict_matches_quadrature() {
        let cls = Linear::new(
            DenseMatrix::from_rows(&[vec![1.0, 0.5], vec![-0.8, 1.2], vec![0.0, -1.0]]).unwrap(),
            DenseVector::new(vec![0.1, 0.0, -0.2]),
        )
        .unwrap();
        let emb = GaussianEmbedding::new(vec![0.3, -0.2].into(), vec![0.8, 1.5].into()).unwrap();
        let grid = 400;
        let mut expected = [0.0; 3];
        let mut mass = 0.0;
        for i in 0..grid {
            for j in 0..grid {
                let u = -8.0 + 16.0 * (i as f64 + 0.5) / grid as f64;
                let v = -8.0 + 16.0 * (j as f64 + 0.5) / grid as f64;
                let w = (-0.5 * (u * u + v * v)).exp();
                let z = [emb.mu[0] + emb.sigma[0] * u, emb.mu[1] + emb.sigma[1] * v];
                let p = softmax(&cls.apply(&z).unwrap());
                for c in 0..3 {
                    expected[c] += w * p[c];
                }
                mass += w;
            }
        }
        let mut rng = SeededRng::new(99);
        let got = mc_predict(&emb, &cls, 10_000, &mut rng).unwrap();
        for c in 0..3 {
            let e = expected[c] / mass;
            assert!((got.probs[c] - e).abs() < 0.01, "class {c}: {} vs {e}", got.probs[c]);
        }
    }

    #[test]
    fn mc_spread_shrinks_with_samples() {
        let mut rng = SeededRng::new(4);
        let cls = Linear::init(4, 3, 1.5, &mut rng);
        let emb = GaussianEmbedding::new(rng.standard_normal_vec(4), DenseVector::filled(4, 1.0)).unwrap();
        let spread = |n: usize, rng: &mut SeededRng| {
            let runs: Vec<f64> = (0..200)
                .map(|_| mc_predict(&emb, &cls, n, rng).unwrap().probs[0])
                .collect();
            let m = runs.iter().sum::<f64>() / runs.len() as f64;
            (runs.iter().map(|r| (r - m).powi(2)).sum::<f64>() / runs.len() as f64).sqrt()
        };
        let s1 = spread(1, &mut rng);
        let s100 = spread(100, &mut rng);
        assert!(s100 < s1, "{s100} !< {s1}");
    }

    #[test]
    fn head_gradients_pass_check() {
        for seed in 0..5 {
            let mut rng = SeededRng::new(100 + seed);
            let obj = ClassifierObjective {
                label: format!("gaussian head seed {seed}"),
                unit: random_head(seed, 5, 4),
                readout: Linear::init(8, 3, 1.0, &mut rng),
                input: rng.standard_normal_vec(5),
                target: rng.below(3),
            };
            let report = gradient_check(&obj, 1e-4).unwrap();
            assert!(report.passed(), "{report}");
        }
    }
}
