//! Differentiable building blocks with hand-written backward passes.

use crate::error::{Result, UalError};
use crate::numerics::{DenseMatrix, DenseVector, SeededRng, NoiseSource};

/// Gradients returned by [`DifferentiableUnit::backward`]; `params` follows
/// the order of [`DifferentiableUnit::parameters`].
#[derive(Debug, Clone)]
pub struct UnitGradients {
    pub input: DenseVector,
    pub params: Vec<Vec<f64>>,
}

/// A vector-to-vector map with explicit forward tape and backward pass.
pub trait DifferentiableUnit: Sized {
    type Tape;

    fn forward(&self, input: &[f64]) -> Result<(DenseVector, Self::Tape)>;

    fn backward(&self, tape: &Self::Tape, grad_output: &[f64]) -> Result<UnitGradients>;

    /// Named flat copies of every trainable array.
    fn parameters(&self) -> Vec<(String, Vec<f64>)>;

    /// Rebuild the unit with replacement parameter values (same order and sizes).
    fn with_parameters(&self, values: &[Vec<f64>]) -> Result<Self>;
}

/// Affine map `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: DenseMatrix,
    pub bias: DenseVector,
}

#[derive(Debug, Clone)]
pub struct LinearTape {
    input: DenseVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub weight: DenseMatrix,
    pub bias: DenseVector,
}

impl LinearGrad {
    pub fn zeros_like(layer: &Linear) -> Self {
        LinearGrad {
            weight: DenseMatrix::zeros(layer.out_dim(), layer.in_dim()),
            bias: DenseVector::zeros(layer.out_dim()),
        }
    }

    /// Accumulate the gradient contribution of one `(input, d_output)` pair.
    pub fn accumulate(&mut self, input: &[f64], d_output: &[f64]) -> Result<()> {
        self.weight.add_outer(1.0, d_output, input)?;
        for (b, d) in self.bias.iter_mut().zip(d_output) {
            *b += d;
        }
        Ok(())
    }

    pub fn add_scaled(&mut self, factor: f64, other: &LinearGrad) {
        for (a, b) in self.weight.as_mut_slice().iter_mut().zip(other.weight.as_slice()) {
            *a += factor * b;
        }
        for (a, b) in self.bias.iter_mut().zip(other.bias.iter()) {
            *a += factor * b;
        }
    }

    pub fn tensors(&self) -> [&[f64]; 2] {
        [self.weight.as_slice(), self.bias.as_slice()]
    }
}

impl Linear {
    pub fn new(weight: DenseMatrix, bias: DenseVector) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(UalError::dim("linear bias", weight.rows(), bias.len()));
        }
        Ok(Linear { weight, bias })
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            weight: DenseMatrix::zeros(out_dim, in_dim),
            bias: DenseVector::zeros(out_dim),
        }
    }

    /// Gaussian init with standard deviation `gain / sqrt(in_dim)`; zero bias.
    pub fn init(in_dim: usize, out_dim: usize, gain: f64, rng: &mut SeededRng) -> Self {
        let std = gain / (in_dim.max(1) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| std * rng.standard_normal())
            .collect();
        Linear {
            weight: DenseMatrix::from_vec(out_dim, in_dim, data).expect("sized storage"),
            bias: DenseVector::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn apply(&self, x: &[f64]) -> Result<DenseVector> {
        linear_forward(x, &self.weight, &self.bias)
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 2] {
        [self.weight.as_mut_slice(), &mut self.bias]
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.is_finite()
    }
}

/// `y = W x + b`.
pub fn linear_forward(x: &[f64], weight: &DenseMatrix, bias: &[f64]) -> Result<DenseVector> {
    if bias.len() != weight.rows() {
        return Err(UalError::dim("linear bias", weight.rows(), bias.len()));
    }
    let mut y = weight.matvec(x)?;
    for (v, b) in y.iter_mut().zip(bias) {
        *v += b;
    }
    Ok(y)
}

impl DifferentiableUnit for Linear {
    type Tape = LinearTape;

    fn forward(&self, input: &[f64]) -> Result<(DenseVector, LinearTape)> {
        let y = self.apply(input)?;
        Ok((
            y,
            LinearTape {
                input: DenseVector::new(input.to_vec()),
            },
        ))
    }

    fn backward(&self, tape: &LinearTape, grad_output: &[f64]) -> Result<UnitGradients> {
        let mut grad = LinearGrad::zeros_like(self);
        grad.accumulate(&tape.input, grad_output)?;
        let input = self.weight.matvec_transposed(grad_output)?;
        Ok(UnitGradients {
            input,
            params: vec![grad.weight.into_vec(), grad.bias.into_vec()],
        })
    }

    fn parameters(&self) -> Vec<(String, Vec<f64>)> {
        vec![
            ("weight".into(), self.weight.as_slice().to_vec()),
            ("bias".into(), self.bias.to_vec()),
        ]
    }

    fn with_parameters(&self, values: &[Vec<f64>]) -> Result<Self> {
        if values.len() != 2 {
            return Err(UalError::dim("linear parameter count", 2, values.len()));
        }
        Linear::new(
            DenseMatrix::from_vec(self.out_dim(), self.in_dim(), values[0].clone())?,
            DenseVector::new(values[1].clone()),
        )
    }
}

/// Numerically stable softmax (max-subtraction).
pub fn softmax(logits: &[f64]) -> DenseVector {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[derive(Debug, Clone)]
pub struct CrossEntropy {
    pub loss: f64,
    pub probs: DenseVector,
}

impl CrossEntropy {
    /// d loss / d logits = p − onehot(label).
    pub fn grad_logits(&self, label: usize) -> DenseVector {
        let mut g = self.probs.clone();
        g[label] -= 1.0;
        g
    }
}

/// Softmax cross-entropy of `logits` against `label`, computed through
/// log-sum-exp so large logits neither overflow nor lose the tail.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<CrossEntropy> {
    if logits.len() < 2 {
        return Err(UalError::InvalidArgument(format!(
            "softmax cross-entropy needs at least 2 classes, got {}",
            logits.len()
        )));
    }
    if label >= logits.len() {
        return Err(UalError::LabelOutOfRange {
            label,
            num_classes: logits.len(),
        });
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    Ok(CrossEntropy {
        loss: lse - logits[label],
        probs: softmax(logits),
    })
}
