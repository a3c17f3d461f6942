//! Dense arithmetic, seeded randomness, differentiable units and the
//! finite-difference gradient checker.

pub mod gradcheck;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod units;

pub use gradcheck::{gradient_check, GradCheckReport, Objective};
pub use params::ParameterStore;
pub use rng::{hash_str, FixedNoise, NoiseSource, SeededRng};
pub use tensor::{DenseMatrix, DenseVector};
pub use units::{
    linear_forward, softmax, softmax_cross_entropy, CrossEntropy, DifferentiableUnit, Linear,
    LinearGrad, UnitGradients,
};
