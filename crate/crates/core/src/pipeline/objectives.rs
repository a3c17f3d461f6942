//! Loss terms wrapped as gradient-check objectives, plus the randomized
//! suite run by `ual gradcheck`.

use std::fmt;

use crate::embedding::GaussianHead;
use crate::error::{Result, UalError};
use crate::losses::LossWeights;
use crate::numerics::gradcheck::{ClassifierObjective, ScaledBackward};
use crate::numerics::{gradient_check, DenseVector, GradCheckReport, Linear, NoiseSource, Objective, SeededRng};
use crate::pipeline::branch::{
    face_group_step, object_group_step, scene_step, FaceObjectiveScales, IndividualBranch,
    ObjectObjectiveScales, SceneBranch,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceTerm {
    Cls,
    Kl,
    Rank,
    Rec,
    Total,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectTerm {
    Cls,
    Kl,
    Total,
}

impl fmt::Display for FaceTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FaceTerm::Cls => "face.cls",
            FaceTerm::Kl => "face.kl",
            FaceTerm::Rank => "face.rank",
            FaceTerm::Rec => "face.rec",
            FaceTerm::Total => "face.total",
        })
    }
}

impl fmt::Display for ObjectTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectTerm::Cls => "object.cls",
            ObjectTerm::Kl => "object.kl",
            ObjectTerm::Total => "object.total",
        })
    }
}

fn face_scales(term: FaceTerm, w: &LossWeights) -> FaceObjectiveScales {
    let only = |cls, kl, rank, rec| FaceObjectiveScales { cls, kl, rank, rec };
    match term {
        FaceTerm::Cls => only(1.0, 0.0, 0.0, 0.0),
        FaceTerm::Kl => only(0.0, 1.0, 0.0, 0.0),
        FaceTerm::Rank => only(0.0, 0.0, 1.0, 0.0),
        FaceTerm::Rec => only(0.0, 0.0, 0.0, 1.0),
        FaceTerm::Total => FaceObjectiveScales::from_weights(w),
    }
}

fn object_scales(term: ObjectTerm, w: &LossWeights) -> ObjectObjectiveScales {
    match term {
        ObjectTerm::Cls => ObjectObjectiveScales {
            kl: 0.0,
            ..ObjectObjectiveScales::from_weights(w)
        },
        ObjectTerm::Kl => ObjectObjectiveScales {
            cls_mu: 0.0,
            cls_z: 0.0,
            kl: 1.0,
        },
        ObjectTerm::Total => ObjectObjectiveScales::from_weights(w),
    }
}

fn with_tensors(branch: &IndividualBranch, values: &[Vec<f64>]) -> Result<IndividualBranch> {
    let mut b = branch.clone();
    let slots = b.tensors_mut();
    if slots.len() != values.len() {
        return Err(UalError::dim("branch tensors", slots.len(), values.len()));
    }
    for (slot, v) in slots.into_iter().zip(values) {
        if slot.len() != v.len() {
            return Err(UalError::dim("branch tensor", slot.len(), v.len()));
        }
        slot.copy_from_slice(v);
    }
    Ok(b)
}

fn named(prefix: &str, branch: &IndividualBranch) -> Vec<(String, Vec<f64>)> {
    IndividualBranch::tensor_names(prefix)
        .into_iter()
        .zip(branch.tensors())
        .map(|(n, t)| (n, t.to_vec()))
        .collect()
}

/// One face loss term of one group, with fixed noise.
pub struct FaceLossObjective {
    pub branch: IndividualBranch,
    pub faces: Vec<DenseVector>,
    pub eps: Vec<DenseVector>,
    pub label: usize,
    pub weights: LossWeights,
    pub term: FaceTerm,
    pub seed: u64,
}

impl FaceLossObjective {
    fn run(&self, params: &[Vec<f64>]) -> Result<crate::pipeline::branch::BranchStep> {
        let b = with_tensors(&self.branch, params)?;
        let rows: Vec<&[f64]> = self.faces.iter().map(|f| f.as_slice()).collect();
        face_group_step(&b, &rows, &self.eps, self.label, &self.weights, face_scales(self.term, &self.weights), true)
    }
}

impl Objective for FaceLossObjective {
    fn name(&self) -> String {
        format!("{} seed {}", self.term, self.seed)
    }

    fn parameters(&self) -> Vec<(String, Vec<f64>)> {
        named("face", &self.branch)
    }

    fn evaluate(&self, params: &[Vec<f64>]) -> Result<f64> {
        Ok(self.run(params)?.objective)
    }

    fn gradient(&self, params: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.run(params)?.grad.tensors().into_iter().map(<[f64]>::to_vec).collect())
    }
}

/// One object loss term summed over a group's objects, with fixed noise.
pub struct ObjectLossObjective {
    pub branch: IndividualBranch,
    pub objects: Vec<DenseVector>,
    pub eps: Vec<DenseVector>,
    pub label: usize,
    pub weights: LossWeights,
    pub term: ObjectTerm,
    pub seed: u64,
}

impl ObjectLossObjective {
    fn run(&self, params: &[Vec<f64>]) -> Result<crate::pipeline::branch::BranchStep> {
        let b = with_tensors(&self.branch, params)?;
        let rows: Vec<&[f64]> = self.objects.iter().map(|f| f.as_slice()).collect();
        object_group_step(&b, &rows, &self.eps, self.label, object_scales(self.term, &self.weights), true)
    }
}

impl Objective for ObjectLossObjective {
    fn name(&self) -> String {
        format!("{} seed {}", self.term, self.seed)
    }

    fn parameters(&self) -> Vec<(String, Vec<f64>)> {
        named("object", &self.branch)
    }

    fn evaluate(&self, params: &[Vec<f64>]) -> Result<f64> {
        Ok(self.run(params)?.objective)
    }

    fn gradient(&self, params: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.run(params)?.grad.tensors().into_iter().map(<[f64]>::to_vec).collect())
    }
}

pub struct SceneLossObjective {
    pub branch: SceneBranch,
    pub scene: DenseVector,
    pub label: usize,
    pub seed: u64,
}

impl Objective for SceneLossObjective {
    fn name(&self) -> String {
        format!("scene.cls seed {}", self.seed)
    }

    fn parameters(&self) -> Vec<(String, Vec<f64>)> {
        SceneBranch::tensor_names("scene")
            .into_iter()
            .zip(self.branch.tensors())
            .map(|(n, t)| (n, t.to_vec()))
            .collect()
    }

    fn evaluate(&self, params: &[Vec<f64>]) -> Result<f64> {
        let b = SceneBranch {
            classifier: self.branch.classifier.with_params(params)?,
        };
        Ok(scene_step(&b, &self.scene, self.label)?.0)
    }

    fn gradient(&self, params: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let b = SceneBranch {
            classifier: self.branch.classifier.with_params(params)?,
        };
        let (_, g) = scene_step(&b, &self.scene, self.label)?;
        Ok(g.tensors().iter().map(|t| t.to_vec()).collect())
    }
}

trait WithParams: Sized {
    fn with_params(&self, values: &[Vec<f64>]) -> Result<Self>;
}

impl WithParams for Linear {
    fn with_params(&self, values: &[Vec<f64>]) -> Result<Self> {
        crate::numerics::DifferentiableUnit::with_parameters(self, values)
    }
}

const IN_DIM: usize = 6;
const LATENT: usize = 5;
const CLASSES: usize = 3;

/// Random branch with a spread of log-variances so scores differ.
fn random_branch(rng: &mut SeededRng) -> IndividualBranch {
    let mut b = IndividualBranch::init(IN_DIM, LATENT, CLASSES, -1.0, rng);
    for v in b.head.log_var.weight.as_mut_slice() {
        *v *= 3.0;
    }
    for v in b.classifier.bias.iter_mut() {
        *v = 0.5 * rng.standard_normal();
    }
    b
}

pub fn random_face_objective(seed: u64, term: FaceTerm) -> FaceLossObjective {
    let mut rng = SeededRng::stream(seed, &[0xFACE]);
    let branch = random_branch(&mut rng);
    let k = 3 + rng.below(4);
    let faces = (0..k).map(|_| rng.standard_normal_vec(IN_DIM)).collect();
    let eps = (0..k).map(|_| rng.standard_normal_vec(LATENT)).collect();
    FaceLossObjective {
        branch,
        faces,
        eps,
        label: rng.below(CLASSES),
        // A wide margin keeps the rank hinge active.
        weights: LossWeights {
            delta1: 2.0,
            ..LossWeights::default()
        },
        term,
        seed,
    }
}

pub fn random_object_objective(seed: u64, term: ObjectTerm) -> ObjectLossObjective {
    let mut rng = SeededRng::stream(seed, &[0x0B]);
    let branch = random_branch(&mut rng);
    let k = 1 + rng.below(3);
    let objects = (0..k).map(|_| rng.standard_normal_vec(IN_DIM)).collect();
    let eps = (0..k).map(|_| rng.standard_normal_vec(LATENT)).collect();
    ObjectLossObjective {
        branch,
        objects,
        eps,
        label: rng.below(CLASSES),
        weights: LossWeights::default(),
        term,
        seed,
    }
}

pub fn random_scene_objective(seed: u64) -> SceneLossObjective {
    let mut rng = SeededRng::stream(seed, &[0x5C]);
    SceneLossObjective {
        branch: SceneBranch::init(IN_DIM, CLASSES, &mut rng),
        scene: rng.standard_normal_vec(IN_DIM),
        label: rng.below(CLASSES),
        seed,
    }
}

pub fn random_head_objective(seed: u64) -> ClassifierObjective<GaussianHead> {
    let mut rng = SeededRng::stream(seed, &[0x4EAD]);
    let mut unit = GaussianHead::init(IN_DIM, LATENT, -0.5, &mut rng);
    for v in unit.mu.bias.iter_mut() {
        *v = 0.1 * rng.standard_normal();
    }
    ClassifierObjective {
        label: format!("unit.gaussian_head seed {seed}"),
        unit,
        readout: Linear::init(2 * LATENT, CLASSES, 1.0, &mut rng),
        input: rng.standard_normal_vec(IN_DIM),
        target: rng.below(CLASSES),
    }
}

pub fn random_linear_objective(seed: u64) -> ClassifierObjective<Linear> {
    let mut rng = SeededRng::stream(seed, &[0x11EA]);
    let mut unit = Linear::init(IN_DIM, LATENT, 1.0, &mut rng);
    for v in unit.bias.iter_mut() {
        *v = 0.1 * rng.standard_normal();
    }
    ClassifierObjective {
        label: format!("unit.linear seed {seed}"),
        unit,
        readout: Linear::init(LATENT, CLASSES, 1.0, &mut rng),
        input: rng.standard_normal_vec(IN_DIM),
        target: rng.below(CLASSES),
    }
}

/// Every unit and loss term over `seeds` random instantiations.
pub fn standard_objectives(seeds: std::ops::Range<u64>) -> Vec<Box<dyn Objective + Send + Sync>> {
    let mut out: Vec<Box<dyn Objective + Send + Sync>> = Vec::new();
    for seed in seeds {
        out.push(Box::new(random_linear_objective(seed)));
        out.push(Box::new(random_head_objective(seed)));
        for t in [FaceTerm::Cls, FaceTerm::Kl, FaceTerm::Rank, FaceTerm::Rec, FaceTerm::Total] {
            out.push(Box::new(random_face_objective(seed, t)));
        }
        for t in [ObjectTerm::Cls, ObjectTerm::Kl, ObjectTerm::Total] {
            out.push(Box::new(random_object_objective(seed, t)));
        }
        out.push(Box::new(random_scene_objective(seed)));
    }
    out
}

/// The linear unit with its backward pass doubled; must fail the check.
pub fn corrupted_objective(seed: u64) -> ClassifierObjective<ScaledBackward<Linear>> {
    let base = random_linear_objective(seed);
    ClassifierObjective {
        label: format!("unit.linear (backward x2) seed {seed}"),
        unit: ScaledBackward {
            inner: base.unit,
            factor: 2.0,
        },
        readout: base.readout,
        input: base.input,
        target: base.target,
    }
}

pub fn run_standard_suite(seeds: std::ops::Range<u64>, tolerance: f64) -> Result<Vec<GradCheckReport>> {
    use rayon::prelude::*;
    standard_objectives(seeds)
        .par_iter()
        .map(|o| gradient_check(o.as_ref(), tolerance))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_term_passes_on_five_seeds() {
        for r in run_standard_suite(0..5, 1e-4).unwrap() {
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn rank_term_is_active_on_random_instances() {
        for seed in 0..5 {
            let obj = random_face_objective(seed, FaceTerm::Rank);
            let p: Vec<Vec<f64>> = obj.parameters().into_iter().map(|(_, v)| v).collect();
            assert!(obj.evaluate(&p).unwrap() > 0.0, "seed {seed}");
            let g = obj.gradient(&p).unwrap();
            assert!(g[2].iter().any(|v| v.abs() > 1e-6), "seed {seed}");
        }
    }

    #[test]
    fn corrupted_backward_is_caught() {
        let r = gradient_check(&corrupted_objective(0), 1e-4).unwrap();
        assert!(!r.passed());
    }
}
