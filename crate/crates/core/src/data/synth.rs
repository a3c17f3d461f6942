//! Synthetic group datasets with controllable data uncertainty.
//!
//! Features emulate pooled post-ReLU backbone activations: each class has a
//! nonnegative center per branch, individuals add isotropic Gaussian noise,
//! and the result is rectified at zero. Two kinds of noise are injected into
//! the face (and object) lists:
//!
//! * corrupted faces (`corrupt_fraction`) have their noise scale multiplied by
//!   `corrupt_scale`, a stand-in for occlusion and blur;
//! * inconsistent individuals (`inconsistent_fraction`) are drawn around a
//!   different class's center than the group label.

use std::path::Path;

use crate::data::dataset::{Dataset, DatasetHeader, GroupSample};
use crate::error::{Result, UalError};
use crate::kv::KvFile;
use crate::numerics::{DenseVector, NoiseSource, SeededRng};

const KEY_CENTERS: u64 = 0xC3;
const KEY_GROUP: u64 = 0x67;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisSpec {
    pub num_groups: usize,
    pub min_faces: usize,
    pub max_faces: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub face_dim: usize,
    pub object_dim: usize,
    pub scene_dim: usize,
    pub num_classes: usize,
    /// Scale of the class centers.
    pub center_scale: f64,
    /// Within-class standard deviation.
    pub spread: f64,
    pub corrupt_fraction: f64,
    /// Noise multiplier for corrupted faces.
    pub corrupt_scale: f64,
    pub inconsistent_fraction: f64,
    /// Seed for the class centers; share it between train and validation.
    pub center_seed: u64,
    /// Seed for the individual samples.
    pub seed: u64,
    pub id_prefix: String,
}

impl Default for SynthesisSpec {
    fn default() -> Self {
        SynthesisSpec {
            num_groups: 500,
            min_faces: 3,
            max_faces: 8,
            min_objects: 0,
            max_objects: 4,
            face_dim: 64,
            object_dim: 32,
            scene_dim: 32,
            num_classes: 3,
            center_scale: 1.0,
            spread: 1.0,
            corrupt_fraction: 0.3,
            corrupt_scale: 10.0,
            inconsistent_fraction: 0.2,
            center_seed: 1,
            seed: 1,
            id_prefix: "g".into(),
        }
    }
}

/// Ground truth about which individuals were perturbed.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub corrupted_faces: Vec<Vec<bool>>,
    pub inconsistent_faces: Vec<Vec<bool>>,
    pub inconsistent_objects: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub provenance: Provenance,
}

impl SynthesisSpec {
    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(UalError::field(name, format!("{v} not in [0, 1]")))
            }
        };
        frac("corrupt_fraction", self.corrupt_fraction)?;
        frac("inconsistent_fraction", self.inconsistent_fraction)?;
        if !(self.corrupt_scale >= 1.0) {
            return Err(UalError::field("corrupt_scale", "must be >= 1"));
        }
        if !(self.spread >= 0.0) {
            return Err(UalError::field("spread", "must be >= 0"));
        }
        if !(self.center_scale > 0.0) {
            return Err(UalError::field("center_scale", "must be > 0"));
        }
        if self.num_groups == 0 {
            return Err(UalError::field("num_groups", "must be >= 1"));
        }
        if self.min_faces == 0 || self.min_faces > self.max_faces {
            return Err(UalError::field("min_faces", "need 1 <= min_faces <= max_faces"));
        }
        if self.min_objects > self.max_objects {
            return Err(UalError::field("min_objects", "need min_objects <= max_objects"));
        }
        if self.num_classes < 2 {
            return Err(UalError::field("num_classes", "must be >= 2"));
        }
        for (name, d) in [
            ("face_dim", self.face_dim),
            ("object_dim", self.object_dim),
            ("scene_dim", self.scene_dim),
        ] {
            if d == 0 {
                return Err(UalError::field(name, "must be >= 1"));
            }
        }
        Ok(())
    }

    pub fn from_kv(mut kv: KvFile) -> Result<Self> {
        let mut s = SynthesisSpec::default();
        kv.take("num_groups", &mut s.num_groups)?;
        kv.take("min_faces", &mut s.min_faces)?;
        kv.take("max_faces", &mut s.max_faces)?;
        kv.take("min_objects", &mut s.min_objects)?;
        kv.take("max_objects", &mut s.max_objects)?;
        kv.take("face_dim", &mut s.face_dim)?;
        kv.take("object_dim", &mut s.object_dim)?;
        kv.take("scene_dim", &mut s.scene_dim)?;
        kv.take("num_classes", &mut s.num_classes)?;
        kv.take("center_scale", &mut s.center_scale)?;
        kv.take("spread", &mut s.spread)?;
        kv.take("corrupt_fraction", &mut s.corrupt_fraction)?;
        kv.take("corrupt_scale", &mut s.corrupt_scale)?;
        kv.take("inconsistent_fraction", &mut s.inconsistent_fraction)?;
        kv.take("center_seed", &mut s.center_seed)?;
        kv.take("seed", &mut s.seed)?;
        kv.take("id_prefix", &mut s.id_prefix)?;
        kv.finish()?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(KvFile::load(path)?)
    }
}

struct Centers {
    face: Vec<DenseVector>,
    object: Vec<DenseVector>,
    scene: Vec<DenseVector>,
}

fn draw_centers(spec: &SynthesisSpec) -> Centers {
    let mut rng = SeededRng::stream(spec.center_seed, &[KEY_CENTERS]);
    let mut block = |dim: usize| -> Vec<DenseVector> {
        (0..spec.num_classes)
            .map(|_| {
                (0..dim)
                    .map(|_| spec.center_scale * rng.standard_normal().abs())
                    .collect()
            })
            .collect()
    };
    let face = block(spec.face_dim);
    let object = block(spec.object_dim);
    let scene = block(spec.scene_dim);
    Centers { face, object, scene }
}

fn individual(center: &DenseVector, scale: f64, rng: &mut SeededRng) -> DenseVector {
    center
        .iter()
        .map(|c| (c + scale * rng.standard_normal()).max(0.0))
        .collect()
}

fn other_class(label: usize, num_classes: usize, rng: &mut SeededRng) -> usize {
    let k = rng.below(num_classes - 1);
    if k >= label {
        k + 1
    } else {
        k
    }
}

pub fn generate_dataset(spec: &SynthesisSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let centers = draw_centers(spec);
    let mut groups = Vec::with_capacity(spec.num_groups);
    let mut prov = Provenance {
        corrupted_faces: Vec::new(),
        inconsistent_faces: Vec::new(),
        inconsistent_objects: Vec::new(),
    };
    for g in 0..spec.num_groups {
        let mut rng = SeededRng::stream(spec.seed, &[KEY_GROUP, g as u64]);
        let label = rng.below(spec.num_classes);
        let n_faces = spec.min_faces + rng.below(spec.max_faces - spec.min_faces + 1);
        let n_objects = spec.min_objects + rng.below(spec.max_objects - spec.min_objects + 1);

        let mut faces = Vec::with_capacity(n_faces);
        let mut corrupted = Vec::with_capacity(n_faces);
        let mut inconsistent = Vec::with_capacity(n_faces);
        for _ in 0..n_faces {
            let off = rng.bernoulli(spec.inconsistent_fraction);
            let class = if off { other_class(label, spec.num_classes, &mut rng) } else { label };
            let bad = rng.bernoulli(spec.corrupt_fraction);
            let scale = if bad { spec.spread * spec.corrupt_scale } else { spec.spread };
            faces.push(individual(&centers.face[class], scale, &mut rng));
            corrupted.push(bad);
            inconsistent.push(off);
        }

        let mut objects = Vec::with_capacity(n_objects);
        let mut obj_inconsistent = Vec::with_capacity(n_objects);
        for _ in 0..n_objects {
            let off = rng.bernoulli(spec.inconsistent_fraction);
            let class = if off { other_class(label, spec.num_classes, &mut rng) } else { label };
            objects.push(individual(&centers.object[class], spec.spread, &mut rng));
            obj_inconsistent.push(off);
        }

        let scene = individual(&centers.scene[label], spec.spread, &mut rng);
        groups.push(GroupSample {
            id: format!("{}{:05}", spec.id_prefix, g),
            label,
            faces,
            objects,
            scene,
        });
        prov.corrupted_faces.push(corrupted);
        prov.inconsistent_faces.push(inconsistent);
        prov.inconsistent_objects.push(obj_inconsistent);
    }
    Ok(SyntheticDataset {
        dataset: Dataset {
            header: DatasetHeader::new(spec.face_dim, spec.object_dim, spec.scene_dim, spec.num_classes),
            groups,
        },
        provenance: prov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthesisSpec {
        SynthesisSpec {
            num_groups: 40,
            face_dim: 6,
            object_dim: 4,
            scene_dim: 3,
            ..SynthesisSpec::default()
        }
    }

    #[test]
    fn noiseless_individuals_equal_centers() {
        let spec = SynthesisSpec {
            spread: 0.0,
            corrupt_fraction: 0.0,
            inconsistent_fraction: 0.0,
            ..small()
        };
        let ds = generate_dataset(&spec).unwrap().dataset;
        let centers = draw_centers(&spec);
        for g in &ds.groups {
            for f in &g.faces {
                assert_eq!(f, &centers.face[g.label]);
            }
            for o in &g.objects {
                assert_eq!(o, &centers.object[g.label]);
            }
            assert_eq!(g.scene, centers.scene[g.label]);
        }
    }

    #[test]
    fn deterministic_text() {
        let a = generate_dataset(&small()).unwrap().dataset.to_text().unwrap();
        let b = generate_dataset(&small()).unwrap().dataset.to_text().unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&SynthesisSpec { seed: 2, ..small() }).unwrap();
        assert_ne!(a, c.dataset.to_text().unwrap());
    }

    #[test]
    fn shared_center_seed_shares_centers() {
        let a = draw_centers(&SynthesisSpec { seed: 1, ..small() });
        let b = draw_centers(&SynthesisSpec { seed: 2, ..small() });
        assert_eq!(a.face, b.face);
    }

    #[test]
    fn group_sizes_in_range() {
        let ds = generate_dataset(&small()).unwrap().dataset;
        for g in &ds.groups {
            assert!((3..=8).contains(&g.faces.len()));
            assert!(g.objects.len() <= 4);
            assert!(g.faces.iter().flat_map(|f| f.iter()).all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn invalid_specs_name_field() {
        for (spec, field) in [
            (SynthesisSpec { corrupt_fraction: 1.5, ..small() }, "corrupt_fraction"),
            (SynthesisSpec { inconsistent_fraction: -0.1, ..small() }, "inconsistent_fraction"),
            (SynthesisSpec { corrupt_scale: 0.5, ..small() }, "corrupt_scale"),
            (SynthesisSpec { min_faces: 9, ..small() }, "min_faces"),
        ] {
            let err = generate_dataset(&spec).unwrap_err().to_string();
            assert!(err.contains(field), "{err}");
        }
    }

    #[test]
    fn kv_spec_rejects_unknown_key() {
        let kv = KvFile::parse("num_groups = 3\nbogus = 1").unwrap();
        assert!(SynthesisSpec::from_kv(kv).unwrap_err().to_string().contains("bogus"));
    }
}
