//! The three-branch model and its parameter-store layout.
//!
//! Parameter names are prefixed by branch (`face.`, `object.`, `scene.`), so
//! a store holding a subset of branches is still a valid model.

use crate::data::dataset::DatasetHeader;
use crate::error::{Result, UalError};
use crate::numerics::{hash_str, ParameterStore, SeededRng};
use crate::pipeline::branch::{IndividualBranch, SceneBranch};
use crate::pipeline::config::{Branch, TrainingConfig};

pub(crate) const KEY_INIT: u64 = 0x11;
pub(crate) const KEY_TRAIN: u64 = 0x22;
pub(crate) const KEY_INFER: u64 = 0x33;

/// Purpose tags inside a group's stream key.
pub const PURPOSE_QUALITY: u64 = 1;
pub const PURPOSE_REPARAM: u64 = 2;
pub(crate) const PURPOSE_SHUFFLE: u64 = 3;

/// Noise stream for one individual during inference. `repeat` separates
/// independent repeated inferences of the same data.
pub fn infer_stream(seed: u64, repeat: u64, branch: Branch, group_id: &str, purpose: u64, index: usize) -> SeededRng {
    SeededRng::stream(
        seed,
        &[KEY_INFER, repeat, branch.key(), hash_str(group_id), purpose, index as u64],
    )
}

/// Noise stream for one individual during training.
pub fn train_stream(seed: u64, epoch: usize, branch: Branch, group_id: &str, purpose: u64, index: usize) -> SeededRng {
    SeededRng::stream(
        seed,
        &[KEY_TRAIN, epoch as u64, branch.key(), hash_str(group_id), purpose, index as u64],
    )
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UalModel {
    pub face: Option<IndividualBranch>,
    pub object: Option<IndividualBranch>,
    pub scene: Option<SceneBranch>,
}

impl UalModel {
    /// Fresh parameters for the branches enabled in `cfg`. Each branch has
    /// its own init stream, so enabling a branch never changes another's init.
    pub fn init(header: &DatasetHeader, cfg: &TrainingConfig) -> Self {
        let c = header.num_classes;
        let d = cfg.latent_dim;
        let rng = |b: Branch| SeededRng::stream(cfg.seed, &[KEY_INIT, b.key()]);
        let on = |b: Branch| cfg.branches.contains(&b);
        UalModel {
            face: on(Branch::Face)
                .then(|| IndividualBranch::init(header.face_dim, d, c, cfg.log_var_init, &mut rng(Branch::Face))),
            object: on(Branch::Object)
                .then(|| IndividualBranch::init(header.object_dim, d, c, cfg.log_var_init, &mut rng(Branch::Object))),
            scene: on(Branch::Scene).then(|| SceneBranch::init(header.scene_dim, c, &mut rng(Branch::Scene))),
        }
    }

    pub fn branches(&self) -> Vec<Branch> {
        let mut out = Vec::new();
        if self.face.is_some() {
            out.push(Branch::Face);
        }
        if self.object.is_some() {
            out.push(Branch::Object);
        }
        if self.scene.is_some() {
            out.push(Branch::Scene);
        }
        out
    }

    pub fn branch_store(&self, branch: Branch) -> Result<Option<ParameterStore>> {
        let mut store = ParameterStore::new();
        let prefix = branch.as_str();
        match branch {
            Branch::Face => match &self.face {
                Some(b) => b.to_store(prefix, &mut store)?,
                None => return Ok(None),
            },
            Branch::Object => match &self.object {
                Some(b) => b.to_store(prefix, &mut store)?,
                None => return Ok(None),
            },
            Branch::Scene => match &self.scene {
                Some(b) => b.to_store(prefix, &mut store)?,
                None => return Ok(None),
            },
        }
        Ok(Some(store))
    }

    pub fn to_store(&self) -> Result<ParameterStore> {
        let mut store = ParameterStore::new();
        for b in Branch::ALL {
            if let Some(s) = self.branch_store(b)? {
                store.merge(s);
            }
        }
        Ok(store)
    }

    /// Rebuild from a store; unknown parameter names are an error.
    pub fn from_store(mut store: ParameterStore) -> Result<Self> {
        let has = |s: &ParameterStore, b: Branch| s.names().any(|n| n.starts_with(&format!("{}.", b.as_str())));
        let face = if has(&store, Branch::Face) {
            Some(IndividualBranch::from_store("face", &mut store)?)
        } else {
            None
        };
        let object = if has(&store, Branch::Object) {
            Some(IndividualBranch::from_store("object", &mut store)?)
        } else {
            None
        };
        let scene = if has(&store, Branch::Scene) {
            Some(SceneBranch::from_store("scene", &mut store)?)
        } else {
            None
        };
        store.ensure_consumed()?;
        Ok(UalModel { face, object, scene })
    }

    /// Check that feature dims and class count agree with a dataset header.
    pub fn check_header(&self, h: &DatasetHeader) -> Result<()> {
        let mismatch = |what: &str, expected: usize, actual: usize| {
            if expected == actual {
                Ok(())
            } else {
                Err(UalError::dim(format!("model {what} vs dataset header"), expected, actual))
            }
        };
        if let Some(f) = &self.face {
            mismatch("face input dim", f.in_dim(), h.face_dim)?;
            mismatch("face classes", f.num_classes(), h.num_classes)?;
        }
        if let Some(o) = &self.object {
            mismatch("object input dim", o.in_dim(), h.object_dim)?;
            mismatch("object classes", o.num_classes(), h.num_classes)?;
        }
        if let Some(s) = &self.scene {
            mismatch("scene input dim", s.classifier.in_dim(), h.scene_dim)?;
            mismatch("scene classes", s.classifier.out_dim(), h.num_classes)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_round_trip_and_isolation() {
        let header = DatasetHeader::new(6, 4, 3, 3);
        let cfg = TrainingConfig {
            latent_dim: 5,
            ..TrainingConfig::default()
        };
        let model = UalModel::init(&header, &cfg);
        let back = UalModel::from_store(model.to_store().unwrap()).unwrap();
        assert_eq!(back, model);
        back.check_header(&header).unwrap();

        let face_only = TrainingConfig {
            branches: vec![Branch::Face],
            ..cfg.clone()
        };
        let m = UalModel::init(&header, &face_only);
        assert_eq!(m.face, model.face);
        let store = m.to_store().unwrap();
        assert!(store.names().all(|n| n.starts_with("face.")));
    }

    #[test]
    fn unknown_parameter_rejected() {
        let mut store = ParameterStore::new();
        store.insert("scene.cls.weight", vec![2, 2], vec![0.0; 4]).unwrap();
        store.insert("scene.cls.bias", vec![2], vec![0.0; 2]).unwrap();
        store.insert("extra.thing", vec![1], vec![0.0]).unwrap();
        assert!(UalModel::from_store(store).is_err());
    }
}
