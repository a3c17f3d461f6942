use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, UalError};
use crate::kv::KvFile;
use crate::losses::{LossTerms, LossWeights};
use crate::pipeline::fusion::FusionStrategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Face,
    Object,
    Scene,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Face, Branch::Object, Branch::Scene];

    pub fn as_str(&self) -> &'static str {
        match self {
            Branch::Face => "face",
            Branch::Object => "object",
            Branch::Scene => "scene",
        }
    }

    pub(crate) fn key(&self) -> u64 {
        match self {
            Branch::Face => 1,
            Branch::Object => 2,
            Branch::Scene => 3,
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Branch {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "face" => Ok(Branch::Face),
            "object" => Ok(Branch::Object),
            "scene" => Ok(Branch::Scene),
            _ => Err(format!("unknown branch `{s}` (face, object, scene)")),
        }
    }
}

/// Parse `all` or a `+`/`,`-separated branch list.
pub fn parse_branches(s: &str) -> Result<Vec<Branch>> {
    if s.trim() == "all" {
        return Ok(Branch::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in s.split(['+', ',']).map(str::trim).filter(|p| !p.is_empty()) {
        let b: Branch = part.parse().map_err(|e: String| UalError::field("branches", e))?;
        if !out.contains(&b) {
            out.push(b);
        }
    }
    if out.is_empty() {
        return Err(UalError::field("branches", "no branch selected"));
    }
    out.sort();
    Ok(out)
}

pub fn branches_to_string(branches: &[Branch]) -> String {
    if branches == Branch::ALL {
        return "all".into();
    }
    branches.iter().map(Branch::as_str).collect::<Vec<_>>().join("+")
}

/// Face-branch ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    Full,
    NoUal,
    NoFiqe,
    NoUalFiqe,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoUal, Ablation::NoFiqe, Ablation::NoUalFiqe];

    pub fn uses_ual(&self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoFiqe)
    }

    pub fn uses_fiqe(&self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoUal)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoUal => "no-ual",
            Ablation::NoFiqe => "no-fiqe",
            Ablation::NoUalFiqe => "no-ual-fiqe",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown ablation `{s}` (full, no-ual, no-fiqe, no-ual-fiqe)"))
    }
}

/// When quality filtering runs (if the ablation enables it at all).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FiqeStage {
    Train,
    Test,
    Both,
}

impl FiqeStage {
    pub fn at_train(&self) -> bool {
        matches!(self, FiqeStage::Train | FiqeStage::Both)
    }

    pub fn at_test(&self) -> bool {
        matches!(self, FiqeStage::Test | FiqeStage::Both)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FiqeStage::Train => "train",
            FiqeStage::Test => "test",
            FiqeStage::Both => "both",
        }
    }
}

impl FromStr for FiqeStage {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(FiqeStage::Train),
            "test" => Ok(FiqeStage::Test),
            "both" => Ok(FiqeStage::Both),
            _ => Err(format!("unknown stage `{s}` (train, test, both)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(format!("unknown optimizer `{s}` (adam, sgd)")),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub latent_dim: usize,
    pub weights: LossWeights,
    pub loss_terms: LossTerms,
    pub delta2: f64,
    pub fiqe_samples: usize,
    pub fiqe_stage: FiqeStage,
    pub mc_samples: usize,
    pub face_optimizer: OptimizerConfig,
    pub object_optimizer: OptimizerConfig,
    pub scene_optimizer: OptimizerConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub branches: Vec<Branch>,
    pub fusion: FusionStrategy,
    /// Initial bias of the log-variance heads.
    pub log_var_init: f64,
    /// Keep the parameters of the epoch with the best validation UAR.
    pub select_best_epoch: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            latent_dim: 512,
            weights: LossWeights::default(),
            loss_terms: LossTerms::ALL,
            delta2: 0.3,
            fiqe_samples: 8,
            fiqe_stage: FiqeStage::Both,
            mc_samples: 25,
            face_optimizer: OptimizerConfig {
                kind: OptimizerKind::Adam,
                lr: 1e-4,
            },
            object_optimizer: OptimizerConfig {
                kind: OptimizerKind::Sgd,
                lr: 1e-4,
            },
            scene_optimizer: OptimizerConfig {
                kind: OptimizerKind::Sgd,
                lr: 1e-4,
            },
            batch_size: 64,
            epochs: 100,
            seed: 0,
            ablation: Ablation::Full,
            branches: Branch::ALL.to_vec(),
            fusion: FusionStrategy::Pwfs,
            log_var_init: -4.0,
            select_best_epoch: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        for (name, v) in [
            ("lambda1", w.lambda1),
            ("lambda2", w.lambda2),
            ("lambda3", w.lambda3),
            ("lambda4", w.lambda4),
            ("delta1", w.delta1),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(UalError::field(name, format!("{v} must be finite and >= 0")));
            }
        }
        if w.lambda1 > 1.0 {
            return Err(UalError::field("lambda1", "must be <= 1"));
        }
        if !(w.beta > 0.0 && w.beta < 1.0) {
            return Err(UalError::field("beta", format!("{} not in (0, 1)", w.beta)));
        }
        if !(self.delta2 > 0.0 && self.delta2 < 1.0) {
            return Err(UalError::field("delta2", format!("{} not in (0, 1)", self.delta2)));
        }
        if self.fiqe_samples < 2 {
            return Err(UalError::field("fiqe_samples", "must be >= 2"));
        }
        if self.mc_samples == 0 {
            return Err(UalError::field("mc_samples", "must be >= 1"));
        }
        if self.latent_dim == 0 {
            return Err(UalError::field("latent_dim", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(UalError::field("batch_size", "must be >= 1"));
        }
        for (name, o) in [
            ("face_lr", self.face_optimizer),
            ("object_lr", self.object_optimizer),
            ("scene_lr", self.scene_optimizer),
        ] {
            if !(o.lr >= 0.0 && o.lr.is_finite()) {
                return Err(UalError::field(name, "must be finite and >= 0"));
            }
        }
        if self.branches.is_empty() {
            return Err(UalError::field("branches", "no branch selected"));
        }
        Ok(())
    }

    /// Weights with disabled loss terms zeroed.
    pub fn effective_weights(&self) -> LossWeights {
        self.weights.masked(self.loss_terms)
    }

    pub fn fiqe_at_train(&self) -> bool {
        self.ablation.uses_fiqe() && self.fiqe_stage.at_train()
    }

    pub fn fiqe_at_test(&self) -> bool {
        self.ablation.uses_fiqe() && self.fiqe_stage.at_test()
    }

    pub fn from_kv(mut kv: KvFile) -> Result<Self> {
        let mut c = TrainingConfig::default();
        kv.take("latent_dim", &mut c.latent_dim)?;
        kv.take("lambda1", &mut c.weights.lambda1)?;
        kv.take("lambda2", &mut c.weights.lambda2)?;
        kv.take("lambda3", &mut c.weights.lambda3)?;
        kv.take("lambda4", &mut c.weights.lambda4)?;
        kv.take("beta", &mut c.weights.beta)?;
        kv.take("delta1", &mut c.weights.delta1)?;
        kv.take("delta2", &mut c.delta2)?;
        kv.take("fiqe_samples", &mut c.fiqe_samples)?;
        kv.take("fiqe_stage", &mut c.fiqe_stage)?;
        kv.take("mc_samples", &mut c.mc_samples)?;
        kv.take("face_optimizer", &mut c.face_optimizer.kind)?;
        kv.take("face_lr", &mut c.face_optimizer.lr)?;
        kv.take("object_optimizer", &mut c.object_optimizer.kind)?;
        kv.take("object_lr", &mut c.object_optimizer.lr)?;
        kv.take("scene_optimizer", &mut c.scene_optimizer.kind)?;
        kv.take("scene_lr", &mut c.scene_optimizer.lr)?;
        kv.take("batch_size", &mut c.batch_size)?;
        kv.take("epochs", &mut c.epochs)?;
        kv.take("seed", &mut c.seed)?;
        kv.take("ablation", &mut c.ablation)?;
        kv.take("fusion", &mut c.fusion)?;
        kv.take("log_var_init", &mut c.log_var_init)?;
        kv.take("select_best_epoch", &mut c.select_best_epoch)?;
        if let Some(t) = kv.take_str("loss_terms") {
            c.loss_terms = LossTerms::parse(&t)?;
        }
        if let Some(b) = kv.take_str("branches") {
            c.branches = parse_branches(&b)?;
        }
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(KvFile::parse(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(KvFile::load(path)?)
    }

    /// Ordered `(key, value)` pairs; `parse(to_kv_text())` restores the config.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let w = &self.weights;
        vec![
            ("latent_dim", self.latent_dim.to_string()),
            ("lambda1", w.lambda1.to_string()),
            ("lambda2", w.lambda2.to_string()),
            ("lambda3", w.lambda3.to_string()),
            ("lambda4", w.lambda4.to_string()),
            ("beta", w.beta.to_string()),
            ("delta1", w.delta1.to_string()),
            ("delta2", self.delta2.to_string()),
            ("fiqe_samples", self.fiqe_samples.to_string()),
            ("fiqe_stage", self.fiqe_stage.as_str().to_string()),
            ("mc_samples", self.mc_samples.to_string()),
            ("face_optimizer", self.face_optimizer.kind.to_string()),
            ("face_lr", self.face_optimizer.lr.to_string()),
            ("object_optimizer", self.object_optimizer.kind.to_string()),
            ("object_lr", self.object_optimizer.lr.to_string()),
            ("scene_optimizer", self.scene_optimizer.kind.to_string()),
            ("scene_lr", self.scene_optimizer.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("ablation", self.ablation.to_string()),
            ("fusion", self.fusion.to_string()),
            ("log_var_init", self.log_var_init.to_string()),
            ("select_best_epoch", self.select_best_epoch.to_string()),
            ("loss_terms", self.loss_terms.to_string()),
            ("branches", branches_to_string(&self.branches)),
        ]
    }

    pub fn to_kv_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
