//! Line-delimited group dataset files.
//!
//! Line 1 is a header record; every following line is one group:
//!
//! ```text
//! {"schema":"ual-groups/v1","face_dim":4,"object_dim":3,"scene_dim":2,"num_classes":3,"class_names":["Positive","Neutral","Negative"]}
//! {"id":"g0","label":1,"faces":[[...],[...]],"objects":[],"scene":[...]}
//! ```

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, UalError};
use crate::numerics::DenseVector;

pub const SCHEMA: &str = "ual-groups/v1";

pub fn default_class_names(num_classes: usize) -> Vec<String> {
    if num_classes == 3 {
        ["Positive", "Neutral", "Negative"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    } else {
        (0..num_classes).map(|i| format!("class{i}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub schema: String,
    pub face_dim: usize,
    pub object_dim: usize,
    pub scene_dim: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
}

impl DatasetHeader {
    pub fn new(face_dim: usize, object_dim: usize, scene_dim: usize, num_classes: usize) -> Self {
        DatasetHeader {
            schema: SCHEMA.to_string(),
            face_dim,
            object_dim,
            scene_dim,
            num_classes,
            class_names: default_class_names(num_classes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSample {
    pub id: String,
    pub label: usize,
    pub faces: Vec<DenseVector>,
    pub objects: Vec<DenseVector>,
    pub scene: DenseVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub groups: Vec<GroupSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.label).collect()
    }

    /// Check one group against the header. `line` is only used in messages.
    pub fn validate_group(header: &DatasetHeader, g: &GroupSample, path: &str, line: usize) -> Result<()> {
        let err = |message: String| UalError::Parse {
            path: path.to_string(),
            line,
            message,
        };
        if g.label >= header.num_classes {
            return Err(err(format!(
                "group `{}`: unknown class index {} (num_classes = {})",
                g.id, g.label, header.num_classes
            )));
        }
        if g.faces.is_empty() {
            return Err(err(format!("group `{}`: needs >=1 face", g.id)));
        }
        for (i, f) in g.faces.iter().enumerate() {
            if f.len() != header.face_dim {
                return Err(err(format!(
                    "group `{}`: face {i} has {} dims, header face_dim = {}",
                    g.id,
                    f.len(),
                    header.face_dim
                )));
            }
        }
        for (i, o) in g.objects.iter().enumerate() {
            if o.len() != header.object_dim {
                return Err(err(format!(
                    "group `{}`: object {i} has {} dims, header object_dim = {}",
                    g.id,
                    o.len(),
                    header.object_dim
                )));
            }
        }
        if g.scene.len() != header.scene_dim {
            return Err(err(format!(
                "group `{}`: scene has {} dims, header scene_dim = {}",
                g.id,
                g.scene.len(),
                header.scene_dim
            )));
        }
        let finite = g.faces.iter().chain(&g.objects).all(|v| v.is_finite()) && g.scene.is_finite();
        if !finite {
            return Err(err(format!("group `{}`: non-finite feature value", g.id)));
        }
        Ok(())
    }

    pub fn to_text(&self) -> Result<String> {
        let mut out = serde_json::to_string(&self.header)?;
        out.push('\n');
        for g in &self.groups {
            out.push_str(&serde_json::to_string(g)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn parse(text: &str, path: &str) -> Result<Dataset> {
        let mut lines = text.lines().enumerate();
        let header_line = lines
            .by_ref()
            .find(|(_, l)| !l.trim().is_empty())
            .ok_or_else(|| UalError::Parse {
                path: path.into(),
                line: 1,
                message: "empty dataset file (missing header)".into(),
            })?;
        let header: DatasetHeader =
            serde_json::from_str(header_line.1).map_err(|e| UalError::Parse {
                path: path.into(),
                line: header_line.0 + 1,
                message: format!("bad header: {e}"),
            })?;
        if header.schema != SCHEMA {
            return Err(UalError::Parse {
                path: path.into(),
                line: header_line.0 + 1,
                message: format!("unsupported schema `{}` (expected `{SCHEMA}`)", header.schema),
            });
        }
        if header.num_classes < 2 || header.class_names.len() != header.num_classes {
            return Err(UalError::Parse {
                path: path.into(),
                line: header_line.0 + 1,
                message: format!(
                    "num_classes = {} needs >= 2 classes and a matching class_names list (got {})",
                    header.num_classes,
                    header.class_names.len()
                ),
            });
        }
        let mut groups = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let g: GroupSample = serde_json::from_str(line).map_err(|e| UalError::Parse {
                path: path.into(),
                line: idx + 1,
                message: format!("bad group record: {e}"),
            })?;
            Self::validate_group(&header, &g, path, idx + 1)?;
            groups.push(g);
        }
        Ok(Dataset { header, groups })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_text()?;
        let mut f = std::fs::File::create(path).map_err(|e| UalError::io(path, e))?;
        f.write_all(text.as_bytes()).map_err(|e| UalError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path).map_err(|e| UalError::io(path, e))?;
        Dataset::parse(&text, &path.display().to_string())
    }
}

/// Hex SHA-256 of a file's bytes.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| UalError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
