//! The partitioned concept vocabulary shared by training, explanation and
//! serving: motion concepts first, then objects, then scenes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ingest::pose::PoseSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConceptKind {
    Motion,
    Object,
    Scene,
}

impl std::fmt::Display for ConceptKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConceptKind::Motion => "motion",
            ConceptKind::Object => "object",
            ConceptKind::Scene => "scene",
        })
    }
}

impl std::str::FromStr for ConceptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "motion" => Ok(ConceptKind::Motion),
            "object" => Ok(ConceptKind::Object),
            "scene" => Ok(ConceptKind::Scene),
            other => Err(Error::Config(format!("unknown concept kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionConceptInfo {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub medoid: Option<PoseSequence>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConceptSpace {
    pub motion: Vec<MotionConceptInfo>,
    pub object: Vec<String>,
    pub scene: Vec<String>,
}

impl ConceptSpace {
    pub fn len(&self) -> usize {
        self.motion.len() + self.object.len() + self.scene.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(M_m, M_o, M_s)`.
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.motion.len(), self.object.len(), self.scene.len())
    }

    pub fn kind_of(&self, index: usize) -> Option<ConceptKind> {
        let (m, o, s) = self.counts();
        match index {
            i if i < m => Some(ConceptKind::Motion),
            i if i < m + o => Some(ConceptKind::Object),
            i if i < m + o + s => Some(ConceptKind::Scene),
            _ => None,
        }
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        let (m, o, _) = self.counts();
        match self.kind_of(index)? {
            ConceptKind::Motion => Some(&self.motion[index].name),
            ConceptKind::Object => Some(&self.object[index - m]),
            ConceptKind::Scene => Some(&self.scene[index - m - o]),
        }
    }

    pub fn medoid(&self, index: usize) -> Option<&PoseSequence> {
        self.motion.get(index).and_then(|c| c.medoid.as_ref())
    }

    /// Names in global index order.
    pub fn names(&self) -> Vec<String> {
        (0..self.len())
            .map(|i| self.name(i).expect("index in range").to_string())
            .collect()
    }

    /// Global index range of a kind.
    pub fn range(&self, kind: ConceptKind) -> std::ops::Range<usize> {
        let (m, o, s) = self.counts();
        match kind {
            ConceptKind::Motion => 0..m,
            ConceptKind::Object => m..m + o,
            ConceptKind::Scene => m + o..m + o + s,
        }
    }
}

/// Sidecar describing the columns of a concept label tensor.
///
/// For a label tensor `foo.dtf` the sidecar lives at `foo.concepts.json`.
/// Rows of the tensor follow `video_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptLabelsMeta {
    pub kind: ConceptKind,
    pub names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub medoids: Option<Vec<PoseSequence>>,
    pub video_ids: Vec<String>,
}

pub fn sidecar_path(labels_path: &Path) -> PathBuf {
    labels_path.with_extension("concepts.json")
}

impl ConceptLabelsMeta {
    pub fn read_for(labels_path: &Path) -> Result<Self> {
        let path = sidecar_path(labels_path);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: ConceptLabelsMeta =
            serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        if let Some(m) = &meta.medoids {
            if m.len() != meta.names.len() {
                return Err(invalid!("{}: medoid count differs from names", path.display()));
            }
        }
        Ok(meta)
    }

    pub fn write_for(&self, labels_path: &Path) -> Result<()> {
        let path = sidecar_path(labels_path);
        crate::pipeline::write_json(&path, self)
    }
}
