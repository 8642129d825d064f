//! Dataset manifests.
//!
//! A manifest is a JSON document binding each video to its feature vector,
//! pose directory, dual-encoder embedding, label and optional frame stack.
//! Relative paths are resolved against the manifest's directory.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::tensor::{read_tensor_dims, read_vector};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoRecord {
    pub id: String,
    pub feature_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose_dir: Option<PathBuf>,
    pub vlm_embedding_path: PathBuf,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames_path: Option<PathBuf>,
}

/// The serialized manifest document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub class_names: Vec<String>,
    pub videos: Vec<VideoRecord>,
    #[serde(default)]
    pub splits: BTreeMap<String, Vec<String>>,
}

impl ManifestFile {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        crate::pipeline::write_json(path, self)
    }
}

/// A validated manifest with resolved paths. Immutable once loaded.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    source: Option<PathBuf>,
    class_names: Vec<String>,
    videos: Vec<VideoRecord>,
    splits: BTreeMap<String, Vec<String>>,
    index: HashMap<String, usize>,
    feature_dim: usize,
    vlm_dim: usize,
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    let root = path.parent().unwrap_or(Path::new("."));
    let mut m = DatasetManifest::from_parts(root, file)?;
    m.source = Some(path.to_path_buf());
    Ok(m)
}

impl DatasetManifest {
    /// Validates a manifest document, resolving relative paths against `root`.
    pub fn from_parts(root: &Path, file: ManifestFile) -> Result<Self> {
        let ManifestFile {
            class_names,
            mut videos,
            splits,
        } = file;
        if class_names.is_empty() {
            return Err(invalid!("manifest has no class_names"));
        }
        if videos.is_empty() {
            return Err(invalid!("manifest has no videos"));
        }
        let resolve = |p: &Path| -> PathBuf {
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                root.join(p)
            }
        };

        let mut index = HashMap::with_capacity(videos.len());
        let mut feature_dim: Option<(usize, String)> = None;
        let mut vlm_dim: Option<(usize, String)> = None;
        for (i, v) in videos.iter_mut().enumerate() {
            if index.insert(v.id.clone(), i).is_some() {
                return Err(invalid!("duplicate video id {:?}", v.id));
            }
            if v.label >= class_names.len() {
                return Err(invalid!(
                    "video {:?} has label {} but only {} classes",
                    v.id,
                    v.label,
                    class_names.len()
                ));
            }
            v.feature_path = resolve(&v.feature_path);
            v.vlm_embedding_path = resolve(&v.vlm_embedding_path);
            v.pose_dir = v.pose_dir.as_deref().map(resolve);
            v.frames_path = v.frames_path.as_deref().map(resolve);

            let d = vector_len(&v.feature_path, &v.id)?;
            check_dim(&mut feature_dim, d, &v.id, "feature")?;
            let e = vector_len(&v.vlm_embedding_path, &v.id)?;
            check_dim(&mut vlm_dim, e, &v.id, "vlm embedding")?;

            if let Some(dir) = &v.pose_dir {
                if !dir.is_dir() {
                    return Err(invalid!(
                        "video {:?}: pose_dir {} is not a directory",
                        v.id,
                        dir.display()
                    ));
                }
            }
            if let Some(frames) = &v.frames_path {
                if !frames.is_file() {
                    return Err(invalid!(
                        "video {:?}: frames_path {} does not exist",
                        v.id,
                        frames.display()
                    ));
                }
            }
        }

        for (name, ids) in &splits {
            let mut seen = HashSet::new();
            for id in ids {
                if !index.contains_key(id) {
                    return Err(invalid!("split {name:?} references unknown video {id:?}"));
                }
                if !seen.insert(id) {
                    return Err(invalid!("split {name:?} lists {id:?} twice"));
                }
            }
        }

        Ok(DatasetManifest {
            source: None,
            class_names,
            videos,
            splits,
            index,
            feature_dim: feature_dim.map(|(d, _)| d).unwrap_or(0),
            vlm_dim: vlm_dim.map(|(d, _)| d).unwrap_or(0),
        })
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn videos(&self) -> &[VideoRecord] {
        &self.videos
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn vlm_dim(&self) -> usize {
        self.vlm_dim
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn record(&self, id: &str) -> Option<&VideoRecord> {
        self.index_of(id).map(|i| &self.videos[i])
    }

    pub fn split_names(&self) -> impl Iterator<Item = &str> {
        self.splits.keys().map(String::as_str)
    }

    pub fn split_ids(&self, name: &str) -> Result<&[String]> {
        self.splits
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| invalid!("unknown split {name:?}"))
    }

    /// Manifest row indices of a split, in split order.
    pub fn split_indices(&self, name: &str) -> Result<Vec<usize>> {
        Ok(self
            .split_ids(name)?
            .iter()
            .map(|id| self.index[id.as_str()])
            .collect())
    }

    pub fn labels(&self, rows: &[usize]) -> Vec<usize> {
        rows.iter().map(|&i| self.videos[i].label).collect()
    }

    /// Loads the feature vectors of the given rows into an `rows x D` matrix.
    pub fn load_features(&self, rows: &[usize]) -> Result<Array2<f64>> {
        self.load_rows(rows, self.feature_dim, |v| &v.feature_path)
    }

    pub fn load_vlm_embeddings(&self, rows: &[usize]) -> Result<Array2<f64>> {
        self.load_rows(rows, self.vlm_dim, |v| &v.vlm_embedding_path)
    }

    pub fn all_rows(&self) -> Vec<usize> {
        (0..self.videos.len()).collect()
    }

    fn load_rows(
        &self,
        rows: &[usize],
        dim: usize,
        path_of: impl Fn(&VideoRecord) -> &PathBuf,
    ) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((rows.len(), dim));
        for (r, &i) in rows.iter().enumerate() {
            let v = read_vector(path_of(&self.videos[i]))?;
            if v.len() != dim {
                return Err(invalid!(
                    "video {:?}: vector has {} entries, expected {dim}",
                    self.videos[i].id,
                    v.len()
                ));
            }
            out.row_mut(r).assign(&v);
        }
        Ok(out)
    }
}

fn vector_len(path: &Path, id: &str) -> Result<usize> {
    let dims = read_tensor_dims(path)?;
    match dims.as_slice() {
        [d] | [1, d] => Ok(*d),
        other => Err(invalid!(
            "video {id:?}: {} must hold a vector, got shape {other:?}",
            path.display()
        )),
    }
}

fn check_dim(seen: &mut Option<(usize, String)>, d: usize, id: &str, what: &str) -> Result<()> {
    match seen {
        None => {
            *seen = Some((d, id.to_string()));
            Ok(())
        }
        Some((expected, first)) if *expected != d => Err(invalid!(
            "video {id:?} has {what} dimension {d}, but {first:?} has {expected}"
        )),
        Some(_) => Ok(()),
    }
}
