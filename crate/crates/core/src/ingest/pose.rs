//! 2-D pose sequences for a single key clip.
//!
//! On disk a pose sequence is a DTF1 tensor of shape `L x J x 3` holding
//! `(x, y, confidence)` per joint and frame, stored as `clip_<s>.dtf` inside a
//! video's pose directory (`s` is the 1-based key clip index).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Array3, ArrayView2};
use serde::{Deserialize, Serialize};

use super::tensor::{read_tensor, write_tensor, Tensor};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "PoseJson", try_from = "PoseJson")]
pub struct PoseSequence {
    /// `L x J x 2` pixel coordinates.
    pub coords: Array3<f64>,
    /// `L x J` joint confidences in `[0, 1]`.
    pub conf: Array2<f64>,
    pub video_id: String,
    /// 1-based key clip index.
    pub clip_index: usize,
}

impl PoseSequence {
    pub fn new(
        coords: Array3<f64>,
        conf: Array2<f64>,
        video_id: impl Into<String>,
        clip_index: usize,
    ) -> Result<Self> {
        let video_id = video_id.into();
        let (l, j, two) = coords.dim();
        if two != 2 {
            return Err(invalid!("pose coords must be L x J x 2, got last dim {two}"));
        }
        if conf.dim() != (l, j) {
            return Err(invalid!(
                "pose conf shape {:?} does not match coords {l}x{j}",
                conf.dim()
            ));
        }
        if l == 0 || j == 0 {
            return Err(invalid!("pose sequence for {video_id} is empty"));
        }
        if coords.iter().any(|v| !v.is_finite()) {
            return Err(invalid!("non-finite coordinate in {video_id} clip {clip_index}"));
        }
        if conf.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(invalid!("confidence outside [0,1] in {video_id} clip {clip_index}"));
        }
        Ok(PoseSequence {
            coords,
            conf,
            video_id,
            clip_index,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.coords.dim().0
    }

    pub fn num_joints(&self) -> usize {
        self.coords.dim().1
    }

    pub fn mean_confidence(&self) -> f64 {
        self.conf.mean().unwrap_or(0.0)
    }

    /// Row-major `(frame, joint, xy)` flattening, length `L * J * 2`.
    pub fn flatten(&self) -> Vec<f64> {
        self.coords.iter().copied().collect()
    }

    /// Same sequence played backward.
    pub fn reversed(&self) -> PoseSequence {
        PoseSequence {
            coords: self.coords.slice(s![..;-1, .., ..]).to_owned(),
            conf: self.conf.slice(s![..;-1, ..]).to_owned(),
            video_id: self.video_id.clone(),
            clip_index: self.clip_index,
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        let (l, j, _) = self.coords.dim();
        let mut data = Vec::with_capacity(l * j * 3);
        for f in 0..l {
            for k in 0..j {
                data.push(self.coords[[f, k, 0]] as f32);
                data.push(self.coords[[f, k, 1]] as f32);
                data.push(self.conf[[f, k]] as f32);
            }
        }
        Tensor::new(vec![l, j, 3], data).expect("shape is consistent")
    }

    pub fn from_tensor(t: &Tensor, video_id: &str, clip_index: usize) -> Result<Self> {
        let a = t.to_array3()?;
        let (l, j, c) = a.dim();
        if c != 3 {
            return Err(invalid!(
                "pose tensor for {video_id} clip {clip_index} must be L x J x 3, got {:?}",
                t.dims()
            ));
        }
        let coords = a.slice(s![.., .., 0..2]).to_owned();
        let conf = a.slice(s![.., .., 2]).to_owned();
        debug_assert_eq!(conf.dim(), (l, j));
        PoseSequence::new(coords, conf, video_id, clip_index)
    }
}

/// Rebuilds `L x J x 2` coordinates from a flattened vector.
pub fn unflatten(flat: &[f64], frames: usize, joints: usize) -> Result<Array3<f64>> {
    Array3::from_shape_vec((frames, joints, 2), flat.to_vec())
        .map_err(|_| invalid!("flat length {} is not {frames}x{joints}x2", flat.len()))
}

/// Diagonal of the axis-aligned box around one frame's joints.
pub fn bbox_diagonal(frame: ArrayView2<f64>) -> f64 {
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for joint in frame.rows() {
        for a in 0..2 {
            min[a] = min[a].min(joint[a]);
            max[a] = max[a].max(joint[a]);
        }
    }
    ((max[0] - min[0]).powi(2) + (max[1] - min[1]).powi(2)).sqrt()
}

pub fn pose_file_name(clip_index: usize) -> String {
    format!("clip_{clip_index}.dtf")
}

fn parse_clip_index(name: &str) -> Option<usize> {
    name.strip_prefix("clip_")?.strip_suffix(".dtf")?.parse().ok()
}

/// Lists `(clip_index, path)` for the pose files in a directory, ordered by
/// clip index. Files not named `clip_<s>.dtf` are ignored.
pub fn list_pose_files(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(s) = name.to_str().and_then(parse_clip_index) {
            out.push((s, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_pose_file(path: &Path, video_id: &str, clip_index: usize) -> Result<PoseSequence> {
    PoseSequence::from_tensor(&read_tensor(path)?, video_id, clip_index)
}

pub fn write_pose_file(dir: &Path, seq: &PoseSequence) -> Result<PathBuf> {
    let path = dir.join(pose_file_name(seq.clip_index));
    write_tensor(&path, &seq.to_tensor())?;
    Ok(path)
}

/// JSON shape used for medoid payloads: per-frame lists of `[x, y]` pairs.
#[derive(Serialize, Deserialize)]
struct PoseJson {
    video_id: String,
    clip_index: usize,
    keypoints: Vec<Vec<[f64; 2]>>,
    confidence: Vec<Vec<f64>>,
}

impl From<PoseSequence> for PoseJson {
    fn from(p: PoseSequence) -> Self {
        let (l, j, _) = p.coords.dim();
        PoseJson {
            keypoints: (0..l)
                .map(|f| (0..j).map(|k| [p.coords[[f, k, 0]], p.coords[[f, k, 1]]]).collect())
                .collect(),
            confidence: p.conf.rows().into_iter().map(|r| r.to_vec()).collect(),
            video_id: p.video_id,
            clip_index: p.clip_index,
        }
    }
}

impl TryFrom<PoseJson> for PoseSequence {
    type Error = Error;

    fn try_from(p: PoseJson) -> Result<Self> {
        let l = p.keypoints.len();
        let j = p.keypoints.first().map_or(0, Vec::len);
        if p.keypoints.iter().any(|f| f.len() != j)
            || p.confidence.len() != l
            || p.confidence.iter().any(|f| f.len() != j)
        {
            return Err(invalid!("ragged pose keypoints for {}", p.video_id));
        }
        let coords = Array3::from_shape_fn((l, j, 2), |(f, k, a)| p.keypoints[f][k][a]);
        let conf = Array2::from_shape_fn((l, j), |(f, k)| p.confidence[f][k]);
        PoseSequence::new(coords, conf, p.video_id, p.clip_index)
    }
}
