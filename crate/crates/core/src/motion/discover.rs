//! End-to-end motion concept discovery over a manifest's pose files.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::assign::{build_assignment_tensor, cluster_medoid, motion_labels, AssignmentTensor, ClipSlot};
use super::filter::{normalize_pose_sequence, PoseFilter};
use super::finch::{finch_cluster, select_partition, Metric};
use crate::concepts::{ConceptKind, ConceptLabelsMeta, MotionConceptInfo};
use crate::error::{invalid, Error, Result};
use crate::ingest::manifest::DatasetManifest;
use crate::ingest::pose::{list_pose_files, read_pose_file, PoseSequence};
use crate::ingest::tensor::write_matrix;
use crate::keyclip::KeyClipsFile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    pub filter: PoseFilter,
    pub target_concepts: usize,
    pub metric: Metric,
}

impl Default for MotionParams {
    fn default() -> Self {
        MotionParams {
            filter: PoseFilter::default(),
            target_concepts: 64,
            metric: Metric::Cosine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRef {
    pub video_id: String,
    pub clip_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionConcept {
    pub index: usize,
    pub name: String,
    /// Raw pose sequence of the member closest to all other members.
    pub medoid: PoseSequence,
    pub members: Vec<ClipRef>,
}

/// Discovered motion concepts plus the bookkeeping needed to audit them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionConceptSet {
    pub params: MotionParams,
    pub clip_length: usize,
    pub num_joints: usize,
    pub max_clips: usize,
    pub sequences_in: usize,
    pub sequences_kept: usize,
    pub hierarchy_counts: Vec<usize>,
    pub selected_level: usize,
    pub concepts: Vec<MotionConcept>,
}

impl MotionConceptSet {
    pub fn count(&self) -> usize {
        self.concepts.len()
    }

    pub fn concept_infos(&self) -> Vec<MotionConceptInfo> {
        self.concepts
            .iter()
            .map(|c| MotionConceptInfo {
                name: c.name.clone(),
                medoid: Some(c.medoid.clone()),
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::pipeline::write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

/// Clusters pose sequences into motion concepts.
///
/// `video_ids` fixes the row order of the assignment tensor; every sequence
/// must belong to one of them and carry a clip index in `1..=max_clips`.
pub fn discover_motion_concepts(
    sequences: Vec<PoseSequence>,
    video_ids: &[String],
    max_clips: usize,
    params: &MotionParams,
) -> Result<(MotionConceptSet, AssignmentTensor)> {
    let sequences_in = sequences.len();
    let mut kept = Vec::new();
    let mut normalized = Vec::new();
    for seq in sequences {
        if !params.filter.keeps(&seq) {
            continue;
        }
        match normalize_pose_sequence(&seq) {
            Ok(n) => {
                normalized.push(n.flatten());
                kept.push(seq);
            }
            Err(e) => log::warn!("dropping pose sequence: {e}"),
        }
    }
    if kept.len() < 2 {
        return Err(Error::InputTooShort(format!(
            "{} of {sequences_in} pose sequences survived filtering; need at least 2",
            kept.len()
        )));
    }
    let (l, j) = (kept[0].num_frames(), kept[0].num_joints());
    if let Some(bad) = kept.iter().find(|s| s.num_frames() != l || s.num_joints() != j) {
        return Err(invalid!(
            "pose sequence {} clip {} is {}x{}, expected {l}x{j}",
            bad.video_id,
            bad.clip_index,
            bad.num_frames(),
            bad.num_joints()
        ));
    }

    let width = l * j * 2;
    let flat: Vec<f64> = normalized.into_iter().flatten().collect();
    let data = Array2::from_shape_vec((kept.len(), width), flat).expect("rows have equal width");
    let hierarchy = finch_cluster(data.view(), params.metric)?;
    let (level, partition) =
        select_partition(&hierarchy, params.target_concepts).expect("hierarchy is never empty");

    let slots = kept
        .iter()
        .map(|s| {
            let video = video_ids
                .iter()
                .position(|v| *v == s.video_id)
                .ok_or_else(|| invalid!("pose sequence from unknown video {:?}", s.video_id))?;
            if s.clip_index == 0 || s.clip_index > max_clips {
                return Err(invalid!(
                    "clip index {} of {:?} outside 1..={max_clips}",
                    s.clip_index,
                    s.video_id
                ));
            }
            Ok(ClipSlot {
                video,
                clip: s.clip_index - 1,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let tensor = build_assignment_tensor(
        &partition.labels,
        partition.num_clusters,
        &slots,
        video_ids,
        max_clips,
    )?;

    let concepts = partition
        .members()
        .into_iter()
        .enumerate()
        .map(|(k, members)| {
            let rows = data.select(ndarray::Axis(0), &members);
            let medoid = members[cluster_medoid(rows.view(), params.metric)?];
            Ok(MotionConcept {
                index: k,
                name: format!("motion_{k}"),
                medoid: kept[medoid].clone(),
                members: members
                    .iter()
                    .map(|&i| ClipRef {
                        video_id: kept[i].video_id.clone(),
                        clip_index: kept[i].clip_index,
                    })
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let set = MotionConceptSet {
        params: *params,
        clip_length: l,
        num_joints: j,
        max_clips,
        sequences_in,
        sequences_kept: kept.len(),
        hierarchy_counts: hierarchy.cluster_counts(),
        selected_level: level,
        concepts,
    };
    Ok((set, tensor))
}

/// Loads the pose sequences of the given manifest rows.
///
/// With a key clip file, only clips `1..=windows.len()` of each video are
/// used and their length must match the key clip length. Returns the
/// sequences and the clip capacity `S`.
pub fn load_pose_sequences(
    manifest: &DatasetManifest,
    rows: &[usize],
    clips: Option<&KeyClipsFile>,
) -> Result<(Vec<PoseSequence>, usize)> {
    let mut out = Vec::new();
    let mut max_clips = clips
        .map(|c| c.videos.iter().map(|v| v.windows.len()).max().unwrap_or(0))
        .unwrap_or(0);
    for &row in rows {
        let video = &manifest.videos()[row];
        let Some(dir) = &video.pose_dir else { continue };
        let allowed = clips.map(|c| c.video(&video.id).map_or(0, |v| v.windows.len()));
        for (s, path) in list_pose_files(dir)? {
            if allowed.is_some_and(|n| s > n) {
                continue;
            }
            let seq = read_pose_file(&path, &video.id, s)?;
            if let Some(c) = clips {
                if seq.num_frames() != c.clip_length {
                    return Err(invalid!(
                        "{}: {} frames but key clips have length {}",
                        path.display(),
                        seq.num_frames(),
                        c.clip_length
                    ));
                }
            }
            if clips.is_none() {
                max_clips = max_clips.max(s);
            }
            out.push(seq);
        }
    }
    Ok((out, max_clips.max(1)))
}

/// Output of the motion discovery stage for a manifest.
pub struct MotionStageOutput {
    pub concepts: MotionConceptSet,
    pub tensor: AssignmentTensor,
    /// `N x M_m` labels over all manifest rows.
    pub labels: Array2<f64>,
}

/// Discovers motion concepts from the pose files of one split and labels
/// every manifest video. Videos outside the split keep all-zero rows.
pub fn run_motion_discovery(
    manifest: &DatasetManifest,
    split: &str,
    clips: Option<&KeyClipsFile>,
    params: &MotionParams,
) -> Result<MotionStageOutput> {
    let rows = manifest.split_indices(split)?;
    let (seqs, max_clips) = load_pose_sequences(manifest, &rows, clips)?;
    let ids: Vec<String> = manifest.videos().iter().map(|v| v.id.clone()).collect();
    let (concepts, tensor) = discover_motion_concepts(seqs, &ids, max_clips, params)?;
    let labels = motion_labels(&tensor);
    Ok(MotionStageOutput {
        concepts,
        tensor,
        labels,
    })
}

impl MotionStageOutput {
    /// Writes the concept set JSON and the label tensor with its sidecar.
    pub fn write(&self, concepts_path: &Path, labels_path: &Path) -> Result<()> {
        self.concepts.write(concepts_path)?;
        write_matrix(labels_path, &self.labels)?;
        ConceptLabelsMeta {
            kind: ConceptKind::Motion,
            names: self.concepts.concepts.iter().map(|c| c.name.clone()).collect(),
            medoids: Some(self.concepts.concepts.iter().map(|c| c.medoid.clone()).collect()),
            video_ids: self.tensor.video_ids().to_vec(),
        }
        .write_for(labels_path)
    }
}
