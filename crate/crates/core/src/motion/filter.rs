use crate::error::{Error, Result};
use crate::ingest::pose::{bbox_diagonal, PoseSequence};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PoseFilter {
    /// Minimum mean joint confidence.
    pub conf_min: f64,
    /// Maximum per-step joint displacement as a fraction of the person's
    /// bounding-box diagonal in the earlier frame.
    pub jump_max: f64,
}

impl Default for PoseFilter {
    fn default() -> Self {
        PoseFilter {
            conf_min: 0.3,
            jump_max: 0.5,
        }
    }
}

impl PoseFilter {
    pub fn keeps(&self, seq: &PoseSequence) -> bool {
        seq.mean_confidence() >= self.conf_min && max_relative_jump(seq) <= self.jump_max
    }
}

/// Largest joint displacement between consecutive frames, relative to the
/// bounding-box diagonal of the earlier frame. Infinite when a zero-size
/// frame is followed by any movement.
pub fn max_relative_jump(seq: &PoseSequence) -> f64 {
    let (l, j, _) = seq.coords.dim();
    let mut worst: f64 = 0.0;
    for t in 0..l.saturating_sub(1) {
        let diag = bbox_diagonal(seq.coords.index_axis(ndarray::Axis(0), t));
        for k in 0..j {
            let dx = seq.coords[[t + 1, k, 0]] - seq.coords[[t, k, 0]];
            let dy = seq.coords[[t + 1, k, 1]] - seq.coords[[t, k, 1]];
            let disp = (dx * dx + dy * dy).sqrt();
            let rel = if diag > 0.0 {
                disp / diag
            } else if disp > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            worst = worst.max(rel);
        }
    }
    worst
}

/// Drops sequences with low mean confidence or large joint discontinuities.
/// Order of the survivors is preserved.
pub fn filter_pose_sequences(seqs: Vec<PoseSequence>, filter: &PoseFilter) -> Vec<PoseSequence> {
    seqs.into_iter().filter(|s| filter.keeps(s)).collect()
}

/// Centers on the first frame's mean keypoint and scales by the first
/// frame's bounding-box diagonal. Confidences are untouched.
pub fn normalize_pose_sequence(seq: &PoseSequence) -> Result<PoseSequence> {
    let first = seq.coords.index_axis(ndarray::Axis(0), 0);
    let diag = bbox_diagonal(first);
    if !(diag > 0.0) {
        return Err(Error::DegenerateSequence(format!(
            "{} clip {}: first frame has zero bounding box",
            seq.video_id, seq.clip_index
        )));
    }
    let j = seq.num_joints() as f64;
    let cx = first.column(0).sum() / j;
    let cy = first.column(1).sum() / j;
    let mut coords = seq.coords.clone();
    for mut joint in coords.lanes_mut(ndarray::Axis(2)) {
        joint[0] = (joint[0] - cx) / diag;
        joint[1] = (joint[1] - cy) / diag;
    }
    Ok(PoseSequence {
        coords,
        conf: seq.conf.clone(),
        video_id: seq.video_id.clone(),
        clip_index: seq.clip_index,
    })
}
