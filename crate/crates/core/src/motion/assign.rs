//! Clip-to-concept assignment tensor and per-video motion labels.

use ndarray::{Array2, Array3, ArrayView2};

use super::finch::Metric;
use crate::error::{invalid, Result};

/// Slot of a clustered pose sequence: manifest row and 0-based clip slot
/// (`clip_index - 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ClipSlot {
    pub video: usize,
    pub clip: usize,
}

/// Binary `N x S x M_m` tensor; `a[i, s, k] = 1` iff clip `s` of video `i`
/// belongs to motion concept `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentTensor {
    data: Array3<u8>,
    video_ids: Vec<String>,
}

impl AssignmentTensor {
    pub fn data(&self) -> &Array3<u8> {
        &self.data
    }

    pub fn video_ids(&self) -> &[String] {
        &self.video_ids
    }

    pub fn num_concepts(&self) -> usize {
        self.data.dim().2
    }

    pub fn get(&self, video: usize, clip: usize, concept: usize) -> u8 {
        self.data[[video, clip, concept]]
    }
}

/// Builds the assignment tensor from cluster labels of clustered clips.
///
/// `labels[i]` is the cluster of the clip at `slots[i]`. Slots that never
/// appear (missing or filtered clips) stay all-zero.
pub fn build_assignment_tensor(
    labels: &[usize],
    num_concepts: usize,
    slots: &[ClipSlot],
    video_ids: &[String],
    max_clips: usize,
) -> Result<AssignmentTensor> {
    if labels.len() != slots.len() {
        return Err(invalid!(
            "{} cluster labels for {} clip slots",
            labels.len(),
            slots.len()
        ));
    }
    let mut data = Array3::<u8>::zeros((video_ids.len(), max_clips, num_concepts));
    let mut seen = vec![false; video_ids.len() * max_clips];
    for (&k, slot) in labels.iter().zip(slots) {
        if slot.video >= video_ids.len() || slot.clip >= max_clips {
            return Err(invalid!(
                "clip slot ({}, {}) outside {} videos x {max_clips} clips",
                slot.video,
                slot.clip,
                video_ids.len()
            ));
        }
        if k >= num_concepts {
            return Err(invalid!("cluster {k} outside {num_concepts} concepts"));
        }
        let flat = slot.video * max_clips + slot.clip;
        if std::mem::replace(&mut seen[flat], true) {
            return Err(invalid!(
                "clip {} of video {:?} assigned twice",
                slot.clip + 1,
                video_ids[slot.video]
            ));
        }
        data[[slot.video, slot.clip, k]] = 1;
    }
    Ok(AssignmentTensor {
        data,
        video_ids: video_ids.to_vec(),
    })
}

/// `c[i, k] = 1` iff any clip of video `i` belongs to concept `k`.
pub fn motion_labels(tensor: &AssignmentTensor) -> Array2<f64> {
    let (n, s, m) = tensor.data.dim();
    Array2::from_shape_fn((n, m), |(i, k)| {
        let present = (0..s).any(|c| tensor.data[[i, c, k]] != 0);
        if present {
            1.0
        } else {
            0.0
        }
    })
}

/// Member (row) minimizing the summed distance to all other members; ties
/// go to the lowest index.
pub fn cluster_medoid(members: ArrayView2<f64>, metric: Metric) -> Result<usize> {
    let n = members.nrows();
    if n == 0 {
        return Err(invalid!("medoid of an empty cluster"));
    }
    let mut best = 0;
    let mut best_sum = f64::INFINITY;
    for i in 0..n {
        let sum: f64 = (0..n)
            .map(|j| metric.distance(members.row(i), members.row(j)))
            .sum();
        if sum < best_sum {
            best = i;
            best_sum = sum;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("v{i}")).collect()
    }

    #[test]
    fn one_hot_row() {
        let t = build_assignment_tensor(&[1], 3, &[ClipSlot { video: 0, clip: 0 }], &ids(1), 2)
            .unwrap();
        assert_eq!(t.data().slice(ndarray::s![0, 0, ..]).to_vec(), vec![0, 1, 0]);
        // second (filtered) clip is all zeros
        assert_eq!(t.data().slice(ndarray::s![0, 1, ..]).to_vec(), vec![0, 0, 0]);
    }

    #[test]
    fn duplicate_slot_rejected() {
        let s = ClipSlot { video: 0, clip: 0 };
        assert!(build_assignment_tensor(&[0, 1], 2, &[s, s], &ids(1), 1).is_err());
    }

    #[test]
    fn indicator_saturates() {
        let slots = [ClipSlot { video: 0, clip: 0 }, ClipSlot { video: 0, clip: 1 }];
        let t = build_assignment_tensor(&[2, 2], 3, &slots, &ids(1), 2).unwrap();
        assert_eq!(motion_labels(&t), array![[0.0, 0.0, 1.0]]);
        let empty = build_assignment_tensor(&[], 3, &[], &ids(2), 2).unwrap();
        assert_eq!(motion_labels(&empty), Array2::<f64>::zeros((2, 3)));
    }

    #[test]
    fn labels_invariant_to_clip_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let labels: Vec<usize> = (0..12).map(|_| rng.random_range(0..4)).collect();
        let slots: Vec<ClipSlot> = (0..12).map(|i| ClipSlot { video: i / 3, clip: i % 3 }).collect();
        let permuted: Vec<ClipSlot> = slots
            .iter()
            .map(|s| ClipSlot { video: s.video, clip: 2 - s.clip })
            .collect();
        let a = build_assignment_tensor(&labels, 4, &slots, &ids(4), 3).unwrap();
        let b = build_assignment_tensor(&labels, 4, &permuted, &ids(4), 3).unwrap();
        assert_eq!(motion_labels(&a), motion_labels(&b));
        for i in 0..4 {
            assert!(motion_labels(&a).row(i).sum() <= 3.0);
        }
    }

    #[test]
    fn medoid_cases() {
        assert_eq!(cluster_medoid(array![[3.0, 1.0]].view(), Metric::Euclidean).unwrap(), 0);
        let line = array![[0.0, 0.0], [2.0, 0.0], [1.0, 0.0]];
        assert_eq!(cluster_medoid(line.view(), Metric::Euclidean).unwrap(), 2);
        assert!(cluster_medoid(Array2::zeros((0, 2)).view(), Metric::Euclidean).is_err());
    }

    #[test]
    fn medoid_matches_pairwise_sum_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for metric in [Metric::Cosine, Metric::Euclidean] {
            let x = Array2::from_shape_fn((30, 6), |_| rng.random::<f64>() - 0.3);
            let mut sums = vec![0.0; 30];
            for i in 0..30 {
                for j in 0..30 {
                    let d = match metric {
                        Metric::Euclidean => (0..6).map(|c| (x[[i, c]] - x[[j, c]]).powi(2)).sum::<f64>().sqrt(),
                        Metric::Cosine => {
                            let dot: f64 = (0..6).map(|c| x[[i, c]] * x[[j, c]]).sum();
                            let ni: f64 = (0..6).map(|c| x[[i, c]].powi(2)).sum::<f64>().sqrt();
                            let nj: f64 = (0..6).map(|c| x[[j, c]].powi(2)).sum::<f64>().sqrt();
                            1.0 - dot / (ni * nj)
                        }
                    };
                    sums[i] += d;
                }
            }
            let expected = (0..30).fold(0, |b, i| if sums[i] < sums[b] - 1e-12 { i } else { b });
            assert_eq!(cluster_medoid(x.view(), metric).unwrap(), expected);
        }
    }
}
