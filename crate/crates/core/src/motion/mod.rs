//! Motion-dynamics concepts: pose filtering and normalization, first-neighbor
//! clustering, clip assignment and per-video motion labels.

pub mod assign;
pub mod discover;
pub mod filter;
pub mod finch;

pub use assign::{build_assignment_tensor, cluster_medoid, motion_labels, AssignmentTensor, ClipSlot};
pub use discover::{
    discover_motion_concepts, load_pose_sequences, run_motion_discovery, MotionConcept,
    MotionConceptSet, MotionParams, MotionStageOutput,
};
pub use filter::{filter_pose_sequences, normalize_pose_sequence, PoseFilter};
pub use finch::{finch_cluster, select_partition, FinchHierarchy, Metric, Partition};
