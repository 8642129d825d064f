//! Input formats: DTF1 tensors, dataset manifests and pose sequences, plus a
//! seeded synthetic dataset generator.

pub mod manifest;
pub mod pose;
pub mod synthetic;
pub mod tensor;

pub use manifest::{load_manifest, DatasetManifest, ManifestFile, VideoRecord};
pub use pose::PoseSequence;
pub use synthetic::{generate_synthetic_dataset, ClassDefinition, PlantedClip, PlantedTruth, SyntheticConfig, SyntheticDataset};
pub use tensor::{read_matrix, read_tensor, write_matrix, write_tensor, Tensor};
