//! Network description, weights, datasets and the inference runner.

pub mod idx;
pub mod inference;
pub mod topology;
pub mod weights;

pub use idx::{load_idx_images, load_idx_labels, Dataset, IdxImages};
pub use inference::{compare_backends, run_inference, AccuracyComparison, Backend, InferenceReport, LayerMismatch};
pub use topology::{parse_topology, Dims, LayerKind, LayerSpec, NetworkSpec, Precision};
pub use weights::WeightContainer;
