//! Dataset files, synthetic data generation and evaluation metrics.

pub mod dataset;
pub mod metrics;
pub mod synth;

pub use dataset::{file_sha256, Dataset, DatasetHeader, GroupSample};
pub use metrics::{compute_metrics, MetricsReport};
pub use synth::{generate_dataset, SynthesisSpec, SyntheticDataset};
