//! File formats, dataset loading, feature pooling, and synthetic data.

pub mod config;
pub mod features;
pub mod manifest;
pub mod pooling;
pub mod synth;
pub mod text;

pub use config::{resolve_data_path, PipelineConfig, Profile};
pub use features::{read_features, write_features, SegmentFeatures, Stream};
pub use manifest::{load_dataset, write_dataset, VideoRecord};
pub use pooling::{pool_extended_feature, pool_proposal_feature};
pub use synth::{generate_synthetic, ground_truth_map, write_synthetic, SyntheticSpec};
