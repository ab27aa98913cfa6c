//! Datasets, synthetic generation, image ingestion and skewed partitioning.

mod dataset;
pub mod ingest;
pub mod partition;
pub mod synthetic;

pub use dataset::Dataset;
pub use ingest::load_image_dir;
pub use partition::{
    expertise_class, partition, skewed_counts, stratified_holdout, zero_skew_split, ClassSide, ClientShard,
    HoldoutSplit, SkewSpec, ZeroSkewSplit,
};
pub use synthetic::{gen_synthetic, SyntheticSpec};
