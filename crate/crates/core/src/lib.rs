//! Backpropagation-free few-shot instance recognition on top of an object
//! detector.
//!
//! A detector's encoder features inside the predicted box are pooled into
//! per-channel multi-order moments ([`reduction`]). Few support shots per
//! personal instance are averaged into prototypes, and queries are matched
//! only against the instances of the detector's predicted object class
//! ([`bag`]). The [`harness`] module reproduces episode protocols, instance
//! sweeps and accuracy metrics, and generates synthetic datasets.

pub mod bag;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod labels;
pub mod reduction;
pub mod tensor;

pub use bag::{
    build_bag, embed_sample, simpleshot_transform, Classification, InstanceBag, SupportItem,
    TransformStats,
};
pub use dataset::{load_dataset, validate_dataset, Dataset, Manifest, ValidationReport};
pub use error::{Error, Result};
pub use harness::episode::{
    select_instances, split, split_1s1s, split_1sas, split_kshot, Episode, Protocol, Split,
};
pub use harness::metrics::{evaluate, relative_gain, MetricsReport};
pub use harness::synthetic::{gen_synthetic, write_synthetic, SyntheticSpec};
pub use labels::{
    validate_label_space, BoundingBox, FeatureMap, Head, HeadConfig, ImageSize, InstanceIdx,
    LabelSpace, LabelSpaceSpec, ObjectIdx, ReductionConfig, ReductionMode, Sample, Transform,
};
pub use reduction::{build_mask, central_moments, reduce, Embedding, Mask, Standardizer};
