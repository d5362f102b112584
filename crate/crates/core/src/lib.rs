//! Group-constrained label propagation for user interest profiling.
//!
//! Image-level category predictions are smoothed over a per-user image
//! similarity graph while a category affinity matrix pulls mass toward
//! categories that co-occur across users. Per-user predictions are then
//! aggregated into interest distributions and scored against board labels.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod affinity;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod profiling;
pub mod propagation;
pub mod synth;

pub use affinity::{CategoryAffinity, SimilarityMatrix};
pub use dataset::{load_dataset, save_dataset, Dataset, DatasetPaths};
pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{CategorySet, FeatureMatrix, IncidenceRecord, LabelMatrix, UserCollection};
pub use pipeline::{run_pipeline, Mode, PipelineConfig, PipelineOutput};
pub use propagation::{propagate, PropagationConfig, PropagationMode, PropagationResult};
pub use synth::{synth_generate, SynthConfig};
