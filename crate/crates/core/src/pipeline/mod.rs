//! End-to-end orchestration: configuration, manifests, training,
//! evaluation, persistence and synthetic datasets.

mod bundle;
mod config;
mod error;
mod manifest;
mod run;
mod source;
mod synth;

pub use bundle::{frame_feature, ModelBundle, Quantizer, Regressor, BUNDLE_FORMAT, BUNDLE_VERSION};
pub use config::{Auto, Mode, PipelineConfig, RegressorKind};
pub use error::{FailureKind, PipelineError, Result};
pub use manifest::{DatasetManifest, FrameEntry};
pub use run::{
    compare_baselines, compare_on, evaluate, evaluate_on, pick_similarity_frames, train, train_on,
    BaselineRow, Comparison, Evaluation, FramePrediction, SimilarityTriple, DEFAULT_LAMBDA,
    LAMBDA_GRID,
};
pub use source::{FrameSource, ManifestSource, MemorySource, RecordingSource};
pub use synth::{
    frame_plan, synth_dataset, synth_frames, FramePlan, SynthDatasetSpec, MANIFEST_NAME,
};
