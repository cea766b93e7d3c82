//! Experiment runner: configuration, embeddings, the full base/stacking run
//! and learning curves.

pub mod config;
pub mod pipeline;

pub use config::{resolve, ExperimentConfig, InputError, Overrides, Settings};
pub use pipeline::{
    cmd_curve, cmd_run, cmd_train_embeddings, CurveReport, EmbeddingArtifacts, RunReport,
};
