//! Convolutional network training from scratch.
//!
//! The crate is organised bottom-up: [`tensor`] holds the array type and
//! kernels, [`layers`] the per-layer forward/backward passes, [`network`]
//! chains them according to a [`model_zoo::ModelSpec`], and [`trainer`]
//! runs Nesterov-momentum training with max-norm constraints and early
//! stopping. [`dataset`] and [`preprocess`] cover CIFAR-10 input and the
//! image normalisation pipelines; [`config`] and [`experiment`] tie a run
//! configuration to prepared data and a trained checkpoint.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod io_util;
pub mod layers;
pub mod linalg;
pub mod model_zoo;
pub mod network;
pub mod objective;
pub mod optimizer;
pub mod preprocess;
pub mod tensor;
pub mod trainer;

pub use config::{ResolvedConfig, RunConfig};
pub use dataset::LabeledDataset;
pub use error::{Error, Result};
pub use model_zoo::{builtin, BuildOptions, Builtin, InitPolicy, LayerSpec, ModelSpec, Variant};
pub use network::{DropoutMode, Network};
pub use objective::LossReport;
pub use optimizer::{MomentumKind, TrainSchedule};
pub use preprocess::{FittedPipeline, Pipeline, PipelineConfig};
pub use tensor::Tensor;
pub use trainer::{Checkpoint, LearningCurve, TrainOptions};
