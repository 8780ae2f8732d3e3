//! Human motion forecasting with motion attention over DCT-encoded
//! sub-sequences and a graph-convolutional predictor.

pub mod attention;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod predictor;
pub mod training;

pub use attention::{AttentionConfig, AttentionKind, AttentionOutput, AttentionParams};
pub use data::{gen_synthetic, load_sequence, save_sequence, SyntheticSpec};
pub use error::{Error, Result};
pub use eval::{evaluate, horizon_frames, load_checkpoint, save_checkpoint, Checkpoint, Metric};
pub use model::{
    Forecaster, Model, ModelConfig, ModelParams, PoseSequence, Representation, ZeroVelocity,
};
pub use numerics::{DctBasis, Matrix};
pub use predictor::GcnConfig;
pub use training::{train, LossKind, TrainConfig};
