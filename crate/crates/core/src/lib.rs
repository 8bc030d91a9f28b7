//! Attention-augmented temporal convolutional forecaster for multivariate
//! telemetry anomaly detection.
//!
//! The model predicts the next time step from a sliding window; the
//! prediction residual becomes an anomaly score that is thresholded and
//! evaluated with point adjustment.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod forecaster;
pub mod numerics;
pub mod params;
pub mod pipeline;
pub mod synthetic;
pub mod tcn;
pub mod thresholds;
pub mod trainer;

pub use attention::{Activation, AttentionMode};
pub use checkpoint::Checkpoint;
pub use config::{RunConfig, ThresholdSettings};
pub use data::{ChannelDataset, NormalizationStats};
pub use error::{Error, Result};
pub use evaluation::{AnomalySegment, Averaging, Confusion, EvalReport, Metrics};
pub use forecaster::{Forecaster, ModelConfig};
pub use numerics::{Tape, Tensor, Var};
pub use thresholds::{GpdFit, ScoreSequence, ThresholdMethod, ThresholdResult};
pub use trainer::{TrainConfig, TrainReport, WindowSample, WindowSet};
