//! Token-level segmentation of hybrid human/machine text with a BiGRU
//! emission network and a linear-chain CRF, plus HMM and MEMM baselines,
//! boundary metrics and the file formats used by the `hybridseg` CLI.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the double-precision variants used by the CLI.

pub mod baselines;
pub mod crf;
pub mod data;
pub mod emissions;
pub mod error;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use labels::{BoundarySet, Hyperparameters, LabelSequence, MixedTextRecord, Pattern, TokenSequence};
pub use metrics::{evaluate, MetricsReport, Prediction, Predictor};
pub use model::{DecoderKind, GroupId, ModelConfig};
pub use scalar::Scalar;
pub use training::{train, EpochLog, TrainConfig};

pub type CrfParams = crf::CrfParams<f64>;
pub type EmissionScores = crf::EmissionScores<f64>;
pub type Segmenter = model::Segmenter<f64>;
pub type SegmenterParams = model::SegmenterParams<f64>;
pub type Example = baselines::LabeledFeatures<f64>;
