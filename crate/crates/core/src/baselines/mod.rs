//! HMM and MEMM sequence labelers used in place of the CRF decoder, plus a
//! feature-linear CRF for comparisons on raw features.
//!
//! All three consume the same per-token feature vectors.

mod hmm;
mod label_bias;
mod linear_crf;
mod memm;

use ndarray::Array2;

pub use hmm::{hmm_decode, hmm_fit, hmm_log_joint, HmmEmission, HmmEmissionMode, HmmParams};
pub use label_bias::{label_bias_corpus, LABEL_BIAS_NUM_LABELS};
pub use linear_crf::{LinearCrf, LinearCrfConfig};
pub use memm::{
    memm_decode, memm_fit, memm_local_distribution, memm_path_log_prob, MemmConfig, MemmParams,
};

/// One sequence of feature vectors with its gold labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledFeatures<T> {
    /// `n x feature_dim`
    pub features: Array2<T>,
    pub labels: Vec<usize>,
}
