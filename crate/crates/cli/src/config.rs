//! Layered settings: defaults < config file < environment < flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use hybridseg::Hyperparameters;

use crate::CliError;

/// Overwrites `$dst.field` with every flag/env value that was given.
macro_rules! overlay {
    ($dst:expr, $src:expr; $($field:ident),* $(,)?) => {
        $(if let Some(v) = $src.$field.clone() { $dst.$field = v.into(); })*
    };
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub seed: u64,
    pub style_seed: u64,
    pub n: usize,
    /// `all`, one pattern, or a comma list with optional weights (`HM:2,MH`).
    pub pattern: String,
    pub delta: f64,
    pub dim: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub min_segment_len: usize,
    pub out_dir: Option<PathBuf>,
    pub prefix: String,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            seed: 42,
            style_seed: 7,
            n: 100,
            pattern: "all".into(),
            delta: 3.0,
            dim: 8,
            min_len: 60,
            max_len: 120,
            min_segment_len: 8,
            out_dir: None,
            prefix: "synth".into(),
        }
    }
}

#[derive(Clone, Debug, Default, Args)]
pub struct SynthArgs {
    #[arg(long, env = "HYBRIDSEG_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "HYBRIDSEG_STYLE_SEED")]
    pub style_seed: Option<u64>,
    /// Number of records.
    #[arg(long, env = "HYBRIDSEG_N")]
    pub n: Option<usize>,
    /// `all`, one pattern, or a weighted list such as `HM:2,MHM:1`.
    #[arg(long, env = "HYBRIDSEG_PATTERN")]
    pub pattern: Option<String>,
    /// Distance between the class means, in noise standard deviations.
    #[arg(long, env = "HYBRIDSEG_DELTA")]
    pub delta: Option<f64>,
    #[arg(long, env = "HYBRIDSEG_DIM")]
    pub dim: Option<usize>,
    #[arg(long, env = "HYBRIDSEG_MIN_LEN")]
    pub min_len: Option<usize>,
    #[arg(long, env = "HYBRIDSEG_MAX_LEN")]
    pub max_len: Option<usize>,
    #[arg(long, env = "HYBRIDSEG_MIN_SEGMENT_LEN")]
    pub min_segment_len: Option<usize>,
    /// Directory receiving `<prefix>.jsonl` and `<prefix>.seqe`. Must exist.
    #[arg(long, env = "HYBRIDSEG_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    #[arg(long, env = "HYBRIDSEG_PREFIX")]
    pub prefix: Option<String>,
}

impl SynthArgs {
    pub fn apply(&self, s: &mut SynthSettings) {
        overlay!(s, self; seed, style_seed, n, pattern, delta, dim, min_len, max_len, min_segment_len, out_dir, prefix);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub train: Option<PathBuf>,
    pub train_embeddings: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub dev_embeddings: Option<PathBuf>,
    pub model_out: Option<PathBuf>,
    pub log_file: Option<PathBuf>,
    /// Decoder family: crf, hmm or memm.
    pub model: String,
    pub batch_size: usize,
    pub epochs: usize,
    pub gradient_clip: f64,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_labels: usize,
    pub weight_decay: f64,
    pub max_len: usize,
    pub llrd_rates: Vec<f64>,
    /// A single learning rate for every parameter; disables LLRD.
    pub lr: Option<f64>,
    pub seed: u64,
    pub dropout: bool,
    pub dropout_min: f64,
    pub dropout_max: f64,
    /// xavier or fan-in.
    pub head_init: String,
    /// adamw or sgd.
    pub optimizer: String,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Dimension of hashed embeddings, used when no embedding file is given.
    pub embedding_dim: usize,
    pub embedding_seed: u64,
    /// gaussian or sign-categorical.
    pub hmm_emission: String,
    pub smoothing: f64,
    pub memm_iterations: usize,
    pub memm_learning_rate: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let h = Hyperparameters::default();
        Self {
            train: None,
            train_embeddings: None,
            dev: None,
            dev_embeddings: None,
            model_out: None,
            log_file: None,
            model: "crf".into(),
            batch_size: h.batch_size,
            epochs: h.epochs,
            gradient_clip: h.gradient_clip,
            hidden_dim: h.hidden_dim,
            num_layers: h.num_layers,
            num_labels: h.num_labels,
            weight_decay: h.weight_decay,
            max_len: h.max_len,
            llrd_rates: h.llrd_rates.to_vec(),
            lr: None,
            seed: 0,
            dropout: true,
            dropout_min: 0.1,
            dropout_max: 0.3,
            head_init: "xavier".into(),
            optimizer: "adamw".into(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            embedding_dim: 64,
            embedding_seed: 0,
            hmm_emission: "gaussian".into(),
            smoothing: 1.0,
            memm_iterations: 300,
            memm_learning_rate: 0.5,
        }
    }
}

#[derive(Clone, Debug, Default, Args)]
pub struct TrainArgs {
    /// Training dataset (JSON lines).
    #[arg(long, env = "HYBRIDSEG_TRAIN")]
    pub train: Option<PathBuf>,
    /// Embedding file for the training records; hashed embeddings otherwise.
    #[arg(long, env = "HYBRIDSEG_TRAIN_EMBEDDINGS")]
    pub train_embeddings: Option<PathBuf>,
    #[arg(long, env = "HYBRIDSEG_DEV")]
    pub dev: Option<PathBuf>,
    /// Defaults to the training embedding file.
    #[arg(long, env = "HYBRIDSEG_DEV_EMBEDDINGS")]
    pub dev_embeddings: Option<PathBuf>,
    #[arg(long, env = "HYBRIDSEG_MODEL_OUT")]
    pub model_out: Option<PathBuf>,
    /// Also append epoch lines to this file.
    #[arg(long, env = "HYBRIDSEG_LOG_FILE")]
    pub log_file: Option<PathBuf>,
    /// Decoder family: crf, hmm or memm.
    #[arg(long, env = "HYBRIDSEG_MODEL")]
    pub model: Option<String>,
    #[arg(long, env = "HYBRIDSEG_BATCH_SIZE")]
    pub batch_size: Option<usize>,
    #[arg(long, env = "HYBRIDSEG_EPOCHS")]
    pub epochs: Option<usize>,
    #[arg(long, env = "HYBRIDSEG_GRADIENT_CLIP")]
    pub gradient_clip: Option<f64>,
    #[arg(long, env = "HYBRIDSEG_HIDDEN_DIM")]
    pub hidden_dim: Option<usize>,
    #[arg(long, env = "HYBRIDSEG_NUM_LAYERS")]
    pub num_layers: Option<usize>,
    #[arg(long, env = "HYBRIDSEG_NUM_LABELS")]
    pub num_labels: Option<usize>,
    #[arg(long, env = "HYBRIDSEG_WEIGHT_DECAY")]
    pub weight_decay: Option<f64>,
    #[arg(long, env = "HYBRIDSEG_MAX_LEN")]
    pub max_len: Option<usize>,
    /// Four increasing rates: embeddings, lower encoder, upper encoder + NN, head + CRF.
    #[arg(long, env = "HYBRIDSEG_LLRD_RATES", value_delimiter = ',', num_args = 1..)]
    pub llrd_rates: Option<Vec<f64>>,
    /// One learning rate for all parameters (disables LLRD).
    #[arg(long, env = "HYBRIDSEG_LR")]
    pub lr: Option<f64>,
    #[arg(long, env = "HYBRIDSEG_SEED")]
    pub seed: Option<u64>,
    /// Enable per-layer dropout (true/false).
    #[arg(long, env = "HYBRIDSEG_DROPOUT")]
    pub dropout: Option<bool>,
    #[arg(long, env = "HYBRIDSEG_DROPOUT_MIN")]
    pub dropout_min: Option<f64>,
    #[arg(long, env = "HYBRIDSEG_DROPOUT_MAX")]
    pub dropout_max: Option<f64>,
    /// xavier or fan-in.
    #[arg(long, env = "HYBRIDSEG_HEAD_INIT")]
    pub head_init: Option<String>,
    /// adamw or sgd.
    #[arg(long, env = "HYBRIDSEG_OPTIMIZER")]
    pub optimizer: Option<String>,
    #[arg(long, env = "HYBRIDSEG_BETA1")]
    pub beta1: Option<f64>,
    #[arg(long, env = "HYBRIDSEG_BETA2")]
    pub beta2: Option<f64>,
    #[arg(long, env = "HYBRIDSEG_EPSILON")]
    pub epsilon: Option<f64>,
    #[arg(long, env = "HYBRIDSEG_EMBEDDING_DIM")]
    pub embedding_dim: Option<usize>,
    #[arg(long, env = "HYBRIDSEG_EMBEDDING_SEED")]
    pub embedding_seed: Option<u64>,
    /// gaussian or sign-categorical.
    #[arg(long, env = "HYBRIDSEG_HMM_EMISSION")]
    pub hmm_emission: Option<String>,
    #[arg(long, env = "HYBRIDSEG_SMOOTHING")]
    pub smoothing: Option<f64>,
    #[arg(long, env = "HYBRIDSEG_MEMM_ITERATIONS")]
    pub memm_iterations: Option<usize>,
    #[arg(long, env = "HYBRIDSEG_MEMM_LEARNING_RATE")]
    pub memm_learning_rate: Option<f64>,
}

impl TrainArgs {
    pub fn apply(&self, s: &mut TrainSettings) {
        overlay!(s, self;
            train, train_embeddings, dev, dev_embeddings, model_out, log_file, model, batch_size, epochs,
            gradient_clip, hidden_dim, num_layers, num_labels, weight_decay, max_len, llrd_rates, lr, seed,
            dropout, dropout_min, dropout_max, head_init, optimizer, beta1, beta2, epsilon, embedding_dim,
            embedding_seed, hmm_emission, smoothing, memm_iterations, memm_learning_rate);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PredictSettings {
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub k: usize,
}

impl Default for PredictSettings {
    fn default() -> Self {
        Self {
            model: None,
            data: None,
            embeddings: None,
            out: None,
            k: 3,
        }
    }
}

#[derive(Clone, Debug, Default, Args)]
pub struct PredictArgs {
    #[arg(long, env = "HYBRIDSEG_MODEL_PATH")]
    pub model: Option<PathBuf>,
    #[arg(long, env = "HYBRIDSEG_DATA")]
    pub data: Option<PathBuf>,
    #[arg(long, env = "HYBRIDSEG_EMBEDDINGS")]
    pub embeddings: Option<PathBuf>,
    /// Predictions file (JSON lines).
    #[arg(long, env = "HYBRIDSEG_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "HYBRIDSEG_K")]
    pub k: Option<usize>,
}

impl PredictArgs {
    pub fn apply(&self, s: &mut PredictSettings) {
        overlay!(s, self; model, data, embeddings, out, k);
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub predictions: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub k: usize,
    /// Structured text report.
    pub report: Option<PathBuf>,
    /// `key=value` report.
    pub kv: Option<PathBuf>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            predictions: None,
            gold: None,
            k: 3,
            report: None,
            kv: None,
        }
    }
}

#[derive(Clone, Debug, Default, Args)]
pub struct EvalArgs {
    #[arg(long, env = "HYBRIDSEG_PREDICTIONS")]
    pub predictions: Option<PathBuf>,
    #[arg(long, env = "HYBRIDSEG_GOLD")]
    pub gold: Option<PathBuf>,
    #[arg(long, env = "HYBRIDSEG_K")]
    pub k: Option<usize>,
    #[arg(long, env = "HYBRIDSEG_REPORT")]
    pub report: Option<PathBuf>,
    #[arg(long, env = "HYBRIDSEG_KV")]
    pub kv: Option<PathBuf>,
}

impl EvalArgs {
    pub fn apply(&self, s: &mut EvalSettings) {
        overlay!(s, self; predictions, gold, k, report, kv);
    }
}

/// Contents of a config file; every table is optional.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub synth: SynthSettings,
    pub train: TrainSettings,
    pub predict: PredictSettings,
    pub eval: EvalSettings,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

/// Resolved settings as TOML, for echoing.
pub fn render<T: Serialize>(table: &str, settings: &T) -> String {
    let body = toml::to_string(settings).unwrap_or_else(|e| format!("# cannot render: {e}\n"));
    format!("# resolved config\n[{table}]\n{body}")
}
