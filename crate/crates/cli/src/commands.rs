//! Subcommand implementations over resolved settings.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use hybridseg::baselines::{HmmEmissionMode, MemmConfig};
use hybridseg::data::{
    load_dataset, load_model, load_predictions, read_embeddings, save_dataset, save_model,
    synth_generate, write_embeddings, write_predictions, PredictionRecord, SynthConfig,
};
use hybridseg::emissions::{DropoutPolicy, EmbeddingTable, InitScheme};
use hybridseg::labels::validate_record_with;
use hybridseg::metrics::evaluate_predictions;
use hybridseg::model::DecoderFitConfig;
use hybridseg::training::{prepare_examples, LearningRates, OptimizerConfig, OptimizerKind};
use hybridseg::{
    DecoderKind, Error, Hyperparameters, MixedTextRecord, ModelConfig, Pattern,
    Segmenter, TrainConfig,
};

use crate::config::{EvalSettings, PredictSettings, SynthSettings, TrainSettings};
use crate::CliError;

const MODEL_MAGIC: &[u8] = b"HSEGMODL";
const EMBEDDING_MAGIC: &[u8] = b"SEQE";

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing required setting --{flag}")))
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// `all`, `HMH`, or `HM:2,MH:1`.
pub fn parse_pattern_weights(spec: &str) -> Result<Vec<(Pattern, f64)>, CliError> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(Pattern::ALL.iter().map(|&p| (p, 1.0)).collect());
    }
    spec.split(',')
        .map(|item| {
            let (name, weight) = match item.split_once(':') {
                Some((n, w)) => (n, w.trim().parse::<f64>().map_err(|e| usage(format!("pattern weight `{w}`: {e}")))?),
                None => (item, 1.0),
            };
            Ok((name.parse::<Pattern>().map_err(usage)?, weight))
        })
        .collect()
}

pub fn run_synth(s: &SynthSettings, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = required(&s.out_dir, "out-dir")?;
    if !dir.is_dir() {
        return Err(CliError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("output directory {} does not exist", dir.display()),
        )));
    }
    let config = SynthConfig {
        seed: s.seed,
        style_seed: s.style_seed,
        num_records: s.n,
        pattern_weights: parse_pattern_weights(&s.pattern)?,
        min_len: s.min_len,
        max_len: s.max_len,
        min_segment_len: s.min_segment_len,
        delta: s.delta,
        dim: s.dim,
        id_prefix: s.prefix.clone(),
    };
    config.validate().map_err(usage)?;
    let (records, embeddings) = synth_generate(&config)?;
    let data_path = dir.join(format!("{}.jsonl", s.prefix));
    let emb_path = dir.join(format!("{}.seqe", s.prefix));
    save_dataset(&records, &data_path)?;
    write_embeddings(&emb_path, &embeddings)?;
    writeln!(out, "wrote {} records to {}", records.len(), data_path.display())?;
    writeln!(out, "wrote {} embeddings (dim {}) to {}", embeddings.len(), embeddings.dim, emb_path.display())?;
    Ok(())
}

fn parse_head_init(s: &str) -> Result<InitScheme, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "xavier" => Ok(InitScheme::Xavier),
        "fan-in" | "fanin" | "fan_in" => Ok(InitScheme::FanIn),
        other => Err(usage(format!("unknown head init `{other}` (xavier, fan-in)"))),
    }
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "adamw" => Ok(OptimizerKind::AdamW),
        "sgd" => Ok(OptimizerKind::Sgd),
        other => Err(usage(format!("unknown optimizer `{other}` (adamw, sgd)"))),
    }
}

fn parse_hmm_emission(s: &str) -> Result<HmmEmissionMode, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "gaussian" => Ok(HmmEmissionMode::Gaussian),
        "sign-categorical" | "sign_categorical" => Ok(HmmEmissionMode::SignCategorical),
        other => Err(usage(format!("unknown hmm emission `{other}` (gaussian, sign-categorical)"))),
    }
}

/// Training configuration described by the settings.
pub fn train_config(s: &TrainSettings) -> Result<TrainConfig, CliError> {
    let rates: [f64; 4] = s
        .llrd_rates
        .as_slice()
        .try_into()
        .map_err(|_| usage(format!("expected 4 llrd rates, got {}", s.llrd_rates.len())))?;
    let hyper = Hyperparameters {
        batch_size: s.batch_size,
        epochs: s.epochs,
        gradient_clip: s.gradient_clip,
        hidden_dim: s.hidden_dim,
        num_layers: s.num_layers,
        num_labels: s.num_labels,
        weight_decay: s.weight_decay,
        max_len: s.max_len,
        llrd_rates: rates,
    };
    let learning_rates = match s.lr {
        Some(lr) => LearningRates::Uniform(lr),
        None => LearningRates::llrd(&rates).map_err(usage)?,
    };
    let dropout = if s.dropout {
        DropoutPolicy::per_layer(s.dropout_min, s.dropout_max, s.seed)
    } else {
        DropoutPolicy::off()
    };
    let config = TrainConfig {
        hyper,
        learning_rates,
        optimizer: OptimizerConfig {
            kind: parse_optimizer(&s.optimizer)?,
            beta1: s.beta1,
            beta2: s.beta2,
            epsilon: s.epsilon,
        },
        seed: s.seed,
        dropout,
    };
    config.validate().map_err(usage)?;
    Ok(config)
}

fn load_table(path: Option<&Path>, dim: usize, seed: u64) -> Result<EmbeddingTable, CliError> {
    match path {
        Some(p) => Ok(read_embeddings(p)?.into_table()?),
        None => {
            if dim == 0 {
                return Err(usage("embedding dim must be positive"));
            }
            Ok(EmbeddingTable::hashed(dim, seed))
        }
    }
}

/// Reports every invalid record, then fails on the first.
fn check_records(records: &[MixedTextRecord], max_len: usize, err: &mut dyn Write) -> Result<(), CliError> {
    let mut first = None;
    for r in records {
        let violations = validate_record_with(r, max_len);
        if !violations.is_empty() {
            writeln!(err, "invalid record `{}`: {}", r.id, violations.join("; "))?;
            first.get_or_insert(Error::Validation { id: r.id.clone(), violations });
        }
    }
    match first {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

pub fn run_train(s: &TrainSettings, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let config = train_config(s)?;
    let decoder: DecoderKind = s.model.parse().map_err(usage)?;
    let fit = DecoderFitConfig {
        smoothing: s.smoothing,
        hmm_mode: parse_hmm_emission(&s.hmm_emission)?,
        memm: MemmConfig {
            iterations: s.memm_iterations,
            learning_rate: s.memm_learning_rate,
        },
    };
    let head_init = parse_head_init(&s.head_init)?;
    let model_out = required(&s.model_out, "model-out")?;
    let train_records = load_dataset(required(&s.train, "train")?)?;
    let dev_records = match &s.dev {
        Some(p) => load_dataset(p)?,
        None => Vec::new(),
    };
    check_records(&train_records, s.max_len, err)?;
    check_records(&dev_records, s.max_len, err)?;

    let table = load_table(s.train_embeddings.as_deref(), s.embedding_dim, s.embedding_seed)?;
    let dev_table = match &s.dev_embeddings {
        Some(p) => Some(load_table(Some(p), 0, 0)?),
        None => None,
    };
    let train_set = prepare_examples::<f64>(&train_records, &table, s.max_len)?;
    let dev_set = prepare_examples::<f64>(&dev_records, dev_table.as_ref().unwrap_or(&table), s.max_len)?;
    if let Some(t) = &dev_table {
        if t.dim() != table.dim() {
            return Err(Error::Shape(format!("dev embedding dim {} != train embedding dim {}", t.dim(), table.dim())).into());
        }
    }

    let model_config = ModelConfig {
        input_dim: table.dim(),
        hidden_dim: s.hidden_dim,
        num_layers: s.num_layers,
        num_labels: s.num_labels,
        head_init,
        embedding: table.source(),
    };
    let model = Segmenter::new(model_config, s.seed).map_err(usage)?;

    let mut log_file = match &s.log_file {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    let mut io_error = None;
    let (mut model, _) = hybridseg::train(model, &train_set, &dev_set, &config, |log| {
        let mut emit = || -> std::io::Result<()> {
            writeln!(out, "{log}")?;
            if let Some(f) = log_file.as_mut() {
                writeln!(f, "{log}")?;
                f.flush()?;
            }
            Ok(())
        };
        if let Err(e) = emit() {
            io_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    if decoder != DecoderKind::Crf {
        model.fit_decoder(decoder, &train_set, &fit)?;
    }
    save_model(&model, model_out)?;
    writeln!(out, "saved {} model to {}", decoder, model_out.display())?;
    Ok(())
}

pub fn run_predict(s: &PredictSettings, out: &mut dyn Write) -> Result<(), CliError> {
    let model = load_model::<f64>(required(&s.model, "model")?)?;
    let records = load_dataset(required(&s.data, "data")?)?;
    let table = match (&s.embeddings, model.config.embedding) {
        (Some(p), _) => read_embeddings(p)?.into_table()?,
        (None, hybridseg::emissions::EmbeddingSource::Hashed { seed }) => {
            EmbeddingTable::hashed(model.config.input_dim, seed)
        }
        (None, hybridseg::emissions::EmbeddingSource::FileBacked) => {
            return Err(usage("model was trained on an embedding file; pass --embeddings"));
        }
    };
    if table.dim() != model.config.input_dim {
        return Err(Error::Shape(format!(
            "embedding dim {} does not match model input dim {}",
            table.dim(),
            model.config.input_dim
        ))
        .into());
    }
    let predictions = records
        .iter()
        .map(|r| {
            let emb = table.embed_record::<f64>(r)?;
            Ok(PredictionRecord::new(r.id.clone(), &model.predict(&emb, s.k)?))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    match &s.out {
        Some(p) => {
            write_predictions(BufWriter::new(File::create(p)?), &predictions)?;
            writeln!(out, "wrote {} predictions to {}", predictions.len(), p.display())?;
        }
        None => write_predictions(out, &predictions)?,
    }
    Ok(())
}

pub fn run_eval(s: &EvalSettings, out: &mut dyn Write) -> Result<(), CliError> {
    let predictions = load_predictions(required(&s.predictions, "predictions")?)?;
    let gold = load_dataset(required(&s.gold, "gold")?)?;
    let mut by_id: HashMap<&str, &PredictionRecord> = HashMap::new();
    for p in &predictions {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(Error::Validation { id: p.id.clone(), violations: vec!["duplicate prediction id".into()] }.into());
        }
    }
    let paired = gold
        .iter()
        .map(|r| {
            by_id.get(r.id.as_str()).map(|p| p.to_prediction()).ok_or_else(|| Error::Validation {
                id: r.id.clone(),
                violations: vec!["no prediction for gold record".into()],
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let report = evaluate_predictions(&paired, &gold, s.k)?;
    let text = report.to_text();
    write!(out, "{text}")?;
    if let Some(p) = &s.report {
        fs::write(p, &text)?;
    }
    if let Some(p) = &s.kv {
        fs::write(p, report.to_key_values())?;
    }
    Ok(())
}

pub fn run_inspect(path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let mut head = [0u8; 8];
    let n = File::open(path)?.read(&mut head)?;
    let head = &head[..n];
    if head.starts_with(MODEL_MAGIC) {
        inspect_model(path, out)
    } else if head.starts_with(EMBEDDING_MAGIC) {
        inspect_embeddings(path, out)
    } else {
        inspect_dataset(path, out)
    }
}

fn inspect_model(path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let model = load_model::<f64>(path)?;
    let c = &model.config;
    writeln!(out, "kind=model")?;
    writeln!(out, "decoder={}", model.decoder_kind())?;
    writeln!(out, "input_dim={}", c.input_dim)?;
    writeln!(out, "hidden_dim={}", c.hidden_dim)?;
    writeln!(out, "num_layers={}", c.num_layers)?;
    writeln!(out, "num_labels={}", c.num_labels)?;
    writeln!(out, "embedding={:?}", c.embedding)?;
    for (group, count) in model.params.group_sizes() {
        writeln!(out, "params.{}={count}", group.as_str())?;
    }
    writeln!(out, "params.total={}", model.params.num_values())?;
    Ok(())
}

fn inspect_embeddings(path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let file = read_embeddings(path)?;
    writeln!(out, "kind=embeddings")?;
    writeln!(out, "dim={}", file.dim)?;
    writeln!(out, "sequences={}", file.len())?;
    writeln!(out, "vectors={}", file.sequences.iter().map(|(_, m)| m.nrows()).sum::<usize>())?;
    match file.value_range() {
        Some((lo, hi)) => writeln!(out, "min={lo}\nmax={hi}")?,
        None => writeln!(out, "min=nan\nmax=nan")?,
    }
    Ok(())
}

fn inspect_dataset(path: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let records = load_dataset(path)?;
    let mut patterns: BTreeMap<String, usize> = BTreeMap::new();
    let mut boundaries: BTreeMap<usize, usize> = BTreeMap::new();
    for r in &records {
        *patterns.entry(r.pattern.to_string()).or_default() += 1;
        *boundaries.entry(r.boundaries().indices().len()).or_default() += 1;
    }
    let tokens: usize = records.iter().map(|r| r.len()).sum();
    writeln!(out, "kind=dataset")?;
    writeln!(out, "records={}", records.len())?;
    writeln!(out, "tokens={tokens}")?;
    for (p, n) in &patterns {
        writeln!(out, "pattern.{p}={n}")?;
    }
    for (b, n) in &boundaries {
        writeln!(out, "boundaries.{b}={n}")?;
    }
    Ok(())
}
