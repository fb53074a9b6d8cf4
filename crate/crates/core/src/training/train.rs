use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::LabeledFeatures;
use crate::crf::nll_with_grad;
use crate::emissions::{DropoutPolicy, EmbeddingTable};
use crate::error::{Error, Result};
use crate::labels::{validate_record_with, Hyperparameters, MixedTextRecord};
use crate::model::{Segmenter, SegmenterParams};
use crate::scalar::Scalar;
use crate::training::{
    clip_gradients, optimizer_step, LearningRates, OptimizerConfig, OptimizerState,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hyper: Hyperparameters,
    pub learning_rates: LearningRates,
    pub optimizer: OptimizerConfig,
    /// Drives the shuffle order.
    pub seed: u64,
    pub dropout: DropoutPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let hyper = Hyperparameters::default();
        Self {
            learning_rates: LearningRates::Llrd(hyper.llrd_rates),
            hyper,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            dropout: DropoutPolicy::per_layer(0.1, 0.3, 0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.learning_rates.validate()?;
        if !self.dropout.is_valid() {
            return Err(Error::Invalid(format!(
                "invalid dropout policy {:?}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Summary of one training epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Summed (not averaged) CRF negative log-likelihood over the epoch.
    pub loss: f64,
    /// Token accuracy of Viterbi decoding on the dev set, if one was given.
    pub dev_accuracy: Option<f64>,
    pub seconds: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} loss={:.6}", self.epoch, self.loss)?;
        match self.dev_accuracy {
            Some(a) => write!(f, " dev_accuracy={a:.6}")?,
            None => write!(f, " dev_accuracy=nan")?,
        }
        write!(f, " seconds={:.3}", self.seconds)
    }
}

/// Validates records and looks up their embeddings.
pub fn prepare_examples<T: Scalar>(
    records: &[MixedTextRecord],
    table: &EmbeddingTable,
    max_len: usize,
) -> Result<Vec<LabeledFeatures<T>>> {
    let mut bad: Vec<Error> = records
        .iter()
        .filter_map(|r| {
            let violations = validate_record_with(r, max_len);
            (!violations.is_empty()).then(|| Error::Validation {
                id: r.id.clone(),
                violations,
            })
        })
        .collect();
    if !bad.is_empty() {
        for e in &bad[1..] {
            log::error!("{e}");
        }
        return Err(bad.swap_remove(0));
    }
    records
        .iter()
        .map(|r| {
            Ok(LabeledFeatures {
                features: table.embed_record(r)?,
                labels: r.gold_labels.0.clone(),
            })
        })
        .collect()
}

/// Token accuracy of the model's current decoder over `examples`.
pub fn dev_accuracy<T: Scalar>(
    model: &Segmenter<T>,
    examples: &[LabeledFeatures<T>],
) -> Result<Option<f64>> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for ex in examples {
        let pred = model.decode(&ex.features)?;
        correct += pred.iter().zip(&ex.labels).filter(|(a, b)| a == b).count();
        total += ex.labels.len();
    }
    Ok((total > 0).then(|| correct as f64 / total as f64))
}

/// Mean CRF loss gradient over one batch and the summed loss.
///
/// Each record runs through the network at its own length; emission scores
/// are then right-padded to the longest record and the CRF sees the mask.
/// Records are reduced in batch order.
fn batch_gradients<T: Scalar>(
    model: &Segmenter<T>,
    batch: &[&LabeledFeatures<T>],
    dropout: &DropoutPolicy,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, SegmenterParams<T>)> {
    let width = batch
        .iter()
        .map(|ex| ex.features.nrows())
        .max()
        .unwrap_or(0);
    let mut grads = model.params.zeros_like();
    let mut loss = 0.0;
    for ex in batch {
        let (em, cache) = model.forward_train(&ex.features, dropout, rng)?;
        let padded = em.padded(width);
        let (l, g) = nll_with_grad(&padded, &model.params.crf, &ex.labels)?;
        loss += l.to_f64_lossy();
        let n = ex.features.nrows();
        let net = model.backward(&g.emissions.slice(ndarray::s![..n, ..]).to_owned(), &cache)?;
        let mut offset = 0;
        let flat_net = SegmenterParams {
            network: net,
            crf: g.crf,
        }
        .to_flat();
        grads.visit_mut(|_, acc| {
            for (a, v) in acc.iter_mut().zip(&flat_net[offset..]) {
                *a += *v;
            }
            offset += acc.len();
        });
    }
    let scale = T::of(1.0 / batch.len() as f64);
    grads.visit_mut(|_, g| g.iter_mut().for_each(|v| *v *= scale));
    Ok((loss, grads))
}

/// Minimizes the CRF negative log-likelihood. Deterministic for a given
/// config: the shuffle, dropout masks and reduction order are all fixed by
/// the seeds. `on_epoch` sees each log as soon as the epoch finishes.
pub fn train<T: Scalar>(
    mut model: Segmenter<T>,
    train_set: &[LabeledFeatures<T>],
    dev_set: &[LabeledFeatures<T>],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(Segmenter<T>, Vec<EpochLog>)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for ex in train_set.iter().chain(dev_set) {
        if ex.features.nrows() != ex.labels.len() {
            return Err(Error::LengthMismatch {
                what: "embedding rows vs labels",
                expected: ex.labels.len(),
                actual: ex.features.nrows(),
            });
        }
    }
    let hyper = &config.hyper;
    let mut state = OptimizerState::new(&model.params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.dropout.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut logs = Vec::with_capacity(hyper.epochs);

    for epoch in 1..=hyper.epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let batch: Vec<&LabeledFeatures<T>> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, mut grads) =
                batch_gradients(&model, &batch, &config.dropout, &mut dropout_rng).map_err(
                    |e| {
                        if e.is_numerical() {
                            Error::Divergence(format!("{e} in epoch {epoch}, batch {b}"))
                        } else {
                            e
                        }
                    },
                )?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss in epoch {epoch}, batch {b}"
                )));
            }
            clip_gradients(&mut grads, hyper.gradient_clip)
                .map_err(|e| Error::NonFinite(format!("{e} in epoch {epoch}, batch {b}")))?;
            optimizer_step(
                &mut model.params,
                &grads,
                &config.learning_rates,
                hyper.weight_decay,
                &config.optimizer,
                &mut state,
            )?;
            epoch_loss += loss;
        }
        let log = EpochLog {
            epoch,
            loss: epoch_loss,
            dev_accuracy: dev_accuracy(&model, dev_set)?,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!("{log}");
        on_epoch(&log);
        logs.push(log);
    }
    Ok((model, logs))
}
