//! The assembled segmenter: BiGRU emissions, linear head and a sequence
//! decoder (CRF by default, HMM or MEMM over the same emission features).

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    hmm_decode, hmm_fit, memm_decode, memm_fit, HmmEmissionMode, HmmParams, LabeledFeatures,
    MemmConfig, MemmParams,
};
use crate::crf::{
    nll_loss, nll_with_grad, posterior_marginals, viterbi_decode, CrfParams, EmissionScores,
};
use crate::emissions::{
    bigru_forward, emissions_backward, head_forward, BiGruParams, DropoutPolicy, EmbeddingSource,
    EmbeddingTable, ForwardCache, InitScheme,
};
use crate::error::{Error, Result};
use crate::labels::{LabelSequence, MixedTextRecord};
use crate::metrics::{
    top_k_boundaries, BoundaryEvidence, Prediction, Predictor, DEFAULT_BOUNDARY_THRESHOLD,
};
use crate::scalar::Scalar;

/// Learning-rate group of a parameter, ordered from input side to output side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupId {
    Embeddings,
    LowerEncoder,
    UpperEncoderNn,
    HeadCrf,
}

impl GroupId {
    pub const ALL: [GroupId; 4] = [
        GroupId::Embeddings,
        GroupId::LowerEncoder,
        GroupId::UpperEncoderNn,
        GroupId::HeadCrf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GroupId::Embeddings => "embeddings",
            GroupId::LowerEncoder => "lower_encoder",
            GroupId::UpperEncoderNn => "upper_encoder_nn",
            GroupId::HeadCrf => "head_crf",
        }
    }

    /// Group of BiGRU layer `layer` in a stack of `num_layers`.
    pub fn for_layer(layer: usize, num_layers: usize) -> Self {
        if layer < num_layers / 2 {
            GroupId::LowerEncoder
        } else {
            GroupId::UpperEncoderNn
        }
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Weight decay applies to `Weight` tensors only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Transition,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub group: GroupId,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
}

/// Every trainable tensor of the segmenter. Also used for gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmenterParams<T> {
    pub network: BiGruParams<T>,
    pub crf: CrfParams<T>,
}

fn info(name: String, group: GroupId, kind: ParamKind, shape: &[usize]) -> ParamInfo {
    ParamInfo {
        name,
        group,
        kind,
        shape: shape.to_vec(),
    }
}

impl<T: Scalar> SegmenterParams<T> {
    pub fn zeros_like(&self) -> Self {
        Self {
            network: self.network.zeros_like(),
            crf: CrfParams::zeros(self.crf.num_labels()),
        }
    }

    /// Calls `f` on every tensor in a fixed order.
    pub fn visit(&self, mut f: impl FnMut(&ParamInfo, &[T])) {
        let num_layers = self.network.layers.len();
        for (l, layer) in self.network.layers.iter().enumerate() {
            let group = GroupId::for_layer(l, num_layers);
            for (dir, cell) in [("fwd", &layer.forward), ("bwd", &layer.backward)] {
                for (gate_name, gate) in cell.gates() {
                    let p = format!("encoder.{l}.{dir}.{gate_name}");
                    f(
                        &info(
                            format!("{p}.input"),
                            group,
                            ParamKind::Weight,
                            gate.input.shape(),
                        ),
                        gate.input.as_slice().expect("standard layout"),
                    );
                    f(
                        &info(
                            format!("{p}.recurrent"),
                            group,
                            ParamKind::Weight,
                            gate.recurrent.shape(),
                        ),
                        gate.recurrent.as_slice().expect("standard layout"),
                    );
                    f(
                        &info(
                            format!("{p}.bias"),
                            group,
                            ParamKind::Bias,
                            gate.bias.shape(),
                        ),
                        gate.bias.as_slice().expect("standard layout"),
                    );
                }
            }
        }
        let n = &self.network;
        let c = &self.crf;
        let head = GroupId::HeadCrf;
        f(
            &info(
                "head.weights".into(),
                head,
                ParamKind::Weight,
                n.head_weights.shape(),
            ),
            n.head_weights.as_slice().expect("standard layout"),
        );
        f(
            &info(
                "head.bias".into(),
                head,
                ParamKind::Bias,
                n.head_bias.shape(),
            ),
            n.head_bias.as_slice().expect("standard layout"),
        );
        f(
            &info(
                "crf.transitions".into(),
                head,
                ParamKind::Transition,
                c.transitions.shape(),
            ),
            c.transitions.as_slice().expect("standard layout"),
        );
        f(
            &info(
                "crf.start".into(),
                head,
                ParamKind::Transition,
                c.start_scores.shape(),
            ),
            c.start_scores.as_slice().expect("standard layout"),
        );
        f(
            &info(
                "crf.end".into(),
                head,
                ParamKind::Transition,
                c.end_scores.shape(),
            ),
            c.end_scores.as_slice().expect("standard layout"),
        );
    }

    /// Mutable counterpart of [`visit`](Self::visit), same order.
    pub fn visit_mut(&mut self, mut f: impl FnMut(&ParamInfo, &mut [T])) {
        let num_layers = self.network.layers.len();
        for (l, layer) in self.network.layers.iter_mut().enumerate() {
            let group = GroupId::for_layer(l, num_layers);
            for (dir, cell) in [("fwd", &mut layer.forward), ("bwd", &mut layer.backward)] {
                for (gate_name, gate) in cell.gates_mut() {
                    let p = format!("encoder.{l}.{dir}.{gate_name}");
                    let shape = gate.input.shape().to_vec();
                    f(
                        &info(format!("{p}.input"), group, ParamKind::Weight, &shape),
                        gate.input.as_slice_mut().expect("standard layout"),
                    );
                    let shape = gate.recurrent.shape().to_vec();
                    f(
                        &info(format!("{p}.recurrent"), group, ParamKind::Weight, &shape),
                        gate.recurrent.as_slice_mut().expect("standard layout"),
                    );
                    let shape = gate.bias.shape().to_vec();
                    f(
                        &info(format!("{p}.bias"), group, ParamKind::Bias, &shape),
                        gate.bias.as_slice_mut().expect("standard layout"),
                    );
                }
            }
        }
        let head = GroupId::HeadCrf;
        let n = &mut self.network;
        let shape = n.head_weights.shape().to_vec();
        f(
            &info("head.weights".into(), head, ParamKind::Weight, &shape),
            n.head_weights.as_slice_mut().expect("standard layout"),
        );
        let shape = n.head_bias.shape().to_vec();
        f(
            &info("head.bias".into(), head, ParamKind::Bias, &shape),
            n.head_bias.as_slice_mut().expect("standard layout"),
        );
        let c = &mut self.crf;
        let shape = c.transitions.shape().to_vec();
        f(
            &info(
                "crf.transitions".into(),
                head,
                ParamKind::Transition,
                &shape,
            ),
            c.transitions.as_slice_mut().expect("standard layout"),
        );
        let shape = c.start_scores.shape().to_vec();
        f(
            &info("crf.start".into(), head, ParamKind::Transition, &shape),
            c.start_scores.as_slice_mut().expect("standard layout"),
        );
        let shape = c.end_scores.shape().to_vec();
        f(
            &info("crf.end".into(), head, ParamKind::Transition, &shape),
            c.end_scores.as_slice_mut().expect("standard layout"),
        );
    }

    pub fn infos(&self) -> Vec<ParamInfo> {
        let mut out = Vec::new();
        self.visit(|i, _| out.push(i.clone()));
        out
    }

    pub fn num_values(&self) -> usize {
        let mut n = 0;
        self.visit(|_, v| n += v.len());
        n
    }

    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_values());
        self.visit(|_, v| out.extend_from_slice(v));
        out
    }

    pub fn assign_flat(&mut self, flat: &[T]) -> Result<()> {
        let expected = self.num_values();
        if flat.len() != expected {
            return Err(Error::LengthMismatch {
                what: "flat parameter vector",
                expected,
                actual: flat.len(),
            });
        }
        let mut offset = 0;
        self.visit_mut(|_, v| {
            v.copy_from_slice(&flat[offset..offset + v.len()]);
            offset += v.len();
        });
        Ok(())
    }

    /// Number of values per learning-rate group (embeddings are frozen and
    /// always report 0).
    pub fn group_sizes(&self) -> [(GroupId, usize); 4] {
        let mut sizes = GroupId::ALL.map(|g| (g, 0usize));
        self.visit(|i, v| {
            let slot = sizes
                .iter_mut()
                .find(|(g, _)| *g == i.group)
                .expect("known group");
            slot.1 += v.len();
        });
        sizes
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(|_, v| ok &= v.iter().all(|x| x.is_finite()));
        ok
    }
}

/// Which sequence model turns emission scores into labels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    #[default]
    Crf,
    Hmm,
    Memm,
}

impl DecoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DecoderKind::Crf => "crf",
            DecoderKind::Hmm => "hmm",
            DecoderKind::Memm => "memm",
        }
    }
}

impl FromStr for DecoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "crf" => Ok(DecoderKind::Crf),
            "hmm" => Ok(DecoderKind::Hmm),
            "memm" => Ok(DecoderKind::Memm),
            other => Err(Error::Invalid(format!(
                "unknown decoder `{other}` (expected crf, hmm or memm)"
            ))),
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decoder<T> {
    Crf,
    Hmm(HmmParams<T>),
    Memm(MemmParams<T>),
}

impl<T> Decoder<T> {
    pub fn kind(&self) -> DecoderKind {
        match self {
            Decoder::Crf => DecoderKind::Crf,
            Decoder::Hmm(_) => DecoderKind::Hmm,
            Decoder::Memm(_) => DecoderKind::Memm,
        }
    }
}

/// Settings for fitting an HMM or MEMM decoder on emission features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderFitConfig {
    pub smoothing: f64,
    pub hmm_mode: HmmEmissionMode,
    pub memm: MemmConfig,
}

impl Default for DecoderFitConfig {
    fn default() -> Self {
        Self {
            smoothing: 1.0,
            hmm_mode: HmmEmissionMode::Gaussian,
            memm: MemmConfig::default(),
        }
    }
}

/// Architecture of a segmenter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_labels: usize,
    pub head_init: InitScheme,
    pub embedding: EmbeddingSource,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.hidden_dim == 0
            || self.num_layers == 0
            || self.num_labels < 2
        {
            return Err(Error::Invalid(format!("invalid model config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segmenter<T> {
    pub config: ModelConfig,
    pub params: SegmenterParams<T>,
    pub decoder: Decoder<T>,
}

impl<T: Scalar> Segmenter<T> {
    /// Freshly initialized network, zero CRF scores, CRF decoder.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let network = BiGruParams::init(
            config.input_dim,
            config.hidden_dim,
            config.num_layers,
            config.num_labels,
            config.head_init,
            seed,
        );
        Ok(Self {
            params: SegmenterParams {
                network,
                crf: CrfParams::zeros(config.num_labels),
            },
            config,
            decoder: Decoder::Crf,
        })
    }

    pub fn decoder_kind(&self) -> DecoderKind {
        self.decoder.kind()
    }

    fn check_dim(&self, embeddings: &Array2<T>) -> Result<()> {
        if embeddings.ncols() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "embedding dim {} does not match the model's input dim {}",
                embeddings.ncols(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    /// Emission scores in inference mode (no dropout).
    pub fn emissions(&self, embeddings: &Array2<T>) -> Result<EmissionScores<T>> {
        self.check_dim(embeddings)?;
        let (hidden, _) = bigru_forward(
            embeddings,
            &self.params.network,
            &DropoutPolicy::off(),
            false,
            &mut inert_rng(),
        )?;
        head_forward(&hidden, &self.params.network)
    }

    /// Training-mode forward pass; keep the cache for [`backward`](Self::backward).
    pub fn forward_train<R: Rng>(
        &self,
        embeddings: &Array2<T>,
        dropout: &DropoutPolicy,
        rng: &mut R,
    ) -> Result<(EmissionScores<T>, ForwardCache<T>)> {
        self.check_dim(embeddings)?;
        let (hidden, cache) = bigru_forward(embeddings, &self.params.network, dropout, true, rng)?;
        Ok((head_forward(&hidden, &self.params.network)?, cache))
    }

    /// Network gradients from the emission-score gradient of one record.
    pub fn backward(
        &self,
        grad_emissions: &Array2<T>,
        cache: &ForwardCache<T>,
    ) -> Result<BiGruParams<T>> {
        emissions_backward(grad_emissions, cache, &self.params.network).map(|(g, _)| g)
    }

    /// CRF negative log-likelihood of `labels`, inference mode.
    pub fn nll(&self, embeddings: &Array2<T>, labels: &[usize]) -> Result<T> {
        nll_loss(&self.emissions(embeddings)?, &self.params.crf, labels)
    }

    /// CRF NLL and its gradient with respect to every parameter, without
    /// dropout.
    pub fn loss_and_gradients(
        &self,
        embeddings: &Array2<T>,
        labels: &[usize],
    ) -> Result<(T, SegmenterParams<T>)> {
        self.check_dim(embeddings)?;
        let (hidden, cache) = bigru_forward(
            embeddings,
            &self.params.network,
            &DropoutPolicy::off(),
            false,
            &mut inert_rng(),
        )?;
        let em = head_forward(&hidden, &self.params.network)?;
        let (loss, g) = nll_with_grad(&em, &self.params.crf, labels)?;
        let network = self.backward(&g.emissions, &cache)?;
        Ok((
            loss,
            SegmenterParams {
                network,
                crf: g.crf,
            },
        ))
    }

    /// Labels from the active decoder.
    pub fn decode(&self, embeddings: &Array2<T>) -> Result<LabelSequence> {
        let em = self.emissions(embeddings)?;
        self.decode_emissions(&em)
    }

    fn decode_emissions(&self, em: &EmissionScores<T>) -> Result<LabelSequence> {
        match &self.decoder {
            Decoder::Crf => viterbi_decode(em, &self.params.crf).map(|(y, _)| y),
            Decoder::Hmm(p) => hmm_decode(p, &em.scores),
            Decoder::Memm(p) => memm_decode(p, &em.scores),
        }
    }

    /// Decoded labels and up to `k` of their transitions. The CRF decoder
    /// ranks them by posterior change probability; HMM and MEMM transitions
    /// all have confidence 1 and fall back to index order.
    pub fn predict(&self, embeddings: &Array2<T>, k: usize) -> Result<Prediction> {
        let em = self.emissions(embeddings)?;
        let labels = self.decode_emissions(&em)?;
        match self.decoder {
            Decoder::Crf => {
                let marg = posterior_marginals(&em, &self.params.crf)?;
                let change: Vec<f64> = (1..em.len())
                    .map(|t| marg.change_probability(t).to_f64_lossy())
                    .collect();
                let top_k = top_k_boundaries(
                    BoundaryEvidence::ScoredLabels {
                        labels: &labels,
                        change: &change,
                    },
                    k,
                    DEFAULT_BOUNDARY_THRESHOLD,
                );
                Ok(Prediction { labels, top_k })
            }
            _ => Ok(Prediction::from_labels(labels, k)),
        }
    }

    /// Inference-mode emission scores paired with gold labels, as features
    /// for fitting an HMM or MEMM decoder.
    pub fn decoder_features(
        &self,
        examples: &[LabeledFeatures<T>],
    ) -> Result<Vec<LabeledFeatures<T>>> {
        examples
            .iter()
            .map(|ex| {
                Ok(LabeledFeatures {
                    features: self.emissions(&ex.features)?.scores,
                    labels: ex.labels.clone(),
                })
            })
            .collect()
    }

    /// Replaces the decoder. HMM and MEMM decoders are fitted on this
    /// network's emission scores for `examples` (embeddings + gold labels).
    pub fn fit_decoder(
        &mut self,
        kind: DecoderKind,
        examples: &[LabeledFeatures<T>],
        config: &DecoderFitConfig,
    ) -> Result<()> {
        let l = self.config.num_labels;
        self.decoder = match kind {
            DecoderKind::Crf => Decoder::Crf,
            DecoderKind::Hmm => {
                let feats = self.decoder_features(examples)?;
                Decoder::Hmm(hmm_fit(&feats, l, config.smoothing, config.hmm_mode)?)
            }
            DecoderKind::Memm => {
                let feats = self.decoder_features(examples)?;
                Decoder::Memm(memm_fit(&feats, l, &config.memm)?)
            }
        };
        Ok(())
    }
}

/// Never drawn from: dropout is off outside training.
fn inert_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

/// A segmenter bound to an embedding table, usable with `metrics::evaluate`.
pub struct SegmenterPredictor<'a, T> {
    pub model: &'a Segmenter<T>,
    pub table: &'a EmbeddingTable,
}

impl<T: Scalar> Predictor for SegmenterPredictor<'_, T> {
    fn predict(&self, record: &MixedTextRecord, k: usize) -> Result<Prediction> {
        let emb = self.table.embed_record::<T>(record)?;
        self.model.predict(&emb, k)
    }
}
