use std::collections::VecDeque;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{HmmEmission, HmmEmissionMode, HmmParams, MemmParams};
use crate::error::{Error, Result};
use crate::model::{Decoder, DecoderKind, ModelConfig, Segmenter};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"HSEGMODL";
pub const MODEL_FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    decoder: DecoderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hmm_emission: Option<HmmEmissionMode>,
    tensors: Vec<TensorMeta>,
}

struct Tensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

fn tensor<T: Scalar>(name: &str, shape: &[usize], values: impl IntoIterator<Item = T>) -> Tensor {
    Tensor {
        name: name.to_string(),
        shape: shape.to_vec(),
        values: values.into_iter().map(|v| v.to_f64_lossy()).collect(),
    }
}

fn collect_tensors<T: Scalar>(model: &Segmenter<T>) -> (Option<HmmEmissionMode>, Vec<Tensor>) {
    let mut out = Vec::new();
    model.params.visit(|info, v| out.push(tensor(&info.name, &info.shape, v.iter().copied())));
    let mut mode = None;
    match &model.decoder {
        Decoder::Crf => {}
        Decoder::Hmm(p) => {
            out.push(tensor("hmm.initial", p.initial.shape(), p.initial.iter().copied()));
            out.push(tensor("hmm.transition", p.transition.shape(), p.transition.iter().copied()));
            match &p.emission {
                HmmEmission::Gaussian { means, variances } => {
                    mode = Some(HmmEmissionMode::Gaussian);
                    out.push(tensor("hmm.means", means.shape(), means.iter().copied()));
                    out.push(tensor("hmm.variances", variances.shape(), variances.iter().copied()));
                }
                HmmEmission::SignCategorical { probs } => {
                    mode = Some(HmmEmissionMode::SignCategorical);
                    out.push(tensor("hmm.probs", probs.shape(), probs.iter().copied()));
                }
            }
        }
        Decoder::Memm(p) => {
            out.push(tensor("memm.weights", p.weights.shape(), p.weights.iter().copied()));
            out.push(tensor("memm.feature_scale", p.feature_scale.shape(), p.feature_scale.iter().copied()));
        }
    }
    (mode, out)
}

/// Serializes a model: magic, version, JSON header, little-endian f64
/// payload, then a SHA-256 digest of everything before it.
pub fn write_model<T: Scalar, W: Write>(mut writer: W, model: &Segmenter<T>) -> Result<()> {
    let (hmm_emission, tensors) = collect_tensors(model);
    let header = Header {
        config: model.config.clone(),
        decoder: model.decoder_kind(),
        hmm_emission,
        tensors: tensors
            .iter()
            .map(|t| TensorMeta {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
    let count: usize = tensors.iter().map(|t| t.values.len()).sum();
    let mut buf = Vec::with_capacity(8 + 4 + 4 + header.len() + 8 + 8 * count + DIGEST_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(count as u64).to_le_bytes());
    for t in &tensors {
        for v in &t.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    writer.write_all(&buf)?;
    writer.flush()?;
    Ok(())
}

pub fn save_model<T: Scalar>(model: &Segmenter<T>, path: impl AsRef<Path>) -> Result<()> {
    write_model(File::create(path)?, model)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("model payload shorter than declared".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

fn take_tensor(queue: &mut VecDeque<Tensor>, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
    match queue.pop_front() {
        Some(t) if t.name == name && t.shape == shape => Ok(t.values),
        Some(t) => Err(Error::Format(format!(
            "expected tensor {name} {shape:?}, found {} {:?}",
            t.name, t.shape
        ))),
        None => Err(Error::Format(format!("missing tensor {name}"))),
    }
}

fn take_shaped(queue: &mut VecDeque<Tensor>, name: &str) -> Result<Tensor> {
    match queue.pop_front() {
        Some(t) if t.name == name => Ok(t),
        Some(t) => Err(Error::Format(format!("expected tensor {name}, found {}", t.name))),
        None => Err(Error::Format(format!("missing tensor {name}"))),
    }
}

fn array2<T: Scalar>(t: Tensor) -> Result<Array2<T>> {
    let [r, c] = t.shape[..] else {
        return Err(Error::Format(format!("{} is not a matrix", t.name)));
    };
    Array2::from_shape_vec((r, c), t.values.into_iter().map(T::of).collect()).map_err(|e| Error::Format(e.to_string()))
}

fn array1<T: Scalar>(t: Tensor) -> Result<Array1<T>> {
    if t.shape.len() != 1 || t.shape[0] != t.values.len() {
        return Err(Error::Format(format!("{} is not a vector", t.name)));
    }
    Ok(t.values.into_iter().map(T::of).collect())
}

pub fn read_model<T: Scalar, R: Read>(mut reader: R) -> Result<Segmenter<T>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN {
        return Err(Error::Checksum);
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum);
    }
    let mut cur = Cursor { bytes: body, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format("not a model file (bad magic)".into()));
    }
    let version = LittleEndian::read_u32(cur.take(4)?);
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let header_len = LittleEndian::read_u32(cur.take(4)?) as usize;
    let header: Header =
        serde_json::from_slice(cur.take(header_len)?).map_err(|e| Error::Format(format!("model header: {e}")))?;
    let count = LittleEndian::read_u64(cur.take(8)?) as usize;
    let declared: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if declared != count {
        return Err(Error::Format(format!("header declares {declared} values, payload has {count}")));
    }
    let payload = cur.take(count.checked_mul(8).ok_or_else(|| Error::Format("payload size overflow".into()))?)?;
    if cur.pos != body.len() {
        return Err(Error::Format("trailing bytes after model payload".into()));
    }
    let mut values = payload.chunks_exact(8).map(LittleEndian::read_f64);
    let mut queue: VecDeque<Tensor> = header
        .tensors
        .into_iter()
        .map(|m| {
            let n = m.shape.iter().product();
            Tensor {
                name: m.name,
                shape: m.shape,
                values: values.by_ref().take(n).collect(),
            }
        })
        .collect();

    let mut model = Segmenter::<T>::new(header.config, 0)?;
    let mut failure = None;
    model.params.visit_mut(|info, slot| {
        if failure.is_some() {
            return;
        }
        match take_tensor(&mut queue, &info.name, &info.shape) {
            Ok(v) => slot.iter_mut().zip(v).for_each(|(s, v)| *s = T::of(v)),
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    model.decoder = match header.decoder {
        DecoderKind::Crf => Decoder::Crf,
        DecoderKind::Hmm => {
            let initial = array1(take_shaped(&mut queue, "hmm.initial")?)?;
            let transition = array2(take_shaped(&mut queue, "hmm.transition")?)?;
            let emission = match header.hmm_emission {
                Some(HmmEmissionMode::Gaussian) => HmmEmission::Gaussian {
                    means: array2(take_shaped(&mut queue, "hmm.means")?)?,
                    variances: array2(take_shaped(&mut queue, "hmm.variances")?)?,
                },
                Some(HmmEmissionMode::SignCategorical) => HmmEmission::SignCategorical {
                    probs: array2(take_shaped(&mut queue, "hmm.probs")?)?,
                },
                None => return Err(Error::Format("HMM decoder without an emission mode".into())),
            };
            Decoder::Hmm(HmmParams {
                initial,
                transition,
                emission,
            })
        }
        DecoderKind::Memm => {
            let w = take_shaped(&mut queue, "memm.weights")?;
            let [a, b, c] = w.shape[..] else {
                return Err(Error::Format("memm.weights is not 3-dimensional".into()));
            };
            let weights = Array3::from_shape_vec((a, b, c), w.values.into_iter().map(T::of).collect())
                .map_err(|e| Error::Format(e.to_string()))?;
            let feature_scale = array1(take_shaped(&mut queue, "memm.feature_scale")?)?;
            Decoder::Memm(MemmParams { weights, feature_scale })
        }
    };
    if let Some(t) = queue.front() {
        return Err(Error::Format(format!("unexpected tensor {}", t.name)));
    }
    Ok(model)
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Segmenter<T>> {
    read_model(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::baselines::LabeledFeatures;
    use crate::emissions::{EmbeddingSource, InitScheme};
    use crate::model::DecoderFitConfig;

    fn model() -> Segmenter<f64> {
        let config = ModelConfig {
            input_dim: 3,
            hidden_dim: 4,
            num_layers: 2,
            num_labels: 2,
            head_init: InitScheme::Xavier,
            embedding: EmbeddingSource::FileBacked,
        };
        let mut m = Segmenter::new(config, 8).unwrap();
        m.params.crf.transitions[[0, 1]] = -0.375;
        m
    }

    fn probe(seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((9, 3), |_| rng.random_range(-2.0..2.0));
        (x, (0..9).map(|t| usize::from(t > 4)).collect())
    }

    fn bytes(m: &Segmenter<f64>) -> Vec<u8> {
        let mut buf = Vec::new();
        write_model(&mut buf, m).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let back: Segmenter<f64> = read_model(bytes(&m).as_slice()).unwrap();
        assert_eq!(back, m);
        let (x, y) = probe(1);
        assert_eq!(back.decode(&x).unwrap(), m.decode(&x).unwrap());
        assert_eq!(back.nll(&x, &y).unwrap().to_bits(), m.nll(&x, &y).unwrap().to_bits());
        assert_eq!(bytes(&back), bytes(&m));
    }

    #[test]
    fn decoders_round_trip() {
        let data: Vec<LabeledFeatures<f64>> = (0..6)
            .map(|s| {
                let (features, labels) = probe(s);
                LabeledFeatures { features, labels }
            })
            .collect();
        for kind in [DecoderKind::Hmm, DecoderKind::Memm] {
            let mut m = model();
            m.fit_decoder(kind, &data, &DecoderFitConfig::default()).unwrap();
            let back: Segmenter<f64> = read_model(bytes(&m).as_slice()).unwrap();
            assert_eq!(back, m);
        }
        let mut m = model();
        let cfg = DecoderFitConfig {
            hmm_mode: HmmEmissionMode::SignCategorical,
            ..Default::default()
        };
        m.fit_decoder(DecoderKind::Hmm, &data, &cfg).unwrap();
        assert_eq!(read_model::<f64, _>(bytes(&m).as_slice()).unwrap(), m);
    }

    #[test]
    fn corruption_and_truncation_detected() {
        let b = bytes(&model());
        assert!(matches!(read_model::<f64, _>(&b[..b.len() - 10]), Err(Error::Checksum)));
        assert!(matches!(read_model::<f64, _>(&b[..5]), Err(Error::Checksum)));
        let mut flipped = b.clone();
        flipped[b.len() / 2] ^= 1;
        assert!(matches!(read_model::<f64, _>(flipped.as_slice()), Err(Error::Checksum)));
    }

    #[test]
    fn version_is_checked() {
        let mut b = bytes(&model());
        b[8] = 2;
        let body_len = b.len() - DIGEST_LEN;
        let digest = Sha256::digest(&b[..body_len]);
        b[body_len..].copy_from_slice(&digest);
        assert!(matches!(
            read_model::<f64, _>(b.as_slice()),
            Err(Error::Version { found: 2, expected: 1 })
        ));
    }
}
