use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::labels::MixedTextRecord;
use crate::scalar::Scalar;

/// Where token vectors come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum EmbeddingSource {
    /// Vectors read from an embedding file, keyed by record or token.
    FileBacked,
    /// Seeded Gaussian vectors derived from a hash of each token string.
    Hashed { seed: u64 },
}

/// Frozen token representations consumed by the emission network.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    source: EmbeddingSource,
    vectors: BTreeMap<String, Array2<f32>>,
}

impl EmbeddingTable {
    pub fn hashed(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        Self {
            dim,
            source: EmbeddingSource::Hashed { seed },
            vectors: BTreeMap::new(),
        }
    }

    /// Table over keyed `n x dim` blocks. A key may name a whole record (one
    /// row per token) or a single token (one row).
    pub fn file_backed(dim: usize, vectors: BTreeMap<String, Array2<f32>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("embedding dim must be positive".into()));
        }
        if let Some((key, m)) = vectors.iter().find(|(_, m)| m.ncols() != dim) {
            return Err(Error::Shape(format!(
                "embedding `{key}` has dim {}, table dim is {dim}",
                m.ncols()
            )));
        }
        Ok(Self {
            dim,
            source: EmbeddingSource::FileBacked,
            vectors,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&Array2<f32>> {
        self.vectors.get(key)
    }

    /// Vectors for a whole record: the block stored under its embedding key
    /// when present, otherwise per-token lookup.
    pub fn embed_record<T: Scalar>(&self, record: &MixedTextRecord) -> Result<Array2<T>> {
        if self.source == EmbeddingSource::FileBacked {
            if let Some(block) = self.vectors.get(record.embedding_key()) {
                if block.nrows() != record.len() {
                    return Err(Error::Shape(format!(
                        "embedding `{}` has {} rows for {} tokens",
                        record.embedding_key(),
                        block.nrows(),
                        record.len()
                    )));
                }
                return Ok(block.mapv(|v| T::of(v as f64)));
            }
        }
        lookup_embeddings(&record.tokens, self)
    }

    fn hashed_vector<T: Scalar>(&self, seed: u64, token: &str) -> impl Iterator<Item = T> {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update(token.as_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(key);
        (0..self.dim).map(move |_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            T::of(v)
        })
    }
}

/// One row per token.
pub fn lookup_embeddings<T: Scalar>(
    tokens: &[String],
    table: &EmbeddingTable,
) -> Result<Array2<T>> {
    let mut out = Array2::zeros((tokens.len(), table.dim));
    for (t, token) in tokens.iter().enumerate() {
        match table.source {
            EmbeddingSource::Hashed { seed } => {
                for (slot, v) in out
                    .row_mut(t)
                    .iter_mut()
                    .zip(table.hashed_vector(seed, token))
                {
                    *slot = v;
                }
            }
            EmbeddingSource::FileBacked => {
                let block = table
                    .vectors
                    .get(token)
                    .filter(|b| b.nrows() == 1)
                    .ok_or_else(|| Error::MissingEmbedding(token.clone()))?;
                out.row_mut(t)
                    .assign(&block.row(0).mapv(|v| T::of(v as f64)));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    fn tokens(words: &[&str]) -> Vec<String> {
        words.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn hashed_lookup_is_deterministic() {
        let table = EmbeddingTable::hashed(64, 7);
        let e: Array2<f64> = lookup_embeddings(&tokens(&["the", "cat", "the"]), &table).unwrap();
        assert_eq!(e.row(0), e.row(2));
        assert_ne!(e.row(0), e.row(1));
        let again: Array2<f64> = lookup_embeddings(&tokens(&["the"]), &table).unwrap();
        assert_eq!(again.row(0), e.row(0));
        let other: Array2<f64> =
            lookup_embeddings(&tokens(&["the"]), &EmbeddingTable::hashed(64, 8)).unwrap();
        assert_ne!(other.row(0), e.row(0));
    }

    #[test]
    fn file_backed_token_lookup() {
        let mut map = BTreeMap::new();
        map.insert("a".to_string(), array![[1.0f32, 2.0]]);
        map.insert("b".to_string(), array![[0.5f32, -0.25]]);
        let table = EmbeddingTable::file_backed(2, map).unwrap();
        let e: Array2<f64> = lookup_embeddings(&tokens(&["b", "a"]), &table).unwrap();
        assert_eq!(e, array![[0.5, -0.25], [1.0, 2.0]]);
        assert!(matches!(
            lookup_embeddings::<f64>(&tokens(&["zzz"]), &table),
            Err(Error::MissingEmbedding(k)) if k == "zzz"
        ));
    }

    #[test]
    fn file_backed_rejects_wrong_dim() {
        let mut map = BTreeMap::new();
        map.insert("a".to_string(), array![[1.0f32, 2.0, 3.0]]);
        assert!(EmbeddingTable::file_backed(2, map).is_err());
    }
}
