use ndarray::{Array1, Array2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingFile;
use crate::error::{Error, Result};
use crate::labels::{segment_labels_to_token_labels, MixedTextRecord, Pattern, TokenSequence};

const VOCAB_SIZE: usize = 5000;

/// Synthetic hybrid-text corpus.
///
/// Token vectors are `N(mu_y, I)` with `mu_y = (2y - 1) * (delta / 2) * u`,
/// where `u` is a random unit vector fixed by `style_seed`, so the class means
/// are `delta` standard deviations apart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    /// Fixes the class means; corpora meant to be used together must share it.
    pub style_seed: u64,
    pub num_records: usize,
    pub pattern_weights: Vec<(Pattern, f64)>,
    pub min_len: usize,
    pub max_len: usize,
    pub min_segment_len: usize,
    pub delta: f64,
    pub dim: usize,
    /// Prefix of generated record ids.
    pub id_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            style_seed: 7,
            num_records: 100,
            pattern_weights: Pattern::ALL.iter().map(|&p| (p, 1.0)).collect(),
            min_len: 60,
            max_len: 120,
            min_segment_len: 8,
            delta: 3.0,
            dim: 8,
            id_prefix: "synth".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            problems.push(format!("delta must be finite and >= 0, got {}", self.delta));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            problems.push(format!("invalid length range {}..={}", self.min_len, self.max_len));
        }
        if self.dim == 0 {
            problems.push("dim must be positive".into());
        }
        if self.min_segment_len == 0 {
            problems.push("min_segment_len must be positive".into());
        }
        if self.pattern_weights.is_empty()
            || self.pattern_weights.iter().any(|(_, w)| !(*w >= 0.0 && w.is_finite()))
            || self.pattern_weights.iter().all(|(_, w)| *w == 0.0)
        {
            problems.push("pattern weights must be non-negative with a positive total".into());
        }
        for (p, w) in &self.pattern_weights {
            if *w > 0.0 && p.num_segments() * self.min_segment_len > self.min_len {
                problems.push(format!(
                    "pattern {p} needs {} tokens but min_len is {}",
                    p.num_segments() * self.min_segment_len,
                    self.min_len
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(problems.join("; ")))
        }
    }

    /// Class means, row `y` for label `y`.
    pub fn class_means(&self) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.style_seed);
        let mut u: Array1<f64> = (0..self.dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = u.dot(&u).sqrt();
        if norm > 0.0 {
            u /= norm;
        } else {
            u[0] = 1.0;
        }
        let half = self.delta / 2.0;
        let mut means = Array2::zeros((2, self.dim));
        means.row_mut(0).assign(&(&u * -half));
        means.row_mut(1).assign(&(&u * half));
        means
    }
}

/// Segment lengths of at least `min` summing to `n`, uniformly placed cuts.
fn segment_lengths(rng: &mut ChaCha8Rng, n: usize, segments: usize, min: usize) -> Vec<usize> {
    let slack = n - segments * min;
    let mut cuts: Vec<usize> = (0..segments - 1).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut prev = 0;
    let mut out = Vec::with_capacity(segments);
    for c in cuts.into_iter().chain([slack]) {
        out.push(min + c - prev);
        prev = c;
    }
    out
}

/// Deterministic corpus and matching embeddings (keyed by record id).
pub fn synth_generate(config: &SynthConfig) -> Result<(Vec<MixedTextRecord>, EmbeddingFile)> {
    config.validate()?;
    let means = config.class_means();
    let weights = WeightedIndex::new(config.pattern_weights.iter().map(|(_, w)| *w))
        .map_err(|e| Error::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::with_capacity(config.num_records);
    let mut file = EmbeddingFile::new(config.dim);
    for i in 0..config.num_records {
        let pattern = config.pattern_weights[weights.sample(&mut rng)].0;
        let n = rng.random_range(config.min_len..=config.max_len);
        let lengths = segment_lengths(&mut rng, n, pattern.num_segments(), config.min_segment_len);
        let labels = segment_labels_to_token_labels(&pattern.segment_labels(), &lengths)?;
        let tokens = TokenSequence((0..n).map(|_| format!("w{}", rng.random_range(0..VOCAB_SIZE))).collect());
        let mut values = Array2::<f32>::zeros((n, config.dim));
        for (t, &y) in labels.iter().enumerate() {
            for j in 0..config.dim {
                let z: f64 = rng.sample(StandardNormal);
                values[[t, j]] = (means[[y, j]] + z) as f32;
            }
        }
        let id = format!("{}-{i:05}", config.id_prefix);
        file.push(id.clone(), values)?;
        records.push(MixedTextRecord {
            id,
            tokens,
            gold_labels: labels,
            pattern,
            embedding_key: None,
        });
    }
    Ok((records, file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::validate_record;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            num_records: 40,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = synth_generate(&small(42)).unwrap();
        let b = synth_generate(&small(42)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, synth_generate(&small(43)).unwrap().0);
    }

    #[test]
    fn records_are_valid_and_in_range() {
        let (records, emb) = synth_generate(&small(1)).unwrap();
        assert_eq!(emb.len(), records.len());
        for (r, (key, v)) in records.iter().zip(&emb.sequences) {
            assert!(validate_record(r).is_empty(), "{:?}", validate_record(r));
            assert!((60..=120).contains(&r.len()));
            assert_eq!(r.boundaries().len(), r.pattern.num_boundaries());
            assert_eq!(key, &r.id);
            assert_eq!(v.nrows(), r.len());
            assert!(r.gold_labels.runs().iter().all(|&(_, len)| len >= 8));
        }
    }

    #[test]
    fn single_pattern_weights() {
        let config = SynthConfig {
            pattern_weights: vec![(Pattern::HM, 1.0)],
            ..small(3)
        };
        let (records, _) = synth_generate(&config).unwrap();
        assert!(records.iter().all(|r| r.boundaries().len() == 1 && r.pattern == Pattern::HM));
    }

    #[test]
    fn class_means_are_delta_apart() {
        let config = SynthConfig {
            num_records: 200,
            ..small(9)
        };
        let means = config.class_means();
        let diff = &means.row(1) - &means.row(0);
        assert!((diff.dot(&diff).sqrt() - 3.0).abs() < 1e-12);
        // empirical class means match
        let (records, emb) = synth_generate(&config).unwrap();
        let mut sum = Array2::<f64>::zeros((2, config.dim));
        let mut count = [0usize; 2];
        for (r, (_, v)) in records.iter().zip(&emb.sequences) {
            for (t, &y) in r.gold_labels.iter().enumerate() {
                count[y] += 1;
                for j in 0..config.dim {
                    sum[[y, j]] += v[[t, j]] as f64;
                }
            }
        }
        for y in 0..2 {
            for j in 0..config.dim {
                assert!((sum[[y, j]] / count[y] as f64 - means[[y, j]]).abs() < 0.05);
            }
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(synth_generate(&SynthConfig { delta: -1.0, ..small(0) }).is_err());
        assert!(synth_generate(&SynthConfig { min_len: 10, max_len: 5, ..small(0) }).is_err());
        assert!(synth_generate(&SynthConfig { min_len: 20, max_len: 30, min_segment_len: 5, ..small(0) }).is_err());
        assert!(synth_generate(&SynthConfig { pattern_weights: vec![(Pattern::HM, 0.0)], ..small(0) }).is_err());
    }

    #[test]
    fn segment_lengths_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let l = segment_lengths(&mut rng, 60, 5, 8);
            assert_eq!(l.iter().sum::<usize>(), 60);
            assert!(l.iter().all(|&x| x >= 8));
        }
    }
}
