use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::LabeledFeatures;
use crate::crf::{viterbi_decode, CrfParams, EmissionScores};
use crate::error::{Error, Result};
use crate::labels::LabelSequence;
use crate::scalar::Scalar;

const VARIANCE_FLOOR: f64 = 1e-6;

/// Observation model selector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HmmEmissionMode {
    /// Per-label diagonal Gaussian over the feature vector.
    #[default]
    Gaussian,
    /// Categorical over the sign pattern of the features (`2^dim` symbols).
    SignCategorical,
}

#[derive(Clone, Debug, PartialEq)]
pub enum HmmEmission<T> {
    Gaussian {
        /// `L x dim`
        means: Array2<T>,
        /// `L x dim`, floored away from zero.
        variances: Array2<T>,
    },
    SignCategorical {
        /// `L x 2^dim`, rows sum to one.
        probs: Array2<T>,
    },
}

/// Supervised HMM: initial distribution, row-stochastic transitions and a
/// per-label observation model.
#[derive(Clone, Debug, PartialEq)]
pub struct HmmParams<T> {
    pub initial: Array1<T>,
    pub transition: Array2<T>,
    pub emission: HmmEmission<T>,
}

impl<T: Scalar> HmmParams<T> {
    pub fn num_labels(&self) -> usize {
        self.initial.len()
    }

    pub fn feature_dim(&self) -> usize {
        match &self.emission {
            HmmEmission::Gaussian { means, .. } => means.ncols(),
            HmmEmission::SignCategorical { probs } => probs.ncols().trailing_zeros() as usize,
        }
    }

    /// `log p(x_t | y)` for every position and label.
    pub fn emission_log_likelihoods(&self, features: &Array2<T>) -> Result<Array2<T>> {
        if features.ncols() != self.feature_dim() {
            return Err(Error::Shape(format!(
                "features have dim {}, hmm expects {}",
                features.ncols(),
                self.feature_dim()
            )));
        }
        let l = self.num_labels();
        let mut out = Array2::zeros((features.nrows(), l));
        match &self.emission {
            HmmEmission::Gaussian { means, variances } => {
                let log_2pi = T::of((2.0 * std::f64::consts::PI).ln());
                for (t, x) in features.rows().into_iter().enumerate() {
                    for y in 0..l {
                        let mut ll = T::zero();
                        for (j, &v) in x.iter().enumerate() {
                            let var = variances[[y, j]];
                            let d = v - means[[y, j]];
                            ll -= T::of(0.5) * (log_2pi + var.ln() + d * d / var);
                        }
                        out[[t, y]] = ll;
                    }
                }
            }
            HmmEmission::SignCategorical { probs } => {
                for (t, x) in features.rows().into_iter().enumerate() {
                    let symbol = sign_symbol(x.iter().copied());
                    for y in 0..l {
                        out[[t, y]] = probs[[y, symbol]].ln();
                    }
                }
            }
        }
        Ok(out)
    }
}

fn sign_symbol<T: Scalar>(x: impl Iterator<Item = T>) -> usize {
    x.enumerate()
        .filter(|(_, v)| *v > T::zero())
        .fold(0, |acc, (j, _)| acc | (1 << j))
}

/// Counts-based maximum likelihood with add-`k` smoothing on initial,
/// transition and categorical emission probabilities.
pub fn hmm_fit<T: Scalar>(
    data: &[LabeledFeatures<T>],
    num_labels: usize,
    smoothing: f64,
    mode: HmmEmissionMode,
) -> Result<HmmParams<T>> {
    if data.is_empty() || data.iter().all(|d| d.labels.is_empty()) {
        return Err(Error::EmptyDataset);
    }
    if !(smoothing > 0.0) {
        return Err(Error::Invalid("smoothing constant must be positive".into()));
    }
    let dim = data[0].features.ncols();
    for d in data {
        if d.features.nrows() != d.labels.len() || d.features.ncols() != dim {
            return Err(Error::Shape("features/labels disagree".into()));
        }
        if d.labels.iter().any(|&y| y >= num_labels) {
            return Err(Error::Invalid("label out of range".into()));
        }
    }
    if mode == HmmEmissionMode::SignCategorical && dim > 16 {
        return Err(Error::Invalid(
            "sign quantization supports at most 16 feature dims".into(),
        ));
    }

    let l = num_labels;
    let k = smoothing;
    let mut first = vec![0.0; l];
    let mut pairs = vec![vec![0.0; l]; l];
    for d in data.iter().filter(|d| !d.labels.is_empty()) {
        first[d.labels[0]] += 1.0;
        for w in d.labels.windows(2) {
            pairs[w[0]][w[1]] += 1.0;
        }
    }
    let sequences: f64 = first.iter().sum();
    let initial = Array1::from_shape_fn(l, |y| T::of((first[y] + k) / (sequences + k * l as f64)));
    let transition = Array2::from_shape_fn((l, l), |(a, b)| {
        let out: f64 = pairs[a].iter().sum();
        T::of((pairs[a][b] + k) / (out + k * l as f64))
    });

    let emission = match mode {
        HmmEmissionMode::Gaussian => {
            let mut count = vec![0.0; l];
            let mut sum = Array2::<f64>::zeros((l, dim));
            let mut sq = Array2::<f64>::zeros((l, dim));
            for d in data {
                for (x, &y) in d.features.rows().into_iter().zip(&d.labels) {
                    count[y] += 1.0;
                    for (j, &v) in x.iter().enumerate() {
                        let v = v.to_f64_lossy();
                        sum[[y, j]] += v;
                        sq[[y, j]] += v * v;
                    }
                }
            }
            let mut means = Array2::zeros((l, dim));
            let mut variances = Array2::from_elem((l, dim), T::one());
            for y in 0..l {
                if count[y] == 0.0 {
                    continue;
                }
                for j in 0..dim {
                    let m = sum[[y, j]] / count[y];
                    let var = (sq[[y, j]] / count[y] - m * m).max(VARIANCE_FLOOR);
                    means[[y, j]] = T::of(m);
                    variances[[y, j]] = T::of(var);
                }
            }
            HmmEmission::Gaussian { means, variances }
        }
        HmmEmissionMode::SignCategorical => {
            let symbols = 1usize << dim;
            let mut counts = Array2::<f64>::zeros((l, symbols));
            for d in data {
                for (x, &y) in d.features.rows().into_iter().zip(&d.labels) {
                    counts[[y, sign_symbol(x.iter().copied())]] += 1.0;
                }
            }
            let probs = Array2::from_shape_fn((l, symbols), |(y, s)| {
                let total: f64 = counts.row(y).sum();
                T::of((counts[[y, s]] + k) / (total + k * symbols as f64))
            });
            HmmEmission::SignCategorical { probs }
        }
    };
    Ok(HmmParams {
        initial,
        transition,
        emission,
    })
}

/// Most probable state path by log-space Viterbi; ties go to the lower label.
pub fn hmm_decode<T: Scalar>(params: &HmmParams<T>, features: &Array2<T>) -> Result<LabelSequence> {
    let emissions = EmissionScores::new(params.emission_log_likelihoods(features)?);
    let chain = CrfParams {
        transitions: params.transition.mapv(|p| p.ln()),
        start_scores: params.initial.mapv(|p| p.ln()),
        end_scores: Array1::zeros(params.num_labels()),
    };
    Ok(viterbi_decode(&emissions, &chain)?.0)
}

/// `log p(x, y)` of a labeled sequence.
pub fn hmm_log_joint<T: Scalar>(
    params: &HmmParams<T>,
    features: &Array2<T>,
    labels: &[usize],
) -> Result<T> {
    let ll = params.emission_log_likelihoods(features)?;
    let mut total = params.initial[labels[0]].ln() + ll[[0, labels[0]]];
    for t in 1..labels.len() {
        total = total + params.transition[[labels[t - 1], labels[t]]].ln() + ll[[t, labels[t]]];
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::crf::oracle::labelings;

    fn seq(labels: Vec<usize>) -> LabeledFeatures<f64> {
        LabeledFeatures {
            features: Array2::zeros((labels.len(), 1)),
            labels,
        }
    }

    #[test]
    fn add_one_counts() {
        let p = hmm_fit(&[seq(vec![0, 0, 1])], 2, 1.0, HmmEmissionMode::Gaussian).unwrap();
        assert_eq!(p.transition.row(0).to_vec(), vec![0.5, 0.5]);
        let p = hmm_fit(&[seq(vec![0, 0, 0, 0])], 2, 1.0, HmmEmissionMode::Gaussian).unwrap();
        assert!((p.transition[[0, 0]] - 0.8).abs() < 1e-15);
        assert!((p.initial[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            hmm_fit::<f64>(&[], 2, 1.0, HmmEmissionMode::Gaussian),
            Err(Error::EmptyDataset)
        ));
        assert!(hmm_fit(&[seq(vec![0])], 2, 0.0, HmmEmissionMode::Gaussian).is_err());
    }

    #[test]
    fn symmetric_params_decode_to_zeros() {
        let p = HmmParams {
            initial: array![0.5, 0.5],
            transition: array![[0.5, 0.5], [0.5, 0.5]],
            emission: HmmEmission::Gaussian {
                means: array![[0.0], [0.0]],
                variances: array![[1.0], [1.0]],
            },
        };
        let path = hmm_decode(&p, &array![[0.3], [-1.0], [2.0]]).unwrap();
        assert_eq!(path.0, vec![0, 0, 0]);
    }

    #[test]
    fn sharp_emissions_follow_argmax() {
        let p = HmmParams {
            initial: array![0.5, 0.5],
            transition: array![[0.6, 0.4], [0.4, 0.6]],
            emission: HmmEmission::Gaussian {
                means: array![[-5.0], [5.0]],
                variances: array![[0.1], [0.1]],
            },
        };
        let x = array![[-5.0], [5.1], [-4.9], [4.8]];
        assert_eq!(hmm_decode(&p, &x).unwrap().0, vec![0, 1, 0, 1]);
    }

    #[test]
    fn decode_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let data: Vec<LabeledFeatures<f64>> = (0..5)
                .map(|_| {
                    let n = rng.random_range(2..7);
                    LabeledFeatures {
                        features: Array2::from_shape_simple_fn((n, 2), || {
                            rng.random_range(-2.0..2.0)
                        }),
                        labels: (0..n).map(|_| rng.random_range(0..3)).collect(),
                    }
                })
                .collect();
            let p = hmm_fit(&data, 3, 0.5, HmmEmissionMode::Gaussian).unwrap();
            let x = Array2::from_shape_simple_fn((6, 2), || rng.random_range(-2.0..2.0));
            let fast = hmm_decode(&p, &x).unwrap();
            let best = labelings(3, 6)
                .unwrap()
                .into_iter()
                .map(|y| {
                    let s = hmm_log_joint(&p, &x, &y).unwrap();
                    (y, s)
                })
                .fold(None::<(Vec<usize>, f64)>, |acc, (y, s)| match acc {
                    Some((_, b)) if s <= b => acc,
                    _ => Some((y, s)),
                })
                .unwrap();
            assert_eq!(fast.0, best.0);
        }
    }

    #[test]
    fn categorical_mode() {
        let data = vec![LabeledFeatures {
            features: array![[1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]],
            labels: vec![0, 0, 1],
        }];
        let p: HmmParams<f64> = hmm_fit(&data, 2, 1.0, HmmEmissionMode::SignCategorical).unwrap();
        let HmmEmission::SignCategorical { probs } = &p.emission else {
            panic!()
        };
        assert_eq!(probs.dim(), (2, 4));
        for row in probs.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        // symbol 0b01 for label 0: (2 + 1) / (2 + 4)
        assert!((probs[[0, 1]] - 0.5).abs() < 1e-15);
        assert_eq!(
            hmm_decode(&p, &array![[2.0, -3.0], [-2.0, 3.0]])
                .unwrap()
                .0
                .len(),
            2
        );
    }

    #[test]
    fn rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for k in [0.01, 0.5, 1.0, 3.0] {
            let data: Vec<LabeledFeatures<f64>> = (0..10)
                .map(|_| {
                    let n = rng.random_range(1..9);
                    LabeledFeatures {
                        features: Array2::from_shape_simple_fn((n, 1), || rng.random()),
                        labels: (0..n).map(|_| rng.random_range(0..2)).collect(),
                    }
                })
                .collect();
            let p: HmmParams<f64> = hmm_fit(&data, 2, k, HmmEmissionMode::Gaussian).unwrap();
            assert!((p.initial.sum() - 1.0).abs() < 1e-9);
            for row in p.transition.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|&v| v > 0.0));
            }
        }
    }
}
