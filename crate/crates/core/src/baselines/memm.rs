use ndarray::{Array1, Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use super::LabeledFeatures;
use crate::error::{Error, Result};
use crate::labels::LabelSequence;
use crate::scalar::{log_sum_exp, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemmConfig {
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for MemmConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            learning_rate: 0.5,
        }
    }
}

/// Locally normalized maximum-entropy Markov model.
///
/// `weights[[p, y, ..]]` scores label `y` after previous state `p`; state
/// `num_labels` is the sequence start. The last weight of each vector is the
/// bias. Features are divided by their training root-mean-square.
#[derive(Clone, Debug, PartialEq)]
pub struct MemmParams<T> {
    pub weights: Array3<T>,
    pub feature_scale: Array1<T>,
}

impl<T: Scalar> MemmParams<T> {
    pub fn zeros(num_labels: usize, feature_dim: usize) -> Self {
        Self {
            weights: Array3::zeros((num_labels + 1, num_labels, feature_dim + 1)),
            feature_scale: Array1::ones(feature_dim),
        }
    }

    pub fn num_labels(&self) -> usize {
        self.weights.dim().1
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_scale.len()
    }

    pub fn start_state(&self) -> usize {
        self.num_labels()
    }

    fn logits(&self, prev: usize, x: ArrayView1<'_, T>) -> Vec<T> {
        let d = self.feature_dim();
        (0..self.num_labels())
            .map(|y| {
                let w = self.weights.slice(ndarray::s![prev, y, ..]);
                let mut s = w[d];
                for j in 0..d {
                    s += w[j] * x[j] * self.feature_scale[j];
                }
                s
            })
            .collect()
    }

    fn log_local(&self, prev: usize, x: ArrayView1<'_, T>) -> Vec<T> {
        let logits = self.logits(prev, x);
        let z = log_sum_exp(&logits);
        logits.into_iter().map(|v| v - z).collect()
    }
}

/// `P(y_t | y_{t-1} = prev, x_t)` over all labels; `prev = num_labels` is the start state.
pub fn memm_local_distribution<T: Scalar>(
    params: &MemmParams<T>,
    prev: usize,
    x: ArrayView1<'_, T>,
) -> Array1<T> {
    Array1::from(params.log_local(prev, x)).mapv(|v| v.exp())
}

/// `log P(y | x)` of a complete labeling.
pub fn memm_path_log_prob<T: Scalar>(
    params: &MemmParams<T>,
    features: &Array2<T>,
    labels: &[usize],
) -> T {
    let mut prev = params.start_state();
    let mut total = T::zero();
    for (x, &y) in features.rows().into_iter().zip(labels) {
        total += params.log_local(prev, x)[y];
        prev = y;
    }
    total
}

/// Per-position multinomial logistic regression on the features, conditioned
/// on the previous gold label, trained by full-batch gradient descent.
pub fn memm_fit<T: Scalar>(
    data: &[LabeledFeatures<T>],
    num_labels: usize,
    config: &MemmConfig,
) -> Result<MemmParams<T>> {
    let total: usize = data.iter().map(|d| d.labels.len()).sum();
    if total == 0 {
        return Err(Error::EmptyDataset);
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
    let mut params = MemmParams::zeros(num_labels, dim);
    let mut sq = vec![0.0; dim];
    for d in data {
        for x in d.features.rows() {
            for (j, v) in x.iter().enumerate() {
                sq[j] += v.to_f64_lossy().powi(2);
            }
        }
    }
    for (j, s) in sq.iter().enumerate() {
        let rms = (s / total as f64).sqrt();
        params.feature_scale[j] = T::of(if rms > 0.0 { 1.0 / rms } else { 1.0 });
    }

    let lr = T::of(config.learning_rate);
    let scale = T::of(1.0 / total as f64);
    let mut first_loss = None;
    for iteration in 0..config.iterations {
        let mut grad = Array3::<T>::zeros(params.weights.dim());
        let mut loss = T::zero();
        for d in data {
            let mut prev = params.start_state();
            for (x, &y) in d.features.rows().into_iter().zip(&d.labels) {
                let log_p = params.log_local(prev, x);
                loss -= log_p[y];
                for (label, lp) in log_p.iter().enumerate() {
                    let g = lp.exp() - if label == y { T::one() } else { T::zero() };
                    for j in 0..dim {
                        grad[[prev, label, j]] += g * x[j] * params.feature_scale[j];
                    }
                    grad[[prev, label, dim]] += g;
                }
                prev = y;
            }
        }
        let loss = loss * scale;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "memm loss is {loss} at iteration {iteration}"
            )));
        }
        let first = *first_loss.get_or_insert(loss);
        if loss > first * T::of(10.0) + T::one() {
            return Err(Error::Divergence(format!(
                "memm loss grew from {first} to {loss}; lower the learning rate"
            )));
        }
        params.weights.scaled_add(-(lr * scale), &grad);
    }
    Ok(params)
}

/// Viterbi over the locally normalized step distributions, feeding each step
/// the previous predicted label. Ties go to the lower label.
pub fn memm_decode<T: Scalar>(
    params: &MemmParams<T>,
    features: &Array2<T>,
) -> Result<LabelSequence> {
    if features.ncols() != params.feature_dim() {
        return Err(Error::Shape(format!(
            "features have dim {}, memm expects {}",
            features.ncols(),
            params.feature_dim()
        )));
    }
    let n = features.nrows();
    if n == 0 {
        return Ok(LabelSequence::default());
    }
    let l = params.num_labels();
    let mut delta = Array2::<T>::zeros((n, l));
    let mut back = Array2::<usize>::zeros((n, l));
    let first = params.log_local(params.start_state(), features.row(0));
    for y in 0..l {
        delta[[0, y]] = first[y];
    }
    for t in 1..n {
        let local: Vec<Vec<T>> = (0..l)
            .map(|p| params.log_local(p, features.row(t)))
            .collect();
        for y in 0..l {
            let mut best = 0;
            let mut best_score = delta[[t - 1, 0]] + local[0][y];
            for (p, lp) in local.iter().enumerate().skip(1) {
                let s = delta[[t - 1, p]] + lp[y];
                if s > best_score {
                    best = p;
                    best_score = s;
                }
            }
            delta[[t, y]] = best_score;
            back[[t, y]] = best;
        }
    }
    let mut path = vec![0; n];
    path[n - 1] = crate::scalar::argmax(delta.row(n - 1).as_slice().expect("contiguous row"));
    for t in (1..n).rev() {
        path[t - 1] = back[[t, path[t]]];
    }
    Ok(LabelSequence(path))
}
