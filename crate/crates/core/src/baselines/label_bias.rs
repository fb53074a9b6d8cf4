//! A corpus on which local normalization provably ignores evidence.
//!
//! Two label paths share an ambiguous first observation: `0 -> 1` emits
//! `(r, i)` and `2 -> 3` emits `(r, o)`. Labels `0` and `2` each have a single
//! successor, so a locally normalized model assigns that successor probability
//! near one whatever the second observation is, and its decision is settled
//! by the 3:1 training frequency at the first step. A globally normalized
//! model can still use the second observation.

use ndarray::Array2;

use super::LabeledFeatures;
use crate::scalar::Scalar;

pub const LABEL_BIAS_NUM_LABELS: usize = 4;

const R: usize = 0;
const I: usize = 1;
const O: usize = 2;

fn one_hot<T: Scalar>(symbols: &[usize]) -> Array2<T> {
    Array2::from_shape_fn((symbols.len(), 3), |(t, j)| {
        if symbols[t] == j {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// `(train, test)` as one-hot features over the symbols `r, i, o`.
pub fn label_bias_corpus<T: Scalar>() -> (Vec<LabeledFeatures<T>>, Vec<LabeledFeatures<T>>) {
    let rib = || LabeledFeatures {
        features: one_hot(&[R, I]),
        labels: vec![0, 1],
    };
    let rob = || LabeledFeatures {
        features: one_hot(&[R, O]),
        labels: vec![2, 3],
    };
    (vec![rib(), rib(), rib(), rob()], vec![rib(), rob()])
}
