use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::LabeledFeatures;
use crate::crf::{nll_with_grad, viterbi_decode, CrfParams, EmissionScores};
use crate::error::{Error, Result};
use crate::labels::LabelSequence;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearCrfConfig {
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for LinearCrfConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            learning_rate: 0.5,
        }
    }
}

/// CRF whose emission scores are an affine function of the features.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearCrf<T> {
    /// `feature_dim x num_labels`
    pub weights: Array2<T>,
    pub bias: Array1<T>,
    pub crf: CrfParams<T>,
}

impl<T: Scalar> LinearCrf<T> {
    pub fn zeros(feature_dim: usize, num_labels: usize) -> Self {
        Self {
            weights: Array2::zeros((feature_dim, num_labels)),
            bias: Array1::zeros(num_labels),
            crf: CrfParams::zeros(num_labels),
        }
    }

    pub fn emissions(&self, features: &Array2<T>) -> Result<EmissionScores<T>> {
        if features.ncols() != self.weights.nrows() {
            return Err(Error::Shape("feature dim".into()));
        }
        Ok(EmissionScores::new(
            features.dot(&self.weights) + &self.bias,
        ))
    }

    /// Full-batch gradient descent on the mean CRF negative log-likelihood.
    pub fn fit(
        data: &[LabeledFeatures<T>],
        num_labels: usize,
        config: &LinearCrfConfig,
    ) -> Result<Self> {
        let records: Vec<_> = data.iter().filter(|d| !d.labels.is_empty()).collect();
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut model = Self::zeros(records[0].features.ncols(), num_labels);
        let step = T::of(config.learning_rate / records.len() as f64);
        for _ in 0..config.iterations {
            let mut gw = Array2::zeros(model.weights.dim());
            let mut gb = Array1::zeros(num_labels);
            let mut gc = CrfParams::zeros(num_labels);
            for d in &records {
                let em = model.emissions(&d.features)?;
                let (loss, g) = nll_with_grad(&em, &model.crf, &d.labels)?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite("linear crf loss".into()));
                }
                gw += &d.features.t().dot(&g.emissions);
                gb += &g.emissions.sum_axis(Axis(0));
                gc.transitions += &g.crf.transitions;
                gc.start_scores += &g.crf.start_scores;
                gc.end_scores += &g.crf.end_scores;
            }
            model.weights.scaled_add(-step, &gw);
            model.bias.scaled_add(-step, &gb);
            model.crf.transitions.scaled_add(-step, &gc.transitions);
            model.crf.start_scores.scaled_add(-step, &gc.start_scores);
            model.crf.end_scores.scaled_add(-step, &gc.end_scores);
        }
        Ok(model)
    }

    pub fn decode(&self, features: &Array2<T>) -> Result<LabelSequence> {
        Ok(viterbi_decode(&self.emissions(features)?, &self.crf)?.0)
    }
}
