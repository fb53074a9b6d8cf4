use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GroupId, SegmenterParams};
use crate::scalar::Scalar;

/// Per-group rates (input side first) or one rate for everything.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearningRates {
    Llrd([f64; 4]),
    Uniform(f64),
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates::Llrd([1e-6, 5e-6, 1e-5, 1e-4])
    }
}

impl LearningRates {
    /// Four strictly increasing positive rates.
    pub fn llrd(rates: &[f64]) -> Result<Self> {
        let rates: [f64; 4] = rates
            .try_into()
            .map_err(|_| Error::Invalid(format!("expected 4 LLRD rates, got {}", rates.len())))?;
        let r = LearningRates::Llrd(rates);
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            LearningRates::Llrd(r) => {
                if r.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::Invalid(format!(
                        "LLRD rates must be positive: {r:?}"
                    )));
                }
                if r.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::Invalid(format!(
                        "LLRD rates must be strictly increasing: {r:?}"
                    )));
                }
            }
            LearningRates::Uniform(v) => {
                if !(v.is_finite() && *v > 0.0) {
                    return Err(Error::Invalid(format!(
                        "learning rate must be positive: {v}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn rate_for(&self, group: GroupId) -> f64 {
        match self {
            LearningRates::Llrd(r) => r[group as usize],
            LearningRates::Uniform(v) => *v,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamGroup {
    /// `None` for the single group of a uniform rate.
    pub group_id: Option<GroupId>,
    pub learning_rate: f64,
    pub params: Vec<String>,
    pub num_values: usize,
}

/// Assigns every parameter to its learning-rate group. Embeddings are
/// frozen, so the embeddings group is always empty (and a warning is logged).
pub fn build_llrd_groups<T: Scalar>(
    params: &SegmenterParams<T>,
    rates: &LearningRates,
) -> Result<Vec<ParamGroup>> {
    rates.validate()?;
    let mut groups: Vec<ParamGroup> = match rates {
        LearningRates::Llrd(r) => GroupId::ALL
            .iter()
            .zip(r)
            .map(|(&g, &lr)| ParamGroup {
                group_id: Some(g),
                learning_rate: lr,
                params: Vec::new(),
                num_values: 0,
            })
            .collect(),
        LearningRates::Uniform(lr) => vec![ParamGroup {
            group_id: None,
            learning_rate: *lr,
            params: Vec::new(),
            num_values: 0,
        }],
    };
    params.visit(|info, values| {
        let slot = match rates {
            LearningRates::Llrd(_) => info.group as usize,
            LearningRates::Uniform(_) => 0,
        };
        groups[slot].params.push(info.name.clone());
        groups[slot].num_values += values.len();
    });
    for g in &groups {
        if g.params.is_empty() {
            let name = g.group_id.map_or("all", GroupId::as_str);
            log::warn!("learning-rate group `{name}` is empty (frozen embeddings)");
        }
    }
    Ok(groups)
}
