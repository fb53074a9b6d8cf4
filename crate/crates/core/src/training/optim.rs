use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParamKind, SegmenterParams};
use crate::scalar::Scalar;
use crate::training::LearningRates;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    AdamW,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::AdamW,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &SegmenterParams<T>) -> Self {
        let mut m = Vec::new();
        params.visit(|_, v| m.push(vec![T::zero(); v.len()]));
        Self {
            step: 0,
            v: m.clone(),
            m,
        }
    }
}

/// One AdamW update of a single tensor at (1-based) step `step`. `decay` is
/// the decoupled weight-decay coefficient for this tensor (0 to disable).
#[allow(clippy::too_many_arguments)]
pub fn adamw_update<T: Scalar>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    step: u64,
    lr: f64,
    decay: f64,
    config: &OptimizerConfig,
) {
    let b1 = T::of(config.beta1);
    let b2 = T::of(config.beta2);
    let c1 = T::of(1.0 - config.beta1.powi(step as i32));
    let c2 = T::of(1.0 - config.beta2.powi(step as i32));
    let eps = T::of(config.epsilon);
    let lr_t = T::of(lr);
    let shrink = T::of(1.0 - lr * decay);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (T::one() - b1) * g;
        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] = param[i] * shrink - lr_t * m_hat / (v_hat.sqrt() + eps);
    }
}

fn sgd_update<T: Scalar>(param: &mut [T], grad: &[T], lr: f64, decay: f64) {
    let lr_t = T::of(lr);
    let shrink = T::of(1.0 - lr * decay);
    for (p, &g) in param.iter_mut().zip(grad) {
        *p = *p * shrink - lr_t * g;
    }
}

/// Applies one optimizer step to every tensor with its group's rate. Weight
/// decay touches `Weight` tensors only.
pub fn optimizer_step<T: Scalar>(
    params: &mut SegmenterParams<T>,
    grads: &SegmenterParams<T>,
    rates: &LearningRates,
    weight_decay: f64,
    config: &OptimizerConfig,
    state: &mut OptimizerState<T>,
) -> Result<()> {
    let infos = params.infos();
    let grad_infos = grads.infos();
    if infos.len() != grad_infos.len() || infos.len() != state.m.len() {
        return Err(Error::Shape(
            "gradient layout does not match parameters".into(),
        ));
    }
    if let Some((i, _)) = infos
        .iter()
        .zip(&grad_infos)
        .find(|(i, g)| i.shape != g.shape)
    {
        return Err(Error::Shape(format!(
            "gradient shape mismatch for {}",
            i.name
        )));
    }
    let flat = grads.to_flat();
    state.step += 1;
    let step = state.step;
    let mut idx = 0;
    let mut offset = 0;
    params.visit_mut(|info, p| {
        let lr = rates.rate_for(info.group);
        let decay = if info.kind == ParamKind::Weight {
            weight_decay
        } else {
            0.0
        };
        let g = &flat[offset..offset + p.len()];
        match config.kind {
            OptimizerKind::AdamW => adamw_update(
                p,
                g,
                &mut state.m[idx],
                &mut state.v[idx],
                step,
                lr,
                decay,
                config,
            ),
            OptimizerKind::Sgd => sgd_update(p, g, lr, decay),
        }
        idx += 1;
        offset += p.len();
    });
    Ok(())
}

/// Scales `grad` so its L2 norm is at most `max_norm`; returns the norm seen
/// before clipping.
pub fn clip_slice<T: Scalar>(grad: &mut [T], max_norm: f64) -> Result<f64> {
    let norm = grad
        .iter()
        .map(|g| g.to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt();
    if norm.is_nan() {
        return Err(Error::NonFinite("gradient".into()));
    }
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        grad.iter_mut().for_each(|g| *g *= s);
    }
    Ok(norm)
}

/// Global-norm clipping over all tensors; returns the pre-clip norm. A NaN
/// anywhere is an error naming the tensor.
pub fn clip_gradients<T: Scalar>(grads: &mut SegmenterParams<T>, max_norm: f64) -> Result<f64> {
    let mut sq = 0.0f64;
    let mut bad = None;
    grads.visit(|info, g| {
        for v in g {
            let x = v.to_f64_lossy();
            if !x.is_finite() && bad.is_none() {
                bad = Some(info.name.clone());
            }
            sq += x * x;
        }
    });
    if let Some(name) = bad {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        grads.visit_mut(|_, g| g.iter_mut().for_each(|v| *v *= s));
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::emissions::{EmbeddingSource, InitScheme};
    use crate::model::{ModelConfig, Segmenter};

    fn model() -> Segmenter<f64> {
        let config = ModelConfig {
            input_dim: 3,
            hidden_dim: 2,
            num_layers: 2,
            num_labels: 2,
            head_init: InitScheme::Xavier,
            embedding: EmbeddingSource::Hashed { seed: 1 },
        };
        Segmenter::new(config, 11).unwrap()
    }

    #[test]
    fn clipping_examples() {
        let mut g = vec![1.2f64, 1.6];
        assert_eq!(clip_slice(&mut g, 1.0).unwrap(), 2.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
        let mut g = vec![0.3f64, 0.4];
        clip_slice(&mut g, 1.0).unwrap();
        assert_eq!(g, vec![0.3, 0.4]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut g: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
            let before = g.clone();
            let n0 = clip_slice(&mut g, 1.0).unwrap();
            let n1 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(n1 <= 1.0 + 1e-12 && n1 <= n0 + 1e-12);
            let mut h = before.clone();
            clip_slice(&mut h, f64::INFINITY).unwrap();
            assert_eq!(h, before);
        }
        assert!(clip_slice(&mut [f64::NAN, 1.0], 1.0).is_err());
    }

    #[test]
    fn global_clipping_over_params() {
        let m = model();
        let mut g = m.params.clone();
        let n0 = clip_gradients(&mut g, 0.5).unwrap();
        let n1 = g.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(n0 > 0.5 && (n1 - 0.5).abs() < 1e-12);
        g.network.head_bias[0] = f64::NAN;
        let err = clip_gradients(&mut g, 1.0).unwrap_err();
        assert!(err.to_string().contains("head.bias"));
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut m = model();
        let before = m.params.clone();
        let zeros = m.params.zeros_like();
        let mut state = OptimizerState::new(&m.params);
        for _ in 0..3 {
            optimizer_step(
                &mut m.params,
                &zeros,
                &LearningRates::default(),
                0.0,
                &OptimizerConfig::default(),
                &mut state,
            )
            .unwrap();
        }
        assert_eq!(m.params, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut m = model();
        let before = m.params.to_flat();
        let mut ones = m.params.zeros_like();
        ones.visit_mut(|_, g| g.iter_mut().for_each(|v| *v = 1.0));
        let rates = LearningRates::default();
        let mut state = OptimizerState::new(&m.params);
        optimizer_step(
            &mut m.params,
            &ones,
            &rates,
            0.0,
            &OptimizerConfig::default(),
            &mut state,
        )
        .unwrap();
        let after = m.params.to_flat();
        let mut i = 0;
        for info in m.params.infos() {
            let lr = rates.rate_for(info.group);
            for _ in 0..info.shape.iter().product::<usize>() {
                assert!(((before[i] - after[i]) - lr).abs() < lr * 1e-6);
                i += 1;
            }
        }
    }

    #[test]
    fn decay_skips_biases_and_transitions() {
        let mut m = model();
        m.params.crf.transitions.fill(0.5);
        let before = m.params.clone();
        let zeros = m.params.zeros_like();
        let mut state = OptimizerState::new(&m.params);
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Sgd,
            ..Default::default()
        };
        optimizer_step(
            &mut m.params,
            &zeros,
            &LearningRates::Uniform(0.1),
            0.5,
            &cfg,
            &mut state,
        )
        .unwrap();
        assert_eq!(m.params.network.head_bias, before.network.head_bias);
        assert_eq!(m.params.crf, before.crf);
        assert_eq!(
            m.params.network.head_weights,
            before.network.head_weights * 0.95
        );
        let l0 = &m.params.network.layers[0].forward.update;
        assert_eq!(l0.bias, before.network.layers[0].forward.update.bias);
        assert_eq!(
            l0.input,
            &before.network.layers[0].forward.update.input * 0.95
        );
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut m = model();
        let other = Segmenter::<f64>::new(
            ModelConfig {
                hidden_dim: 3,
                ..m.config.clone()
            },
            1,
        )
        .unwrap();
        let mut state = OptimizerState::new(&m.params);
        let err = optimizer_step(
            &mut m.params,
            &other.params,
            &LearningRates::default(),
            0.0,
            &OptimizerConfig::default(),
            &mut state,
        );
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn convex_quadratic_decreases_monotonically() {
        // f(x) = 0.5 * sum_i a_i (x_i - c_i)^2
        let a = [1.0, 4.0, 0.25, 2.0];
        let c = [3.0, -1.0, 0.5, 2.0];
        let f = |x: &[f64]| {
            0.5 * x
                .iter()
                .zip(a.iter().zip(&c))
                .map(|(x, (a, c))| a * (x - c).powi(2))
                .sum::<f64>()
        };
        let mut x = vec![0.0f64; 4];
        let (mut m, mut v) = (vec![0.0; 4], vec![0.0; 4]);
        let cfg = OptimizerConfig::default();
        let mut losses = vec![f(&x)];
        for step in 1..=50 {
            let g: Vec<f64> = x
                .iter()
                .zip(a.iter().zip(&c))
                .map(|(x, (a, c))| a * (x - c))
                .collect();
            adamw_update(&mut x, &g, &mut m, &mut v, step, 0.05, 0.0, &cfg);
            losses.push(f(&x));
        }
        assert!(losses[5..].windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }
}
