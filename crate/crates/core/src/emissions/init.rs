use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// How the linear head is initialized. Recurrent weights always use the
/// fan-in uniform scheme.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    #[default]
    Xavier,
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and bias.
    FanIn,
}

pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `fan_in x fan_out` matrix drawn from `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init<T: Scalar>(fan_in: usize, fan_out: usize, seed: u64) -> Array2<T> {
    let bound = xavier_bound(fan_in, fan_out);
    uniform(
        (fan_in, fan_out),
        bound,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

/// `rows x cols` matrix drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn default_uniform_init<T: Scalar>(
    shape: (usize, usize),
    fan_in: usize,
    rng: &mut impl Rng,
) -> Array2<T> {
    uniform(shape, 1.0 / (fan_in as f64).sqrt(), rng)
}

pub(crate) fn uniform<T: Scalar>(
    shape: (usize, usize),
    bound: f64,
    rng: &mut impl Rng,
) -> Array2<T> {
    Array2::from_shape_simple_fn(shape, || {
        if bound == 0.0 {
            T::zero()
        } else {
            T::of(rng.random_range(-bound..=bound))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_bounds() {
        assert_eq!(xavier_bound(4, 2), 1.0);
        assert_eq!(xavier_bound(3, 3), 1.0);
        let w = xavier_init::<f64>(4, 2, 1);
        assert_eq!(w.dim(), (4, 2));
        assert!(w.iter().all(|v| v.abs() <= 1.0));
        assert_eq!(w, xavier_init::<f64>(4, 2, 1));
        assert_ne!(w, xavier_init::<f64>(4, 2, 2));
    }

    #[test]
    fn empirical_variance_matches_uniform() {
        // fan_in + fan_out = 12 -> b^2 / 3 = 2 / 12.
        let w = xavier_init::<f64>(500, 200, 7);
        let w: Vec<f64> = w.iter().copied().take(100_000).collect();
        let bound = xavier_bound(500, 200);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        assert!((var - bound * bound / 3.0).abs() / (bound * bound / 3.0) < 0.05);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Array2<f64> = uniform((100_000, 1), xavier_bound(8, 4), &mut rng);
        let var = samples.iter().map(|v| v * v).sum::<f64>() / 100_000.0;
        assert!((var - 1.0 / 6.0).abs() / (1.0 / 6.0) < 0.05, "{var}");
    }
}
