use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropoutMode {
    #[default]
    Off,
    /// Rate grows linearly from `p_min` at the first layer to `p_max` at the last.
    PerLayerLinear,
}

/// Depth-dependent dropout schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutPolicy {
    pub p_min: f64,
    pub p_max: f64,
    pub mode: DropoutMode,
    pub seed: u64,
}

impl Default for DropoutPolicy {
    fn default() -> Self {
        Self::off()
    }
}

impl DropoutPolicy {
    pub fn off() -> Self {
        Self {
            p_min: 0.0,
            p_max: 0.0,
            mode: DropoutMode::Off,
            seed: 0,
        }
    }

    pub fn per_layer(p_min: f64, p_max: f64, seed: u64) -> Self {
        Self {
            p_min,
            p_max,
            mode: DropoutMode::PerLayerLinear,
            seed,
        }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..1.0).contains(&self.p_min)
            && (0.0..1.0).contains(&self.p_max)
            && self.p_min <= self.p_max
    }
}

/// Dropout rate applied to the output of GRU layer `layer_index`.
pub fn dropout_rate(layer_index: usize, num_layers: usize, policy: &DropoutPolicy) -> f64 {
    match policy.mode {
        DropoutMode::Off => 0.0,
        DropoutMode::PerLayerLinear if num_layers <= 1 => policy.p_min,
        DropoutMode::PerLayerLinear => {
            policy.p_min
                + (policy.p_max - policy.p_min) * layer_index as f64 / (num_layers - 1) as f64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_schedule() {
        let p = DropoutPolicy::per_layer(0.1, 0.5, 0);
        let rates: Vec<f64> = (0..3).map(|l| dropout_rate(l, 3, &p)).collect();
        for (r, e) in rates.iter().zip([0.1, 0.3, 0.5]) {
            assert!((r - e).abs() < 1e-15);
        }
        assert_eq!(dropout_rate(0, 1, &p), 0.1);
        let off = DropoutPolicy::off();
        assert!((0..3).all(|l| dropout_rate(l, 3, &off) == 0.0));
        let flat = DropoutPolicy::per_layer(0.2, 0.2, 0);
        assert!((0..4).all(|l| (dropout_rate(l, 4, &flat) - 0.2).abs() < 1e-15));
        assert!(!DropoutPolicy::per_layer(0.5, 0.1, 0).is_valid());
        assert!(!DropoutPolicy::per_layer(0.1, 1.0, 0).is_valid());
    }
}
