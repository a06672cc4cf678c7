use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of a de-raining network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of multi-scale attentive cells. Zero leaves only stem and tail.
    #[serde(rename = "T")]
    pub num_cells: usize,
    /// Feature width, shared by every scale.
    #[serde(rename = "C")]
    pub channels: usize,
    /// Searched columns per cell.
    #[serde(rename = "M")]
    pub columns: usize,
    /// Rainy images per multi-to-one pair.
    #[serde(rename = "N")]
    pub multi_to_one: usize,
    #[serde(rename = "H")]
    pub height: usize,
    #[serde(rename = "W")]
    pub width: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            num_cells: 2,
            channels: 16,
            columns: 4,
            multi_to_one: 3,
            height: 32,
            width: 32,
        }
    }
}

impl NetworkConfig {
    pub fn new(num_cells: usize, channels: usize, height: usize, width: usize) -> Self {
        NetworkConfig {
            num_cells,
            channels,
            height,
            width,
            ..Default::default()
        }
    }

    /// `2^T`, the factor every spatial dimension must divide by.
    pub fn spatial_divisor(&self) -> usize {
        1 << self.num_cells
    }

    pub fn validate(&self) -> Result<()> {
        validate_config(self)
    }
}

pub fn validate_config(cfg: &NetworkConfig) -> Result<()> {
    if cfg.channels == 0 || cfg.channels % 2 != 0 {
        return Err(Error::OddChannels(cfg.channels));
    }
    if cfg.columns == 0 {
        return Err(Error::config("M", "need at least one column per cell"));
    }
    if cfg.multi_to_one < 2 {
        return Err(Error::config("N", "multi-to-one pairs need at least two rainy images"));
    }
    if cfg.num_cells > 16 {
        return Err(Error::config("T", "at most 16 cells"));
    }
    let divisor = cfg.spatial_divisor();
    for (field, value) in [("H", cfg.height), ("W", cfg.width)] {
        if value == 0 || value % divisor != 0 {
            return Err(Error::DimensionNotDivisible {
                field,
                value,
                cells: cfg.num_cells,
                divisor,
            });
        }
    }
    Ok(())
}

/// Hyper-parameters of the bi-level search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub lambda_arch: f64,
    pub lambda_comp: f64,
    /// Number of bi-level iterations `J`.
    pub iterations: usize,
    pub weight_lr_max: f64,
    pub weight_lr_min: f64,
    pub weight_momentum: f64,
    pub weight_decay: f64,
    pub arch_lr: f64,
    pub arch_weight_decay: f64,
    pub arch_betas: (f64, f64),
    /// Fraction of `J` during which only network weights are updated.
    pub warmup_fraction: f64,
    pub pairs_per_batch: usize,
    /// One attention choice per cell instead of one per application site.
    pub shared_attention_choice: bool,
    /// Include the internal consistency loss in both objectives.
    pub internal_loss: bool,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            lambda_arch: 0.01,
            lambda_comp: 0.0,
            iterations: 300,
            weight_lr_max: 2e-3,
            weight_lr_min: 1e-4,
            weight_momentum: 0.9,
            weight_decay: 3e-4,
            arch_lr: 3e-4,
            arch_weight_decay: 1e-3,
            arch_betas: (0.9, 0.999),
            warmup_fraction: 0.1,
            pairs_per_batch: 1,
            shared_attention_choice: false,
            internal_loss: true,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("lambda_arch", self.lambda_arch),
            ("lambda_comp", self.lambda_comp),
            ("weight_lr_max", self.weight_lr_max),
            ("weight_lr_min", self.weight_lr_min),
            ("weight_momentum", self.weight_momentum),
            ("weight_decay", self.weight_decay),
            ("arch_lr", self.arch_lr),
            ("arch_weight_decay", self.arch_weight_decay),
        ];
        for (field, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be a finite non-negative number, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::config("warmup_fraction", "must lie in [0, 1]"));
        }
        if self.pairs_per_batch == 0 {
            return Err(Error::config("pairs_per_batch", "must be positive"));
        }
        Ok(())
    }

    /// Iterations at the start of the search that skip the architecture
    /// update.
    pub fn warmup_iterations(&self) -> usize {
        (self.warmup_fraction * self.iterations as f64).floor() as usize
    }
}

/// Hyper-parameters for retraining a discrete network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub internal_loss: bool,
    pub pairs_per_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 1e-3,
            weight_decay: 3e-4,
            betas: (0.9, 0.999),
            internal_loss: true,
            pairs_per_batch: 1,
            seed: 0,
        }
    }
}

/// Cosine annealing from `max` at step 0 to `min` at step `total`.
pub fn cosine_lr(max: f64, min: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return max;
    }
    let t = (step as f64 / total as f64).min(1.0);
    min + 0.5 * (max - min) * (1.0 + (std::f64::consts::PI * t).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divisible_config_is_accepted() {
        let cfg = NetworkConfig { num_cells: 3, channels: 16, columns: 4, multi_to_one: 3, height: 64, width: 64 };
        assert!(validate_config(&cfg).is_ok());
    }

    #[test]
    fn indivisible_height_is_named() {
        let cfg = NetworkConfig { num_cells: 3, channels: 16, columns: 4, multi_to_one: 3, height: 60, width: 64 };
        match validate_config(&cfg) {
            Err(Error::DimensionNotDivisible { field, .. }) => assert_eq!(field, "H"),
            other => panic!("expected dimension error, got {other:?}"),
        }
    }

    #[test]
    fn odd_channels_rejected() {
        let cfg = NetworkConfig::new(1, 15, 32, 32);
        assert!(matches!(validate_config(&cfg), Err(Error::OddChannels(15))));
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(2e-3, 1e-4, 0, 10), 2e-3);
        assert!((cosine_lr(2e-3, 1e-4, 10, 10) - 1e-4).abs() < 1e-15);
        assert!((cosine_lr(1.0, 0.0, 5, 10) - 0.5).abs() < 1e-12);
    }
}
