use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::background::procedural_background;
use super::pair::{DatasetSplit, MultiToOnePair, Severity};
use crate::error::{Error, Result};
use crate::params::mix_seed;
use crate::tensor::Tensor;

/// Parameters of the additive streak model, indexed light, medium, heavy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RainConfig {
    /// Fraction of noise pixels zeroed before streaking.
    pub quantiles: [f64; 3],
    /// Streak length in pixels.
    pub lengths: [usize; 3],
    pub gains: [f64; 3],
    /// Streak angle range in degrees from the horizontal axis.
    pub angle_min: f64,
    pub angle_max: f64,
}

impl Default for RainConfig {
    fn default() -> Self {
        RainConfig {
            quantiles: [0.992, 0.985, 0.975],
            lengths: [7, 11, 15],
            gains: [0.6, 0.8, 1.0],
            angle_min: 60.0,
            angle_max: 120.0,
        }
    }
}

impl RainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.quantiles.iter().any(|q| !(0.0..1.0).contains(q)) {
            return Err(Error::config("rain_quantiles", "must lie in [0, 1)"));
        }
        if self.lengths.contains(&0) {
            return Err(Error::config("rain_lengths", "must be positive"));
        }
        if self.gains.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::config("rain_gains", "must be non-negative"));
        }
        if !(self.angle_min <= self.angle_max) {
            return Err(Error::config("rain_angle_min", "must not exceed rain_angle_max"));
        }
        Ok(())
    }
}

/// The single-channel streak layer `R ≥ 0` for an `h x w` image.
fn streak_layer(h: usize, w: usize, severity: Severity, seed: u64, cfg: &RainConfig) -> Vec<f64> {
    let s = severity.index();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, s as u64 + 1));
    let q = cfg.quantiles[s];
    let len = cfg.lengths[s];
    let angle = if cfg.angle_min < cfg.angle_max {
        rng.random_range(cfg.angle_min..cfg.angle_max)
    } else {
        cfg.angle_min
    }
    .to_radians();
    let (dx, dy) = (angle.cos(), -angle.sin());
    let half = (len as f64 - 1.0) / 2.0;
    let taps: Vec<(isize, isize)> = (0..len)
        .map(|i| {
            let t = i as f64 - half;
            ((t * dx).round() as isize, (t * dy).round() as isize)
        })
        .collect();

    let mut layer = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let u: f64 = rng.random();
            if u < q {
                continue;
            }
            let v = (u - q) / (1.0 - q);
            for &(ox, oy) in &taps {
                let (yy, xx) = (y as isize + oy, x as isize + ox);
                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                    layer[yy as usize * w + xx as usize] += v;
                }
            }
        }
    }
    for v in &mut layer {
        *v *= cfg.gains[s];
    }
    layer
}

/// `clip(gt + R, 0, 1)` with an achromatic streak layer `R`. Deterministic
/// in `(gt, severity, seed)`.
pub fn generate_rain(gt: &Tensor, severity: Severity, seed: u64, cfg: &RainConfig) -> Result<Tensor> {
    if gt.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::OutOfRange);
    }
    let (c, h, w) = gt.chw();
    let layer = streak_layer(h, w, severity, seed, cfg);
    Ok(Tensor::from_fn(&[c, h, w], |i| (gt.data()[i] + layer[i % (h * w)]).clamp(0.0, 1.0)))
}

/// One rendering per severity, each with its own sub-seed.
pub fn make_pair(name: impl Into<String>, gt: Tensor, seed: u64, cfg: &RainConfig) -> Result<MultiToOnePair> {
    let rainy = Severity::ALL
        .iter()
        .map(|&s| generate_rain(&gt, s, mix_seed(seed, 0x7261_696e + s.index() as u64), cfg))
        .collect::<Result<Vec<_>>>()?;
    MultiToOnePair::new(name, rainy, gt, Severity::ALL.to_vec())
}

/// A fully synthetic split. Pair `i` (counted across trainA, trainB, test)
/// is named `bg{i:05}` and derives every random choice from `(seed, i)`.
pub fn synthesize_split(
    counts: (usize, usize, usize),
    height: usize,
    width: usize,
    seed: u64,
    cfg: &RainConfig,
) -> Result<DatasetSplit> {
    cfg.validate()?;
    let total = counts.0 + counts.1 + counts.2;
    let mut pairs = (0..total).map(|i| {
        let s = mix_seed(seed, i as u64);
        make_pair(format!("bg{i:05}"), procedural_background(height, width, s), s, cfg)
    });
    let mut take = |n: usize| pairs.by_ref().take(n).collect::<Result<Vec<_>>>();
    let split = DatasetSplit { train_a: take(counts.0)?, train_b: take(counts.1)?, test: take(counts.2)? };
    split.verify_disjoint()?;
    Ok(split)
}
