use image::imageops::{self, FilterType};
use image::{ImageBuffer, Rgb};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pair::MultiToOnePair;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Training-time transform settings. `patch == 0` keeps the full image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Augment {
    pub patch: usize,
    pub flip: bool,
    /// Rescale the whole image to `patch x patch` instead of cropping.
    pub resize_instead_of_crop: bool,
}

impl Default for Augment {
    fn default() -> Self {
        Augment { patch: 0, flip: true, resize_instead_of_crop: false }
    }
}

impl Augment {
    pub fn apply(&self, pair: &MultiToOnePair, seed: u64) -> Result<MultiToOnePair> {
        if self.patch > 0 && !self.resize_instead_of_crop {
            return augment_with(pair, seed, self.patch, self.flip);
        }
        let base = if self.patch > 0 { resize_pair(pair, self.patch, self.patch)? } else { pair.clone() };
        let flip = self.flip && ChaCha8Rng::seed_from_u64(seed).random_bool(0.5);
        Ok(if flip { map_pair(&base, flip_horizontal) } else { base })
    }
}

fn map_pair(pair: &MultiToOnePair, f: impl Fn(&Tensor) -> Tensor) -> MultiToOnePair {
    MultiToOnePair {
        name: pair.name.clone(),
        rainy: pair.rainy.iter().map(&f).collect(),
        gt: f(&pair.gt),
        severities: pair.severities.clone(),
    }
}

fn crop(t: &Tensor, y0: usize, x0: usize, ph: usize, pw: usize) -> Tensor {
    let (c, _, _) = t.chw();
    let mut out = Tensor::zeros(&[c, ph, pw]);
    for ch in 0..c {
        for y in 0..ph {
            for x in 0..pw {
                out.set(ch, y, x, t.at(ch, y0 + y, x0 + x));
            }
        }
    }
    out
}

fn flip_horizontal(t: &Tensor) -> Tensor {
    let (c, h, w) = t.chw();
    Tensor::from_fn(&[c, h, w], |i| {
        let x = i % w;
        t.data()[i - x + (w - 1 - x)]
    })
}

fn augment_with(pair: &MultiToOnePair, seed: u64, patch: usize, flip: bool) -> Result<MultiToOnePair> {
    let (_, h, w) = pair.gt.chw();
    if patch == 0 || patch > h || patch > w {
        return Err(Error::Shape(format!("patch {patch} does not fit a {h}x{w} image")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y0 = rng.random_range(0..=h - patch);
    let x0 = rng.random_range(0..=w - patch);
    let flip = flip && rng.random_bool(0.5);
    Ok(map_pair(pair, |t| {
        let c = crop(t, y0, x0, patch, patch);
        if flip {
            flip_horizontal(&c)
        } else {
            c
        }
    }))
}

/// One random `patch x patch` crop and one horizontal-flip coin, shared by
/// the ground truth and every rainy image.
pub fn augment(pair: &MultiToOnePair, seed: u64, patch: usize) -> Result<MultiToOnePair> {
    augment_with(pair, seed, patch, true)
}

fn resize_image(t: &Tensor, oh: usize, ow: usize) -> Tensor {
    let (_, h, w) = t.chw();
    let img: ImageBuffer<Rgb<f32>, Vec<f32>> =
        ImageBuffer::from_fn(w as u32, h as u32, |x, y| Rgb(std::array::from_fn(|c| t.at(c, y as usize, x as usize) as f32)));
    let out = imageops::resize(&img, ow as u32, oh as u32, FilterType::Triangle);
    Tensor::from_fn(&[3, oh, ow], |i| {
        let (c, p) = (i / (oh * ow), i % (oh * ow));
        (out.get_pixel((p % ow) as u32, (p / ow) as u32).0[c] as f64).clamp(0.0, 1.0)
    })
}

/// Whole-image rescale of every member of the pair.
pub fn resize_pair(pair: &MultiToOnePair, height: usize, width: usize) -> Result<MultiToOnePair> {
    if height == 0 || width == 0 {
        return Err(Error::Shape("resize target must be non-empty".into()));
    }
    Ok(map_pair(pair, |t| resize_image(t, height, width)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Severity;

    fn grid_pair(h: usize, w: usize) -> MultiToOnePair {
        let g = Tensor::from_fn(&[3, h, w], |i| (i % (h * w)) as f64);
        MultiToOnePair::new("g", vec![g.clone(), g.clone()], g, vec![Severity::Light, Severity::Heavy]).unwrap()
    }

    #[test]
    fn crop_is_shared_across_the_pair() {
        let p = grid_pair(12, 10);
        let a = augment(&p, 7, 6).unwrap();
        assert!(a.rainy.iter().all(|r| r == &a.gt));
        assert_eq!(a.gt.dims(), &[3, 6, 6]);
    }

    #[test]
    fn flip_is_an_involution() {
        let p = grid_pair(4, 5);
        assert_eq!(flip_horizontal(&flip_horizontal(&p.gt)), p.gt);
        assert_eq!(flip_horizontal(&p.gt).at(0, 1, 0), p.gt.at(0, 1, 4));
    }

    #[test]
    fn oversized_patch_rejected() {
        assert!(augment(&grid_pair(60, 60), 0, 64).is_err());
    }
}
