use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Dyadic resolution level: level `d` is `0.5^d` of the input resolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Scale(pub usize);

impl Scale {
    pub fn level(self) -> usize {
        self.0
    }

    pub fn factor(self) -> f64 {
        0.5f64.powi(self.0 as i32)
    }
}

/// Feature maps at consecutive scales `0..=max_level`, all with the same even
/// channel count.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid {
    maps: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn new(maps: Vec<Tensor>) -> Result<Self> {
        let p = FeaturePyramid { maps };
        p.validate()?;
        Ok(p)
    }

    pub fn single(map: Tensor) -> Result<Self> {
        Self::new(vec![map])
    }

    pub fn maps(&self) -> &[Tensor] {
        &self.maps
    }

    pub fn into_maps(self) -> Vec<Tensor> {
        self.maps
    }

    pub fn get(&self, scale: Scale) -> Option<&Tensor> {
        self.maps.get(scale.0)
    }

    pub fn max_level(&self) -> usize {
        self.maps.len() - 1
    }

    pub fn num_scales(&self) -> usize {
        self.maps.len()
    }

    pub fn channels(&self) -> usize {
        self.maps[0].chw().0
    }

    pub fn shapes(&self) -> Vec<(usize, usize, usize)> {
        self.maps.iter().map(Tensor::chw).collect()
    }

    pub fn validate(&self) -> Result<()> {
        check_shapes(&self.shapes())
    }
}

/// The pyramid invariants over `(c, h, w)` triples, level by level.
pub fn check_shapes(shapes: &[(usize, usize, usize)]) -> Result<()> {
    let Some(&(c, h0, w0)) = shapes.first() else {
        return Err(Error::Shape("empty pyramid".into()));
    };
    if c == 0 || c % 2 != 0 {
        return Err(Error::OddChannels(c));
    }
    let top = 1 << (shapes.len() - 1);
    if h0 % top != 0 || w0 % top != 0 {
        return Err(Error::Shape(format!(
            "level-0 size {h0}x{w0} does not halve exactly {} times",
            shapes.len() - 1
        )));
    }
    for (d, &(cd, hd, wd)) in shapes.iter().enumerate() {
        if cd != c {
            return Err(Error::Shape(format!("level {d} has {cd} channels, level 0 has {c}")));
        }
        if (hd, wd) != (h0 >> d, w0 >> d) {
            return Err(Error::Shape(format!(
                "level {d} is {hd}x{wd}, expected {}x{}",
                h0 >> d,
                w0 >> d
            )));
        }
    }
    Ok(())
}

/// Debug-build assertion that a pyramid produced by an operator is well
/// formed.
#[inline]
pub(crate) fn debug_check(shapes: impl FnOnce() -> Vec<(usize, usize, usize)>) {
    if cfg!(debug_assertions) {
        if let Err(e) = check_shapes(&shapes()) {
            panic!("operator produced an invalid pyramid: {e}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consecutive_halving_accepted() {
        let p = FeaturePyramid::new(vec![Tensor::zeros(&[4, 8, 8]), Tensor::zeros(&[4, 4, 4]), Tensor::zeros(&[4, 2, 2])]);
        assert_eq!(p.unwrap().max_level(), 2);
    }

    #[test]
    fn gap_or_channel_mismatch_rejected() {
        assert!(FeaturePyramid::new(vec![Tensor::zeros(&[4, 8, 8]), Tensor::zeros(&[4, 2, 2])]).is_err());
        assert!(FeaturePyramid::new(vec![Tensor::zeros(&[4, 8, 8]), Tensor::zeros(&[6, 4, 4])]).is_err());
        assert!(FeaturePyramid::new(vec![Tensor::zeros(&[3, 8, 8])]).is_err());
    }
}
