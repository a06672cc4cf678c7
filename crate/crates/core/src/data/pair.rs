use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::params::Fnv;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Severity {
    Light,
    Medium,
    Heavy,
}

impl Severity {
    pub const ALL: [Severity; 3] = [Severity::Light, Severity::Medium, Severity::Heavy];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Severity::Light => "light",
            Severity::Medium => "medium",
            Severity::Heavy => "heavy",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Severity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Severity::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Dataset(format!("unknown rain severity {s:?}")))
    }
}

/// `N` rainy renderings of one clean background.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiToOnePair {
    pub name: String,
    pub rainy: Vec<Tensor>,
    pub gt: Tensor,
    pub severities: Vec<Severity>,
}

impl MultiToOnePair {
    pub fn new(name: impl Into<String>, rainy: Vec<Tensor>, gt: Tensor, severities: Vec<Severity>) -> Result<Self> {
        let p = MultiToOnePair { name: name.into(), rainy, gt, severities };
        p.validate()?;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.rainy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rainy.is_empty()
    }

    pub fn dims(&self) -> &[usize] {
        self.gt.dims()
    }

    pub fn validate(&self) -> Result<()> {
        if self.rainy.is_empty() {
            return Err(Error::Dataset(format!("pair {} has no rainy images", self.name)));
        }
        if self.rainy.len() != self.severities.len() {
            return Err(Error::Dataset(format!(
                "pair {} has {} rainy images but {} severity tags",
                self.name,
                self.rainy.len(),
                self.severities.len()
            )));
        }
        let d = self.gt.dims();
        if d.len() != 3 || d[0] != 3 {
            return Err(Error::Shape(format!("pair {}: ground truth must be 3 x H x W, got {d:?}", self.name)));
        }
        if let Some(r) = self.rainy.iter().find(|r| r.dims() != d) {
            return Err(Error::Shape(format!(
                "pair {}: rainy image {:?} does not match ground truth {d:?}",
                self.name,
                r.dims()
            )));
        }
        Ok(())
    }

    /// Hash of the ground-truth pixels; identifies the background.
    pub fn gt_hash(&self) -> u64 {
        let mut h = Fnv::new();
        for d in self.gt.dims() {
            h.write(&(*d as u64).to_le_bytes());
        }
        for v in self.gt.data() {
            h.write(&v.to_bits().to_le_bytes());
        }
        h.finish()
    }
}

/// The two disjoint search splits and the held-out test split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetSplit {
    pub train_a: Vec<MultiToOnePair>,
    pub train_b: Vec<MultiToOnePair>,
    pub test: Vec<MultiToOnePair>,
}

impl DatasetSplit {
    /// Fails if a background (by name or by pixel content) appears in both
    /// `trainA` and `trainB`.
    pub fn verify_disjoint(&self) -> Result<()> {
        let names: HashSet<&str> = self.train_a.iter().map(|p| p.name.as_str()).collect();
        let hashes: HashSet<u64> = self.train_a.iter().map(MultiToOnePair::gt_hash).collect();
        for p in &self.train_b {
            if names.contains(p.name.as_str()) || hashes.contains(&p.gt_hash()) {
                return Err(Error::Dataset(format!("background {} appears in both trainA and trainB", p.name)));
            }
        }
        Ok(())
    }

    /// `trainA ∪ trainB`, the retraining set.
    pub fn training(&self) -> Vec<MultiToOnePair> {
        self.train_a.iter().chain(&self.train_b).cloned().collect()
    }

    pub fn validate(&self) -> Result<()> {
        for p in self.train_a.iter().chain(&self.train_b).chain(&self.test) {
            p.validate()?;
        }
        self.verify_disjoint()
    }
}
