//! Transition, parallel and fusion modules over feature pyramids.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::params::{Graph, ParamStore};
use crate::pyramid::{debug_check, FeaturePyramid};
use crate::search_space::layers::{Conv, ConvSpec, ParamBuilder, ResBlock};

pub(crate) fn shapes(g: &Graph, p: &[Var]) -> Vec<(usize, usize, usize)> {
    p.iter().map(|&v| g.value(v).chw()).collect()
}

pub(crate) fn check_input(g: &Graph, p: &[Var], channels: usize, levels: usize, what: &str) -> Result<()> {
    if p.len() != levels {
        return Err(Error::Shape(format!("{what} expects {levels} scales, got {}", p.len())));
    }
    for (d, &v) in p.iter().enumerate() {
        let c = g.value(v).chw().0;
        if c != channels {
            return Err(Error::Shape(format!("{what}: level {d} has {c} channels, weights expect {channels}")));
        }
    }
    Ok(())
}

/// Run a pyramid operator on concrete tensors, outside any training graph.
pub(crate) fn apply_pyramid(
    store: &ParamStore,
    p: &FeaturePyramid,
    f: impl FnOnce(&mut Graph, &[Var]) -> Result<Vec<Var>>,
) -> Result<FeaturePyramid> {
    p.validate()?;
    let mut g = Graph::new(store, false);
    let vars: Vec<Var> = p.maps().iter().map(|m| g.constant(m.clone())).collect();
    let out = f(&mut g, &vars)?;
    FeaturePyramid::new(out.iter().map(|&v| g.value(v).clone()).collect())
}

/// Adds scale `level` by a strided convolution of scale `level - 1`; the
/// existing scales pass through untouched.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub down: Conv,
    pub level: usize,
}

impl Transition {
    pub fn new(b: &mut ParamBuilder, channels: usize, level: usize) -> Self {
        assert!(level >= 1);
        Transition {
            down: b.conv("down", ConvSpec::down3(channels)),
            level,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var]) -> Result<Vec<Var>> {
        check_input(g, p, self.down.spec.in_ch, self.level, "transition")?;
        let mut out = p.to_vec();
        out.push(self.down.forward(g, p[self.level - 1]));
        debug_check(|| shapes(g, &out));
        Ok(out)
    }

    pub fn apply(&self, store: &ParamStore, p: &FeaturePyramid) -> Result<FeaturePyramid> {
        apply_pyramid(store, p, |g, v| self.forward(g, v))
    }

    pub fn param_count(&self) -> usize {
        self.down.param_count()
    }
}

/// One residual block per scale, no cross-scale exchange.
#[derive(Clone, Debug, PartialEq)]
pub struct Parallel {
    pub blocks: Vec<ResBlock>,
}

impl Parallel {
    pub fn new(b: &mut ParamBuilder, channels: usize, scales: usize) -> Self {
        Parallel {
            blocks: (0..scales).map(|d| b.res_block(&format!("s{d}"), channels)).collect(),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var]) -> Result<Vec<Var>> {
        check_input(g, p, self.blocks[0].channels(), self.blocks.len(), "parallel")?;
        let out: Vec<Var> = p.iter().zip(&self.blocks).map(|(&x, blk)| blk.forward(g, x)).collect();
        debug_check(|| shapes(g, &out));
        Ok(out)
    }

    pub fn apply(&self, store: &ParamStore, p: &FeaturePyramid) -> Result<FeaturePyramid> {
        apply_pyramid(store, p, |g, v| self.forward(g, v))
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(ResBlock::param_count).sum()
    }
}

/// A learned downsampling path from scale `src` to a coarser scale `dst`:
/// `dst - src` chained stride-2 convolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct DownPath {
    pub src: usize,
    pub dst: usize,
    pub convs: Vec<Conv>,
}

/// Every output scale receives the ReLU of the sum over all input scales:
/// identity from itself, strided convolutions from finer scales and bilinear
/// upsampling from coarser ones.
#[derive(Clone, Debug, PartialEq)]
pub struct Fusion {
    pub channels: usize,
    pub scales: usize,
    pub paths: Vec<DownPath>,
}

impl Fusion {
    pub fn new(b: &mut ParamBuilder, channels: usize, scales: usize) -> Self {
        let mut paths = Vec::new();
        for src in 0..scales {
            for dst in src + 1..scales {
                let mut pb = b.scope(&format!("{src}to{dst}"));
                let convs = (0..dst - src).map(|i| pb.conv(&i.to_string(), ConvSpec::down3(channels))).collect();
                paths.push(DownPath { src, dst, convs });
            }
        }
        Fusion { channels, scales, paths }
    }

    fn path(&self, src: usize, dst: usize) -> Result<&DownPath> {
        self.paths
            .iter()
            .find(|p| p.src == src && p.dst == dst)
            .ok_or_else(|| Error::Shape(format!("fusion has no weights for path {src}->{dst}")))
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var]) -> Result<Vec<Var>> {
        check_input(g, p, self.channels, self.scales, "fusion")?;
        let mut out = Vec::with_capacity(p.len());
        for dst in 0..p.len() {
            let (_, dh, dw) = g.value(p[dst]).chw();
            let mut terms = Vec::with_capacity(p.len());
            for (src, &x) in p.iter().enumerate() {
                let term = match src.cmp(&dst) {
                    std::cmp::Ordering::Equal => x,
                    std::cmp::Ordering::Less => {
                        let path = self.path(src, dst)?;
                        path.convs.iter().fold(x, |h, c| c.forward(g, h))
                    }
                    std::cmp::Ordering::Greater => g.tape.resize(x, dh, dw),
                };
                terms.push(term);
            }
            let s = g.tape.add_all(&terms);
            out.push(g.tape.relu(s));
        }
        debug_check(|| shapes(g, &out));
        Ok(out)
    }

    pub fn apply(&self, store: &ParamStore, p: &FeaturePyramid) -> Result<FeaturePyramid> {
        apply_pyramid(store, p, |g, v| self.forward(g, v))
    }

    pub fn param_count(&self) -> usize {
        self.paths.iter().flat_map(|p| &p.convs).map(Conv::param_count).sum()
    }
}

/// Collapses every scale onto scale 0 by upsampling, sums, applies ReLU.
pub(crate) fn fuse_to_full(g: &mut Graph, p: &[Var]) -> Var {
    let (_, h, w) = g.value(p[0]).chw();
    let terms: Vec<Var> = p
        .iter()
        .enumerate()
        .map(|(d, &x)| if d == 0 { x } else { g.tape.resize(x, h, w) })
        .collect();
    let s = g.tape.add_all(&terms);
    g.tape.relu(s)
}
