//! The seven candidate attention operations and the split-channel attention
//! module built from them.

use std::fmt;
use std::str::FromStr;

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::genotype::ATTENTION_SITES;
use crate::params::{Graph, ParamStore};
use crate::pyramid::{debug_check, FeaturePyramid};
use crate::search_space::layers::{Conv, ConvSpec, ParamBuilder};
use crate::search_space::modules::{apply_pyramid, check_input, shapes};
use crate::tensor::Tensor;

/// Hidden width of the channel-attention MLP is `channels / REDUCTION`.
pub const REDUCTION: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttentionOpKind {
    ChannelV1 = 0,
    ChannelV2 = 1,
    Spatial = 2,
    Norm = 3,
    Cba = 4,
    Identity = 5,
    Zero = 6,
}

impl AttentionOpKind {
    pub const COUNT: usize = 7;

    pub const ALL: [AttentionOpKind; 7] = [
        AttentionOpKind::ChannelV1,
        AttentionOpKind::ChannelV2,
        AttentionOpKind::Spatial,
        AttentionOpKind::Norm,
        AttentionOpKind::Cba,
        AttentionOpKind::Identity,
        AttentionOpKind::Zero,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(k: usize) -> Option<Self> {
        Self::ALL.get(k).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            AttentionOpKind::ChannelV1 => "ca_v1",
            AttentionOpKind::ChannelV2 => "ca_v2",
            AttentionOpKind::Spatial => "spatial",
            AttentionOpKind::Norm => "norm",
            AttentionOpKind::Cba => "cba",
            AttentionOpKind::Identity => "identity",
            AttentionOpKind::Zero => "zero",
        }
    }
}

impl FromStr for AttentionOpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownOp(s.to_string()))
    }
}

impl fmt::Display for AttentionOpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Two-layer bottleneck MLP on pooled `[c, 1, 1]` descriptors, written as
/// pointwise convolutions.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMlp {
    pub fc1: Conv,
    pub fc2: Conv,
}

impl ChannelMlp {
    fn new(b: &mut ParamBuilder, channels: usize) -> Self {
        let hidden = (channels / REDUCTION).max(1);
        ChannelMlp {
            fc1: b.conv("fc1", ConvSpec::pointwise(channels, hidden)),
            fc2: b.conv("fc2", ConvSpec::pointwise(hidden, channels)),
        }
    }

    fn forward(&self, g: &mut Graph, pooled: Var) -> Var {
        let h = self.fc1.forward(g, pooled);
        let h = g.tape.relu(h);
        self.fc2.forward(g, h)
    }

    fn param_count(&self) -> usize {
        self.fc1.param_count() + self.fc2.param_count()
    }
}

/// One attention operation instance with its own weights.
#[derive(Clone, Debug, PartialEq)]
pub enum AttentionOp {
    ChannelV1(ChannelMlp),
    ChannelV2(ChannelMlp),
    /// 3x3 convolution over `[channel-mean; channel-max]`, 2 -> 1 channels.
    Spatial(Conv),
    /// 3x3 depthwise convolution.
    Norm(Conv),
    Cba { spatial: Conv, norm: Conv },
    Identity,
    Zero,
}

impl AttentionOp {
    /// `channels` is the width of the split group the op is applied to.
    pub fn new(b: &mut ParamBuilder, kind: AttentionOpKind, channels: usize) -> Self {
        let mut b = b.scope(kind.name());
        match kind {
            AttentionOpKind::ChannelV1 => AttentionOp::ChannelV1(ChannelMlp::new(&mut b, channels)),
            AttentionOpKind::ChannelV2 => AttentionOp::ChannelV2(ChannelMlp::new(&mut b, channels)),
            AttentionOpKind::Spatial => AttentionOp::Spatial(b.conv("conv", ConvSpec::same3(2, 1))),
            AttentionOpKind::Norm => AttentionOp::Norm(b.conv("dw", ConvSpec::depthwise3(channels))),
            AttentionOpKind::Cba => AttentionOp::Cba {
                spatial: b.conv("spatial", ConvSpec::same3(2, 1)),
                norm: b.conv("dw", ConvSpec::depthwise3(channels)),
            },
            AttentionOpKind::Identity => AttentionOp::Identity,
            AttentionOpKind::Zero => AttentionOp::Zero,
        }
    }

    pub fn kind(&self) -> AttentionOpKind {
        match self {
            AttentionOp::ChannelV1(_) => AttentionOpKind::ChannelV1,
            AttentionOp::ChannelV2(_) => AttentionOpKind::ChannelV2,
            AttentionOp::Spatial(_) => AttentionOpKind::Spatial,
            AttentionOp::Norm(_) => AttentionOpKind::Norm,
            AttentionOp::Cba { .. } => AttentionOpKind::Cba,
            AttentionOp::Identity => AttentionOpKind::Identity,
            AttentionOp::Zero => AttentionOpKind::Zero,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            AttentionOp::ChannelV1(m) | AttentionOp::ChannelV2(m) => m.param_count(),
            AttentionOp::Spatial(c) | AttentionOp::Norm(c) => c.param_count(),
            AttentionOp::Cba { spatial, norm } => spatial.param_count() + norm.param_count(),
            AttentionOp::Identity | AttentionOp::Zero => 0,
        }
    }

    fn expected_channels(&self) -> Option<usize> {
        match self {
            AttentionOp::ChannelV1(m) | AttentionOp::ChannelV2(m) => Some(m.fc1.spec.in_ch),
            AttentionOp::Norm(c) | AttentionOp::Cba { norm: c, .. } => Some(c.spec.in_ch),
            _ => None,
        }
    }

    /// The gate an op multiplies its input by, if it has one.
    pub fn gate(&self, g: &mut Graph, z: Var) -> Option<Var> {
        match self {
            AttentionOp::ChannelV1(mlp) => {
                let avg = g.tape.global_avg_pool(z);
                let logit = mlp.forward(g, avg);
                Some(g.tape.sigmoid(logit))
            }
            AttentionOp::ChannelV2(mlp) => {
                let avg = g.tape.global_avg_pool(z);
                let max = g.tape.global_max_pool(z);
                let a = mlp.forward(g, avg);
                let m = mlp.forward(g, max);
                let logit = g.tape.add(a, m);
                Some(g.tape.sigmoid(logit))
            }
            AttentionOp::Spatial(conv) => Some(spatial_gate(g, conv, z)),
            AttentionOp::Norm(conv) => {
                let logit = conv.forward(g, z);
                Some(g.tape.sigmoid(logit))
            }
            AttentionOp::Cba { .. } | AttentionOp::Identity | AttentionOp::Zero => None,
        }
    }

    pub fn forward(&self, g: &mut Graph, z: Var) -> Result<Var> {
        if let Some(c) = self.expected_channels() {
            let zc = g.value(z).chw().0;
            if zc != c {
                return Err(Error::Shape(format!("{} weights expect {c} channels, got {zc}", self.kind())));
            }
        }
        Ok(match self {
            AttentionOp::ChannelV1(_) | AttentionOp::ChannelV2(_) => {
                let gate = self.gate(g, z).expect("channel op has a gate");
                g.tape.channel_gate(z, gate)
            }
            AttentionOp::Spatial(_) => {
                let gate = self.gate(g, z).expect("spatial op has a gate");
                g.tape.spatial_gate(z, gate)
            }
            AttentionOp::Norm(_) => {
                let gate = self.gate(g, z).expect("norm op has a gate");
                g.tape.mul(gate, z)
            }
            AttentionOp::Cba { spatial, norm } => {
                let sg = spatial_gate(g, spatial, z);
                let s = g.tape.spatial_gate(z, sg);
                let logit = norm.forward(g, s);
                let ng = g.tape.sigmoid(logit);
                g.tape.mul(ng, s)
            }
            AttentionOp::Identity => z,
            AttentionOp::Zero => {
                let dims = g.value(z).dims().to_vec();
                g.constant(Tensor::zeros(&dims))
            }
        })
    }

    /// Evaluate on a concrete map.
    pub fn apply(&self, store: &ParamStore, z: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new(store, false);
        let v = g.constant(z.clone());
        let out = self.forward(&mut g, v)?;
        Ok(g.value(out).clone())
    }
}

fn spatial_gate(g: &mut Graph, conv: &Conv, z: Var) -> Var {
    let avg = g.tape.channel_mean_pool(z);
    let max = g.tape.channel_max_pool(z);
    let pooled = g.tape.concat(&[avg, max]);
    let logit = conv.forward(g, pooled);
    g.tape.sigmoid(logit)
}

/// How one attention site chooses among its candidates.
#[derive(Clone, Copy, Debug)]
pub enum SiteWeights {
    Fixed(AttentionOpKind),
    /// Softmax weights over all seven candidates, in kind order.
    Mixed([Var; AttentionOpKind::COUNT]),
}

/// The candidates held at one site of one scale, indexed by kind.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteOps {
    pub ops: Vec<Option<AttentionOp>>,
}

impl SiteOps {
    fn new(b: &mut ParamBuilder, kinds: &[AttentionOpKind], channels: usize) -> Self {
        let mut ops = vec![None; AttentionOpKind::COUNT];
        for &k in kinds {
            ops[k.index()] = Some(AttentionOp::new(b, k, channels));
        }
        SiteOps { ops }
    }

    pub fn op(&self, kind: AttentionOpKind) -> Result<&AttentionOp> {
        self.ops[kind.index()]
            .as_ref()
            .ok_or_else(|| Error::Shape(format!("attention site holds no weights for {kind}")))
    }

    fn forward(&self, g: &mut Graph, z: Var, weights: &SiteWeights) -> Result<Var> {
        match weights {
            SiteWeights::Fixed(kind) => self.op(*kind)?.forward(g, z),
            SiteWeights::Mixed(beta) => {
                let mut terms = Vec::with_capacity(AttentionOpKind::COUNT);
                for kind in AttentionOpKind::ALL {
                    // Zero contributes nothing to the value or to any gradient.
                    if kind == AttentionOpKind::Zero {
                        continue;
                    }
                    let y = self.op(kind)?.forward(g, z)?;
                    terms.push(g.tape.scale(y, beta[kind.index()]));
                }
                Ok(g.tape.add_all(&terms))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleAttention {
    pub sites: [SiteOps; ATTENTION_SITES],
    /// 1x1 convolution from `[Y1; Y2; Y1 + Y2]` (`3C/2` channels) back to `C`.
    pub fuse: Conv,
}

/// Split-channel attention applied independently at every scale:
/// `Y1 = Φa(X1)`, `Y2 = Φb(X2) + Φc(Y1)`, output `f([Y1; Y2; Y1 + Y2])`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionModule {
    pub channels: usize,
    pub scales: Vec<ScaleAttention>,
}

impl AttentionModule {
    /// `kinds[s]` lists the candidates materialised at site `s`.
    pub fn new(b: &mut ParamBuilder, channels: usize, scales: usize, kinds: &[Vec<AttentionOpKind>; ATTENTION_SITES]) -> Self {
        assert!(channels % 2 == 0);
        let half = channels / 2;
        let scales = (0..scales)
            .map(|d| {
                let mut sb = b.scope(&format!("s{d}"));
                let sites = std::array::from_fn(|s| SiteOps::new(&mut sb.scope(&format!("site{s}")), &kinds[s], half));
                let fuse = sb.conv("fuse", ConvSpec::pointwise(3 * half, channels));
                ScaleAttention { sites, fuse }
            })
            .collect();
        AttentionModule { channels, scales }
    }

    /// All seven candidates at every site.
    pub fn full(b: &mut ParamBuilder, channels: usize, scales: usize) -> Self {
        let all = AttentionOpKind::ALL.to_vec();
        Self::new(b, channels, scales, &[all.clone(), all.clone(), all])
    }

    /// Only the chosen candidate at each site.
    pub fn chosen(b: &mut ParamBuilder, channels: usize, scales: usize, kinds: [AttentionOpKind; ATTENTION_SITES]) -> Self {
        Self::new(b, channels, scales, &kinds.map(|k| vec![k]))
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], sites: &[SiteWeights; ATTENTION_SITES]) -> Result<Vec<Var>> {
        if self.channels % 2 != 0 {
            return Err(Error::OddChannels(self.channels));
        }
        check_input(g, p, self.channels, self.scales.len(), "attention")?;
        let half = self.channels / 2;
        let mut out = Vec::with_capacity(p.len());
        for (&x, sa) in p.iter().zip(&self.scales) {
            let x1 = g.tape.slice_channels(x, 0, half);
            let x2 = g.tape.slice_channels(x, half, half);
            let y1 = sa.sites[0].forward(g, x1, &sites[0])?;
            let a = sa.sites[1].forward(g, x2, &sites[1])?;
            let b = sa.sites[2].forward(g, y1, &sites[2])?;
            let y2 = g.tape.add(a, b);
            let ybar = g.tape.add(y1, y2);
            let cat = g.tape.concat(&[y1, y2, ybar]);
            out.push(sa.fuse.forward(g, cat));
        }
        debug_check(|| shapes(g, &out));
        Ok(out)
    }

    pub fn apply(&self, store: &ParamStore, p: &FeaturePyramid, kinds: [AttentionOpKind; ATTENTION_SITES]) -> Result<FeaturePyramid> {
        apply_pyramid(store, p, |g, v| self.forward(g, v, &kinds.map(SiteWeights::Fixed)))
    }

    /// Parameters of candidate `kind` at `site`, summed over scales.
    pub fn site_param_count(&self, site: usize, kind: AttentionOpKind) -> usize {
        self.scales
            .iter()
            .filter_map(|s| s.sites[site].ops[kind.index()].as_ref())
            .map(AttentionOp::param_count)
            .sum()
    }

    pub fn param_count(&self) -> usize {
        self.scales
            .iter()
            .map(|s| {
                s.fuse.param_count()
                    + s.sites.iter().flat_map(|site| site.ops.iter().flatten()).map(AttentionOp::param_count).sum::<usize>()
            })
            .sum()
    }
}
