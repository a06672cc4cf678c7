use crate::autograd::Var;
use crate::params::{init_tensor, Graph, Init, ParamId, ParamStore};

/// Creates parameters under a path prefix with seeded initialisation.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    seed: u64,
    prefix: String,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        ParamBuilder {
            store,
            seed,
            prefix: String::new(),
        }
    }

    /// A builder whose paths are prefixed by `name.`.
    pub fn scope(&mut self, name: &str) -> ParamBuilder<'_> {
        ParamBuilder {
            store: self.store,
            seed: self.seed,
            prefix: format!("{}{name}.", self.prefix),
        }
    }

    pub fn param(&mut self, name: &str, dims: &[usize], init: Init) -> ParamId {
        let path = format!("{}{name}", self.prefix);
        let t = init_tensor(self.seed, &path, dims, init);
        self.store.insert(path, t)
    }

    pub fn conv(&mut self, name: &str, spec: ConvSpec) -> Conv {
        let mut b = self.scope(name);
        let fan_in = spec.in_ch / spec.groups * spec.kernel * spec.kernel;
        let w_init = if spec.zero_init { Init::Zeros } else { Init::FanInUniform { fan_in } };
        let weight = b.param(
            "weight",
            &[spec.out_ch, spec.in_ch / spec.groups, spec.kernel, spec.kernel],
            w_init,
        );
        let bias = b.param("bias", &[spec.out_ch], Init::Zeros);
        Conv { weight, bias, spec }
    }

    pub fn res_block(&mut self, name: &str, channels: usize) -> ResBlock {
        let mut b = self.scope(name);
        ResBlock {
            conv1: b.conv("conv1", ConvSpec::same3(channels, channels)),
            conv2: b.conv("conv2", ConvSpec { zero_init: true, ..ConvSpec::same3(channels, channels) }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub groups: usize,
    pub zero_init: bool,
}

impl ConvSpec {
    /// 3x3, stride 1, padding 1.
    pub fn same3(in_ch: usize, out_ch: usize) -> Self {
        ConvSpec { in_ch, out_ch, kernel: 3, stride: 1, groups: 1, zero_init: false }
    }

    /// 3x3, stride 2, padding 1: halves height and width.
    pub fn down3(ch: usize) -> Self {
        ConvSpec { stride: 2, ..Self::same3(ch, ch) }
    }

    pub fn pointwise(in_ch: usize, out_ch: usize) -> Self {
        ConvSpec { in_ch, out_ch, kernel: 1, stride: 1, groups: 1, zero_init: false }
    }

    /// 3x3 depthwise.
    pub fn depthwise3(ch: usize) -> Self {
        ConvSpec { groups: ch, ..Self::same3(ch, ch) }
    }
}

/// Convolution with bias; padding is `kernel / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub spec: ConvSpec,
}

impl Conv {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let s = self.spec;
        g.tape.conv2d(x, w, Some(b), s.stride, s.kernel / 2, s.groups)
    }

    pub fn param_count(&self) -> usize {
        let s = self.spec;
        s.out_ch * (s.in_ch / s.groups) * s.kernel * s.kernel + s.out_ch
    }
}

/// `x + conv2(relu(conv1(x)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl ResBlock {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.conv1.forward(g, x);
        let h = g.tape.relu(h);
        let h = self.conv2.forward(g, h);
        g.tape.add(h, x)
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count()
    }

    pub fn channels(&self) -> usize {
        self.conv1.spec.in_ch
    }
}
