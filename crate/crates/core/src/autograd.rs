//! A small reverse-mode tape over [`Tensor`] values.
//!
//! Every operator appends one node; [`Tape::backward`] walks the nodes in
//! reverse and accumulates gradients into whichever leaves were created with
//! [`Tape::var`]. Leaves created with [`Tape::constant`] and everything that
//! depends only on them are skipped during the backward sweep.

use std::rc::Rc;

use crate::kernels::{self, ConvGeom};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, Var),
    MulConst(Var, f64),
    AddConst(Var),
    ChannelGate(Var, Var),
    SpatialGate(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    GlobalAvg(Var),
    GlobalMax(Var, Vec<usize>),
    ChannelMean(Var),
    ChannelMax(Var, Vec<usize>),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Resize(Var),
    Softmax(Var),
    Index(Var, usize),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
    Filter1d { x: Var, kern: Rc<Vec<f64>>, vertical: bool },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward sweep, indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// The gradient of `v`, or zeros shaped like `like` when `v` did not
    /// influence the root.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.dims()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    /// A leaf that receives a gradient.
    pub fn var(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that does not.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn chw(&self, v: Var) -> (usize, usize, usize) {
        self.value(v).chw()
    }

    /// 2-D convolution. `w` is `[out, in / groups, k, k]`, `b` is `[out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize, groups: usize) -> Var {
        let (c, h, wd) = self.chw(x);
        let wdims = self.dims(w).to_vec();
        assert_eq!(wdims.len(), 4, "conv weight must be 4-D");
        assert_eq!(wdims[1] * groups, c, "conv expects {} input channels, got {c}", wdims[1] * groups);
        let geom = ConvGeom {
            in_ch: c,
            out_ch: wdims[0],
            h,
            w: wd,
            k: wdims[2],
            stride,
            pad,
            groups,
        };
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let (oh, ow) = geom.out_hw();
        let needs = self.needs(&[x, w]) || b.is_some_and(|b| self.needs(&[b]));
        self.push(Tensor::from_vec(&[geom.out_ch, oh, ow], out), Op::Conv { x, w, b, geom }, needs)
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dims(), vb.dims(), "elementwise operands differ in shape");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::from_vec(va.dims(), data);
        let needs = self.needs(&[a, b]);
        self.push(t, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Sum of several equally shaped values, left to right.
    pub fn add_all(&mut self, vars: &[Var]) -> Var {
        let (&first, rest) = vars.split_first().expect("add_all of nothing");
        rest.iter().fold(first, |acc, &v| self.add(acc, v))
    }

    /// `x * s` for a one-element `s`.
    pub fn scale(&mut self, x: Var, s: Var) -> Var {
        let sv = self.value(s).item();
        let t = self.value(x).map(|v| v * sv);
        let needs = self.needs(&[x, s]);
        self.push(t, Op::Scale(x, s), needs)
    }

    pub fn mul_const(&mut self, x: Var, k: f64) -> Var {
        let t = self.value(x).map(|v| v * k);
        let needs = self.needs(&[x]);
        self.push(t, Op::MulConst(x, k), needs)
    }

    pub fn add_const(&mut self, x: Var, k: f64) -> Var {
        let t = self.value(x).map(|v| v + k);
        let needs = self.needs(&[x]);
        self.push(t, Op::AddConst(x), needs)
    }

    /// `x[c, y, x] * g[c]` for a `[c, 1, 1]` gate.
    pub fn channel_gate(&mut self, x: Var, g: Var) -> Var {
        let (c, h, w) = self.chw(x);
        assert_eq!(self.dims(g), &[c, 1, 1], "channel gate shape");
        let gv = self.value(g).data();
        let plane = h * w;
        let t = Tensor::from_fn(&[c, h, w], |i| self.value(x).data()[i] * gv[i / plane]);
        let needs = self.needs(&[x, g]);
        self.push(t, Op::ChannelGate(x, g), needs)
    }

    /// `x[c, y, x] * g[y, x]` for a `[1, h, w]` gate.
    pub fn spatial_gate(&mut self, x: Var, g: Var) -> Var {
        let (c, h, w) = self.chw(x);
        assert_eq!(self.dims(g), &[1, h, w], "spatial gate shape");
        let gv = self.value(g).data();
        let plane = h * w;
        let t = Tensor::from_fn(&[c, h, w], |i| self.value(x).data()[i] * gv[i % plane]);
        let needs = self.needs(&[x, g]);
        self.push(t, Op::SpatialGate(x, g), needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x).map(|v| v.max(0.0));
        let needs = self.needs(&[x]);
        self.push(t, Op::Relu(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x).map(sigmoid);
        let needs = self.needs(&[x]);
        self.push(t, Op::Sigmoid(x), needs)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        let t = self.value(x).map(f64::ln);
        let needs = self.needs(&[x]);
        self.push(t, Op::Ln(x), needs)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero where clamping applied.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let t = self.value(x).clamp(lo, hi);
        let needs = self.needs(&[x]);
        self.push(t, Op::Clamp(x, lo, hi), needs)
    }

    /// Spatial mean per channel, `[c, h, w] -> [c, 1, 1]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (c, h, w) = self.chw(x);
        let d = self.value(x).data();
        let t = Tensor::from_fn(&[c, 1, 1], |ch| {
            d[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / (h * w) as f64
        });
        let needs = self.needs(&[x]);
        self.push(t, Op::GlobalAvg(x), needs)
    }

    /// Spatial max per channel, `[c, h, w] -> [c, 1, 1]`.
    pub fn global_max_pool(&mut self, x: Var) -> Var {
        let (c, h, w) = self.chw(x);
        let d = self.value(x).data();
        let plane = h * w;
        let arg: Vec<usize> = (0..c)
            .map(|ch| argmax(&d[ch * plane..(ch + 1) * plane]) + ch * plane)
            .collect();
        let t = Tensor::from_vec(&[c, 1, 1], arg.iter().map(|&i| d[i]).collect());
        let needs = self.needs(&[x]);
        self.push(t, Op::GlobalMax(x, arg), needs)
    }

    /// Mean over channels, `[c, h, w] -> [1, h, w]`.
    pub fn channel_mean_pool(&mut self, x: Var) -> Var {
        let (c, h, w) = self.chw(x);
        let d = self.value(x).data();
        let plane = h * w;
        let t = Tensor::from_fn(&[1, h, w], |i| (0..c).map(|ch| d[ch * plane + i]).sum::<f64>() / c as f64);
        let needs = self.needs(&[x]);
        self.push(t, Op::ChannelMean(x), needs)
    }

    /// Max over channels, `[c, h, w] -> [1, h, w]`.
    pub fn channel_max_pool(&mut self, x: Var) -> Var {
        let (c, h, w) = self.chw(x);
        let d = self.value(x).data();
        let plane = h * w;
        let arg: Vec<usize> = (0..plane)
            .map(|i| {
                let mut best = i;
                for ch in 1..c {
                    if d[ch * plane + i] > d[best] {
                        best = ch * plane + i;
                    }
                }
                best
            })
            .collect();
        let t = Tensor::from_vec(&[1, h, w], arg.iter().map(|&i| d[i]).collect());
        let needs = self.needs(&[x]);
        self.push(t, Op::ChannelMax(x, arg), needs)
    }

    /// Concatenate feature maps along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let (_, h, w) = self.chw(parts[0]);
        let mut data = Vec::new();
        let mut c = 0;
        for &p in parts {
            let (pc, ph, pw) = self.chw(p);
            assert_eq!((ph, pw), (h, w), "concat spatial mismatch");
            c += pc;
            data.extend_from_slice(self.value(p).data());
        }
        let needs = self.needs(parts);
        self.push(Tensor::from_vec(&[c, h, w], data), Op::Concat(parts.to_vec()), needs)
    }

    /// Channels `[start, start + len)`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let t = self.value(x).channels(start, len);
        let needs = self.needs(&[x]);
        self.push(t, Op::Slice(x, start), needs)
    }

    /// Bilinear resize with half-pixel centers.
    pub fn resize(&mut self, x: Var, oh: usize, ow: usize) -> Var {
        let (c, h, w) = self.chw(x);
        let t = Tensor::from_vec(&[c, oh, ow], kernels::resize_forward(self.value(x).data(), c, h, w, oh, ow));
        let needs = self.needs(&[x]);
        self.push(t, Op::Resize(x), needs)
    }

    /// Softmax over every element of `x`.
    pub fn softmax(&mut self, x: Var) -> Var {
        let t = softmax_tensor(self.value(x));
        let needs = self.needs(&[x]);
        self.push(t, Op::Softmax(x), needs)
    }

    /// Element `i` of `x` (flat index) as a scalar.
    pub fn index(&mut self, x: Var, i: usize) -> Var {
        let t = Tensor::scalar(self.value(x).data()[i]);
        let needs = self.needs(&[x]);
        self.push(t, Op::Index(x, i), needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).sum());
        let needs = self.needs(&[x]);
        self.push(t, Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = Tensor::scalar(self.value(x).mean());
        let needs = self.needs(&[x]);
        self.push(t, Op::Mean(x), needs)
    }

    /// Mean squared difference over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.dims(), vb.dims(), "mse operands differ in shape");
        let n = va.numel() as f64;
        let s: f64 = va.data().iter().zip(vb.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let needs = self.needs(&[a, b]);
        self.push(Tensor::scalar(s / n), Op::Mse(a, b), needs)
    }

    /// Valid-mode 1-D correlation along x, or along y when `vertical`.
    pub fn filter1d(&mut self, x: Var, kern: Rc<Vec<f64>>, vertical: bool) -> Var {
        let (c, h, w) = self.chw(x);
        let k = kern.len();
        let (oh, ow) = if vertical { (h + 1 - k, w) } else { (h, w + 1 - k) };
        let t = Tensor::from_vec(&[c, oh, ow], kernels::filter1d_forward(self.value(x).data(), c, h, w, &kern, vertical));
        let needs = self.needs(&[x]);
        self.push(t, Op::Filter1d { x, kern, vertical }, needs)
    }

    /// Reverse sweep from a one-element `root`.
    pub fn backward(&self, root: Var) -> Grads {
        assert_eq!(self.value(root).numel(), 1, "backward root must be a scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(self.value(root).dims(), 1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Grads { grads }
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv { x, w, b, geom } => {
                let nx = self.nodes[x.0].needs_grad;
                let nw = self.nodes[w.0].needs_grad;
                let (dx, dw, db) =
                    kernels::conv2d_backward(geom, self.value(*x).data(), self.value(*w).data(), gd, nx, nw);
                if let Some(dx) = dx {
                    acc(*x, Tensor::from_vec(self.dims(*x), dx));
                }
                if let Some(dw) = dw {
                    acc(*w, Tensor::from_vec(self.dims(*w), dw));
                }
                if let Some(b) = b {
                    acc(*b, Tensor::from_vec(self.dims(*b), db));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, zip_map(g, vb, |g, y| g * y));
                acc(*b, zip_map(g, va, |g, x| g * x));
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, zip_map(g, vb, |g, y| g / y));
                let db = Tensor::from_fn(va.dims(), |i| {
                    let y = vb.data()[i];
                    -gd[i] * va.data()[i] / (y * y)
                });
                acc(*b, db);
            }
            Op::Scale(x, s) => {
                let sv = self.value(*s).item();
                acc(*x, g.map(|v| v * sv));
                let dot: f64 = gd.iter().zip(self.value(*x).data()).map(|(a, b)| a * b).sum();
                acc(*s, Tensor::from_vec(self.dims(*s), vec![dot]));
            }
            Op::MulConst(x, k) => acc(*x, g.map(|v| v * k)),
            Op::AddConst(x) => acc(*x, g.clone()),
            Op::ChannelGate(x, gate) => {
                let (c, h, w) = self.chw(*x);
                let plane = h * w;
                let gv = self.value(*gate).data();
                let xv = self.value(*x).data();
                acc(*x, Tensor::from_fn(&[c, h, w], |i| gd[i] * gv[i / plane]));
                acc(
                    *gate,
                    Tensor::from_fn(&[c, 1, 1], |ch| {
                        (ch * plane..(ch + 1) * plane).map(|i| gd[i] * xv[i]).sum()
                    }),
                );
            }
            Op::SpatialGate(x, gate) => {
                let (c, h, w) = self.chw(*x);
                let plane = h * w;
                let gv = self.value(*gate).data();
                let xv = self.value(*x).data();
                acc(*x, Tensor::from_fn(&[c, h, w], |i| gd[i] * gv[i % plane]));
                acc(
                    *gate,
                    Tensor::from_fn(&[1, h, w], |i| (0..c).map(|ch| gd[ch * plane + i] * xv[ch * plane + i]).sum()),
                );
            }
            Op::Relu(x) => acc(*x, zip_map(g, self.value(*x), |g, v| if v > 0.0 { g } else { 0.0 })),
            Op::Sigmoid(x) => acc(*x, zip_map(g, &node.value, |g, s| g * s * (1.0 - s))),
            Op::Ln(x) => acc(*x, zip_map(g, self.value(*x), |g, v| g / v)),
            Op::Clamp(x, lo, hi) => acc(
                *x,
                zip_map(g, self.value(*x), |g, v| if v >= *lo && v <= *hi { g } else { 0.0 }),
            ),
            Op::GlobalAvg(x) => {
                let (c, h, w) = self.chw(*x);
                let plane = h * w;
                acc(*x, Tensor::from_fn(&[c, h, w], |i| gd[i / plane] / plane as f64));
            }
            Op::GlobalMax(x, arg) | Op::ChannelMax(x, arg) => {
                let mut t = Tensor::zeros(self.dims(*x));
                for (k, &i) in arg.iter().enumerate() {
                    t.data_mut()[i] += gd[k];
                }
                acc(*x, t);
            }
            Op::ChannelMean(x) => {
                let (c, h, w) = self.chw(*x);
                let plane = h * w;
                acc(*x, Tensor::from_fn(&[c, h, w], |i| gd[i % plane] / c as f64));
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    acc(p, Tensor::from_vec(self.dims(p), gd[off..off + n].to_vec()));
                    off += n;
                }
            }
            Op::Slice(x, start) => {
                let (_, h, w) = self.chw(*x);
                let mut t = Tensor::zeros(self.dims(*x));
                let off = start * h * w;
                t.data_mut()[off..off + gd.len()].copy_from_slice(gd);
                acc(*x, t);
            }
            Op::Resize(x) => {
                let (c, h, w) = self.chw(*x);
                let (_, oh, ow) = node.value.chw();
                acc(*x, Tensor::from_vec(&[c, h, w], kernels::resize_backward(gd, c, h, w, oh, ow)));
            }
            Op::Softmax(x) => {
                let p = node.value.data();
                let dot: f64 = gd.iter().zip(p).map(|(a, b)| a * b).sum();
                acc(*x, Tensor::from_fn(self.dims(*x), |i| p[i] * (gd[i] - dot)));
            }
            Op::Index(x, i) => {
                let mut t = Tensor::zeros(self.dims(*x));
                t.data_mut()[*i] = gd[0];
                acc(*x, t);
            }
            Op::Sum(x) => acc(*x, Tensor::full(self.dims(*x), gd[0])),
            Op::Mean(x) => {
                let n = self.value(*x).numel() as f64;
                acc(*x, Tensor::full(self.dims(*x), gd[0] / n));
            }
            Op::Mse(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let k = 2.0 * gd[0] / va.numel() as f64;
                let da = zip_map(va, vb, |x, y| k * (x - y));
                acc(*b, da.map(|v| -v));
                acc(*a, da);
            }
            Op::Filter1d { x, kern, vertical } => {
                let (c, h, w) = self.chw(*x);
                acc(*x, Tensor::from_vec(&[c, h, w], kernels::filter1d_backward(gd, c, h, w, kern, *vertical)));
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_fn(a.dims(), |i| f(a.data()[i], b.data()[i]))
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_tensor(x: &Tensor) -> Tensor {
    let m = x.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.data().iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    Tensor::from_vec(x.dims(), e.into_iter().map(|v| v / z).collect())
}
