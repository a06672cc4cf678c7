//! Named parameter storage and the per-forward binding of parameters to tape
//! leaves.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Grads, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Learnable tensors addressed by stable dotted path names
/// (`cell0.col2.parallel.s1.conv1.weight`, ...). Insertion order is the
/// iteration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Panics on a duplicate name.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        let id = ParamId(self.values.len());
        let prev = self.index.insert(name.clone(), id);
        assert!(prev.is_none(), "duplicate parameter path {name}");
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// FNV-1a over the bit patterns of every value, in path order.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv::new();
        for (name, v) in self.names.iter().zip(&self.values) {
            h.write(name.as_bytes());
            for x in v.data() {
                h.write(&x.to_bits().to_le_bytes());
            }
        }
        h.finish()
    }
}

pub(crate) struct Fnv(u64);

impl Fnv {
    pub fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

/// SplitMix64 finalizer; used to derive independent sub-seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn path_seed(seed: u64, path: &str) -> u64 {
    let mut h = Fnv::new();
    h.write(path.as_bytes());
    mix_seed(seed, h.finish())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Uniform on `±sqrt(3 / fan_in)` (unit-variance preserving).
    FanInUniform { fan_in: usize },
    Zeros,
}

/// Parameter initialisation depends only on `(seed, path)`, so a discrete
/// network and the supernet it was cut from start from identical values on
/// every shared path.
pub fn init_tensor(seed: u64, path: &str, dims: &[usize], init: Init) -> Tensor {
    match init {
        Init::Zeros => Tensor::zeros(dims),
        Init::FanInUniform { fan_in } => {
            let bound = (3.0 / fan_in.max(1) as f64).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(path_seed(seed, path));
            Tensor::from_fn(dims, |_| rng.random_range(-bound..bound))
        }
    }
}

/// One forward/backward pass: a tape plus lazily created leaves for the
/// parameters it touches.
pub struct Graph<'p> {
    pub tape: Tape,
    store: &'p ParamStore,
    bound: Vec<Option<Var>>,
    trainable: bool,
    /// Searched operators (columns and attention sites) evaluated so far.
    pub searched_ops: usize,
}

impl<'p> Graph<'p> {
    /// `trainable == false` binds parameters as constants, which skips their
    /// gradients.
    pub fn new(store: &'p ParamStore, trainable: bool) -> Self {
        Graph {
            tape: Tape::new(),
            store,
            bound: vec![None; store.len()],
            trainable,
            searched_ops: 0,
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let t = self.store.get(id).clone();
        let v = if self.trainable { self.tape.var(t) } else { self.tape.constant(t) };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    /// Parameter gradients aligned with the store; parameters the root did
    /// not depend on get zeros.
    pub fn param_grads(&self, grads: &Grads) -> Vec<Tensor> {
        self.store
            .ids()
            .map(|id| match self.bound[id.0] {
                Some(v) => grads.get_or_zeros(v, self.store.get(id)),
                None => Tensor::zeros(self.store.get(id).dims()),
            })
            .collect()
    }
}
