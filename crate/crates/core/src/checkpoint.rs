//! Tensor archives for network weights and full search state.
//!
//! Layout: the 8-byte magic `MANASCKP`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a JSON header
//! `{"meta": …, "entries": [{"name", "shape", "dtype", "offset"}]}`, then the
//! raw little-endian tensor data with offsets relative to its start.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::arch::ArchParams;
use crate::config::{NetworkConfig, SearchConfig};
use crate::error::{Error, Result};
use crate::genotype::Genotype;
use crate::optim::{Adam, Sgd};
use crate::search::{PairSampler, SearchState};
use crate::supernet::{DerainNetwork, Mode};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"MANASCKP";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    dtype: Dtype,
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    meta: Value,
    entries: Vec<Entry>,
}

/// Named tensors plus free-form JSON metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub meta: Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Archive {
    pub fn new(meta: Value) -> Self {
        Archive { meta, tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn to_bytes(&self, dtype: Dtype) -> Result<Vec<u8>> {
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            entries.push(Entry { name: name.clone(), shape: t.dims().to_vec(), dtype, offset: blob.len() });
            for &v in t.data() {
                match dtype {
                    Dtype::F32 => blob.extend_from_slice(&(v as f32).to_le_bytes()),
                    Dtype::F64 => blob.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        let header = serde_json::to_vec(&Header { meta: self.meta.clone(), entries })?;
        let mut out = Vec::with_capacity(20 + header.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_owned());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint archive"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])?;
        let blob = &bytes[header_end..];
        let mut tensors = Vec::with_capacity(header.entries.len());
        for e in header.entries {
            let n: usize = e.shape.iter().product();
            let w = e.dtype.width();
            let raw = blob
                .get(e.offset..e.offset + n * w)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {} runs past the end of the data", e.name)))?;
            let data = raw
                .chunks_exact(w)
                .map(|c| match e.dtype {
                    Dtype::F32 => f32::from_le_bytes(c.try_into().unwrap()) as f64,
                    Dtype::F64 => f64::from_le_bytes(c.try_into().unwrap()),
                })
                .collect();
            tensors.push((e.name, Tensor::from_vec(&e.shape, data)));
        }
        Ok(Archive { meta: header.meta, tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>, dtype: Dtype) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes(dtype)?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

fn meta_field<T: for<'de> Deserialize<'de>>(meta: &Value, key: &str) -> Result<T> {
    let v = meta.get(key).ok_or_else(|| Error::Checkpoint(format!("metadata lacks {key:?}")))?;
    Ok(serde_json::from_value(v.clone())?)
}

fn network_meta(net: &DerainNetwork) -> Result<Value> {
    let genotype = match &net.genotype {
        Some(g) => serde_json::from_str::<Value>(&g.to_json()?)?,
        None => Value::Null,
    };
    Ok(json!({
        "config": net.config,
        "mode": match net.mode { Mode::Relaxed => "relaxed", Mode::Discrete => "discrete" },
        "genotype": genotype,
        "param_count": net.param_count(),
    }))
}

fn network_from(archive: &Archive, meta: &Value, prefix: &str) -> Result<DerainNetwork> {
    let config: NetworkConfig = meta_field(meta, "config")?;
    let mode: String = meta_field(meta, "mode")?;
    let genotype = match meta.get("genotype") {
        Some(v) if !v.is_null() => Some(Genotype::from_json(&v.to_string())?),
        _ => None,
    };
    let mode = match mode.as_str() {
        "relaxed" => Mode::Relaxed,
        "discrete" => Mode::Discrete,
        other => return Err(Error::Checkpoint(format!("unknown network mode {other:?}"))),
    };
    let mut net = DerainNetwork::instantiate(config, mode, genotype.as_ref(), 0)?;
    let ids: Vec<_> = net.params.ids().collect();
    for id in ids {
        let name = format!("{prefix}{}", net.params.name(id));
        let t = archive.require(&name)?;
        if t.dims() != net.params.get(id).dims() {
            return Err(Error::Checkpoint(format!(
                "{name} has shape {:?}, the network expects {:?}",
                t.dims(),
                net.params.get(id).dims()
            )));
        }
        *net.params.get_mut(id) = t.clone();
    }
    Ok(net)
}

/// Network weights stored as `f32`, with config and genotype in the header.
pub fn save_network(path: impl AsRef<Path>, net: &DerainNetwork) -> Result<()> {
    let mut a = Archive::new(json!({ "kind": "weights", "network": network_meta(net)? }));
    for (_, name, t) in net.params.iter() {
        a.push(name, t.clone());
    }
    a.write(path, Dtype::F32)
}

pub fn load_network(path: impl AsRef<Path>) -> Result<DerainNetwork> {
    let a = Archive::read(path)?;
    let meta = a.meta.get("network").cloned().ok_or_else(|| Error::Checkpoint("no network metadata".into()))?;
    network_from(&a, &meta, "")
}

/// The whole search state in `f64`, so that a resumed search reproduces an
/// uninterrupted one bit for bit.
pub fn save_search_state(path: impl AsRef<Path>, state: &SearchState, scfg: &SearchConfig) -> Result<()> {
    let samplers = [state.sampler_a, state.sampler_b].map(|s| json!([s.len, s.seed, s.stream, s.cursor]));
    let mut a = Archive::new(json!({
        "kind": "search",
        "network": network_meta(&state.network)?,
        "search": scfg,
        "iteration": state.iteration,
        "total": state.total,
        "shared_attention_choice": state.arch.shared_attention_choice(),
        "samplers": samplers,
        "sgd_slots": state.weight_opt.buffers.len(),
        "adam_slots": state.arch_opt.first.len(),
        "adam_steps": state.arch_opt.step_count,
    }));
    for (_, name, t) in state.network.params.iter() {
        a.push(format!("param/{name}"), t.clone());
    }
    let vec = |v: &[f64]| Tensor::from_vec(&[v.len()], v.to_vec());
    a.push("arch/logits", vec(state.arch.logits()));
    for (i, b) in state.weight_opt.buffers.iter().enumerate() {
        a.push(format!("sgd/{i}"), vec(b));
    }
    for (i, (m, v)) in state.arch_opt.first.iter().zip(&state.arch_opt.second).enumerate() {
        a.push(format!("adam/m/{i}"), vec(m));
        a.push(format!("adam/v/{i}"), vec(v));
    }
    a.write(path, Dtype::F64)
}

pub fn load_search_state(path: impl AsRef<Path>) -> Result<(SearchState, SearchConfig)> {
    let a = Archive::read(path)?;
    let meta = &a.meta;
    let kind: String = meta_field(meta, "kind")?;
    if kind != "search" {
        return Err(Error::Checkpoint(format!("expected a search checkpoint, found {kind:?}")));
    }
    let net_meta = meta.get("network").cloned().ok_or_else(|| Error::Checkpoint("no network metadata".into()))?;
    let network = network_from(&a, &net_meta, "param/")?;
    let scfg: SearchConfig = meta_field(meta, "search")?;
    let shared: bool = meta_field(meta, "shared_attention_choice")?;
    let arch = ArchParams::from_logits(&network.config, shared, a.require("arch/logits")?.data().to_vec())?;
    let samplers: [[u64; 4]; 2] = meta_field(meta, "samplers")?;
    let sampler = |s: [u64; 4]| PairSampler { len: s[0] as usize, seed: s[1], stream: s[2], cursor: s[3] };

    let mut weight_opt = Sgd::new(scfg.weight_momentum, scfg.weight_decay);
    for i in 0..meta_field::<usize>(meta, "sgd_slots")? {
        weight_opt.buffers.push(a.require(&format!("sgd/{i}"))?.data().to_vec());
    }
    let mut arch_opt = Adam::new(scfg.arch_betas, scfg.arch_weight_decay);
    arch_opt.step_count = meta_field(meta, "adam_steps")?;
    for i in 0..meta_field::<usize>(meta, "adam_slots")? {
        arch_opt.first.push(a.require(&format!("adam/m/{i}"))?.data().to_vec());
        arch_opt.second.push(a.require(&format!("adam/v/{i}"))?.data().to_vec());
    }
    let state = SearchState {
        network,
        arch,
        weight_opt,
        arch_opt,
        iteration: meta_field(meta, "iteration")?,
        total: meta_field(meta, "total")?,
        sampler_a: sampler(samplers[0]),
        sampler_b: sampler(samplers[1]),
    };
    Ok((state, scfg))
}
