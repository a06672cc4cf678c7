//! Cells and the full de-raining network.
//!
//! Layout: a 3 -> C input convolution and two residual blocks at full
//! resolution, then `T` cells (transition, `M` searched columns, searched
//! attention), then a fusion of every scale onto full resolution and a 1x1
//! convolution to RGB. Cell `t` (zero-based) consumes scales `0..=t` and
//! produces `0..=t+1`.

use crate::arch::{ArchParams, ArchVars};
use crate::autograd::Var;
use crate::config::{validate_config, NetworkConfig};
use crate::error::{Error, Result};
use crate::genotype::{ColumnChoice, Genotype, ATTENTION_SITES};
use crate::params::{Graph, ParamStore};
use crate::search_space::{
    fuse_to_full, AttentionModule, AttentionOpKind, Conv, ConvSpec, Fusion, Parallel, ParamBuilder, ResBlock,
    SiteWeights, Transition,
};
use crate::tensor::Tensor;

pub const IMAGE_CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Every candidate materialised and mixed by architecture probabilities.
    Relaxed,
    /// Only the genotype's choices exist.
    Discrete,
}

/// The candidates of one column; in discrete mode exactly one is present.
#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub parallel: Option<Parallel>,
    pub fusion: Option<Fusion>,
}

impl Column {
    fn module_forward(&self, g: &mut Graph, p: &[Var], choice: ColumnChoice) -> Result<Vec<Var>> {
        g.searched_ops += 1;
        match choice {
            ColumnChoice::Parallel => self.parallel.as_ref().ok_or_else(|| missing("parallel"))?.forward(g, p),
            ColumnChoice::Fusion => self.fusion.as_ref().ok_or_else(|| missing("fusion"))?.forward(g, p),
        }
    }
}

fn missing(what: &str) -> Error {
    Error::GenotypeMismatch(format!("column has no {what} module"))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub transition: Transition,
    pub columns: Vec<Column>,
    pub attention: AttentionModule,
}

impl Cell {
    pub fn num_scales(&self) -> usize {
        self.index + 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stem {
    pub input: Conv,
    pub blocks: [ResBlock; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct DerainNetwork {
    pub config: NetworkConfig,
    pub mode: Mode,
    pub genotype: Option<Genotype>,
    pub stem: Stem,
    pub cells: Vec<Cell>,
    /// 1x1 convolution from the fused full-resolution features to RGB.
    pub head: Conv,
    pub params: ParamStore,
}

/// Expected parameter counts, in millions, aligned with the architecture
/// logit groups: `columns[i] = [Ω0, Ω1]`, `sites[j] = [Λ0, …, Λ6]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexityTable {
    pub columns: Vec<[f64; 2]>,
    pub sites: Vec<[f64; 7]>,
}

impl DerainNetwork {
    /// Build a network with weights seeded from `(seed, parameter path)`.
    pub fn instantiate(config: NetworkConfig, mode: Mode, genotype: Option<&Genotype>, seed: u64) -> Result<Self> {
        validate_config(&config)?;
        match (mode, genotype) {
            (Mode::Discrete, None) => return Err(Error::GenotypeMismatch("discrete mode needs a genotype".into())),
            (Mode::Relaxed, Some(_)) => {
                return Err(Error::GenotypeMismatch("relaxed mode takes no genotype".into()));
            }
            (Mode::Discrete, Some(g)) => {
                g.validate()?;
                if g.config != config {
                    return Err(Error::GenotypeMismatch(format!(
                        "genotype built for {:?}, network configured as {:?}",
                        g.config, config
                    )));
                }
            }
            (Mode::Relaxed, None) => {}
        }
        let c = config.channels;
        let mut params = ParamStore::new();
        let mut root = ParamBuilder::new(&mut params, seed);
        let stem = {
            let mut b = root.scope("stem");
            Stem {
                input: b.conv("input", ConvSpec::same3(IMAGE_CHANNELS, c)),
                blocks: [b.res_block("res0", c), b.res_block("res1", c)],
            }
        };
        let mut cells = Vec::with_capacity(config.num_cells);
        for t in 0..config.num_cells {
            let mut b = root.scope(&format!("cell{t}"));
            let scales = t + 2;
            let transition = Transition::new(&mut b.scope("transition"), c, t + 1);
            let chosen = genotype.map(|g| &g.cells[t]);
            let columns = (0..config.columns)
                .map(|m| {
                    let mut cb = b.scope(&format!("col{m}"));
                    let want = |k: ColumnChoice| chosen.is_none_or(|cg| cg.columns[m] == k);
                    Column {
                        parallel: want(ColumnChoice::Parallel).then(|| Parallel::new(&mut cb.scope("parallel"), c, scales)),
                        fusion: want(ColumnChoice::Fusion).then(|| Fusion::new(&mut cb.scope("fusion"), c, scales)),
                    }
                })
                .collect();
            let mut ab = b.scope("attn");
            let attention = match chosen {
                Some(cg) => AttentionModule::chosen(&mut ab, c, scales, cg.attention),
                None => AttentionModule::full(&mut ab, c, scales),
            };
            cells.push(Cell { index: t, transition, columns, attention });
        }
        let head = root.scope("tail").conv("out", ConvSpec::pointwise(c, IMAGE_CHANNELS));
        Ok(DerainNetwork {
            config,
            mode,
            genotype: genotype.cloned(),
            stem,
            cells,
            head,
            params,
        })
    }

    /// A discrete all-parallel, all-identity network whose weights pass the
    /// input image through unchanged (for non-negative inputs).
    pub fn identity(config: NetworkConfig) -> Result<Self> {
        let genotype = Genotype::uniform(config, ColumnChoice::Parallel, AttentionOpKind::Identity);
        let mut net = Self::instantiate(config, Mode::Discrete, Some(&genotype), 0)?;
        for id in net.params.ids().collect::<Vec<_>>() {
            net.params.get_mut(id).data_mut().fill(0.0);
        }
        let c = config.channels;
        let half = c / 2;
        let w = net.params.get_mut(net.stem.input.weight);
        for ch in 0..IMAGE_CHANNELS {
            // Centre tap of the 3x3 kernel for output `ch`, input `ch`.
            w.data_mut()[(ch * IMAGE_CHANNELS + ch) * 9 + 4] = 1.0;
        }
        for cell in &net.cells {
            for sa in &cell.attention.scales {
                // Input is [Y1; Y2; Y1 + Y2] = [X1; X1 + X2; 2 X1 + X2].
                let w = net.params.get_mut(sa.fuse.weight);
                for j in 0..half {
                    w.data_mut()[j * 3 * half + j] = 1.0;
                    w.data_mut()[(half + j) * 3 * half + half + j] = 1.0;
                    w.data_mut()[(half + j) * 3 * half + j] = -1.0;
                }
            }
        }
        let w = net.params.get_mut(net.head.weight);
        for ch in 0..IMAGE_CHANNELS {
            w.data_mut()[ch * c + ch] = 1.0;
        }
        Ok(net)
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Copy every parameter of `src` whose path and shape match one of ours;
    /// returns how many were copied.
    pub fn load_matching(&mut self, src: &ParamStore) -> usize {
        let mut n = 0;
        for (_, name, value) in src.iter() {
            if let Some(id) = self.params.id(name) {
                if self.params.get(id).dims() == value.dims() {
                    *self.params.get_mut(id) = value.clone();
                    n += 1;
                }
            }
        }
        n
    }

    fn check_image(&self, g: &Graph, x: Var) -> Result<()> {
        let dims = g.value(x).dims();
        let d = self.config.spatial_divisor();
        if dims.len() != 3 || dims[0] != IMAGE_CHANNELS || dims[1] % d != 0 || dims[2] % d != 0 || dims[1] == 0 || dims[2] == 0 {
            return Err(Error::Shape(format!(
                "network input must be 3 x H x W with H, W divisible by {d}, got {dims:?}"
            )));
        }
        Ok(())
    }

    fn stem_forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.stem.input.forward(g, x);
        let h = self.stem.blocks[0].forward(g, h);
        self.stem.blocks[1].forward(g, h)
    }

    fn head_forward(&self, g: &mut Graph, p: &[Var]) -> Var {
        let fused = fuse_to_full(g, p);
        self.head.forward(g, fused)
    }

    /// Relaxed forward on a tape: every column mixes its two candidates by
    /// `α`, every attention site mixes its seven candidates by `β`.
    pub fn relaxed_graph(&self, g: &mut Graph, x: Var, arch: &ArchVars) -> Result<Var> {
        if self.mode != Mode::Relaxed {
            return Err(Error::GenotypeMismatch("relaxed forward on a discrete network".into()));
        }
        if arch.cells.len() != self.cells.len() || arch.cells.iter().any(|c| c.columns.len() != self.config.columns) {
            return Err(Error::Shape("architecture parameters do not match the network".into()));
        }
        self.check_image(g, x)?;
        let mut p = vec![self.stem_forward(g, x)];
        for (cell, av) in self.cells.iter().zip(&arch.cells) {
            p = cell.transition.forward(g, &p)?;
            for (col, alpha) in cell.columns.iter().zip(&av.columns) {
                let a = col.module_forward(g, &p, ColumnChoice::Parallel)?;
                let b = col.module_forward(g, &p, ColumnChoice::Fusion)?;
                p = a
                    .iter()
                    .zip(&b)
                    .map(|(&pa, &pb)| {
                        let sa = g.tape.scale(pa, alpha[0]);
                        let sb = g.tape.scale(pb, alpha[1]);
                        g.tape.add(sa, sb)
                    })
                    .collect();
            }
            let sites: [SiteWeights; ATTENTION_SITES] = std::array::from_fn(|s| av.site(s));
            g.searched_ops += ATTENTION_SITES * (AttentionOpKind::COUNT - 1);
            p = cell.attention.forward(g, &p, &sites)?;
        }
        Ok(self.head_forward(g, &p))
    }

    /// Discrete forward on a tape: only the genotype's choices run.
    pub fn discrete_graph(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let genotype = match (self.mode, &self.genotype) {
            (Mode::Discrete, Some(gt)) => gt,
            _ => return Err(Error::GenotypeMismatch("discrete forward needs a genotype".into())),
        };
        self.check_image(g, x)?;
        let mut p = vec![self.stem_forward(g, x)];
        for (cell, cg) in self.cells.iter().zip(&genotype.cells) {
            p = cell.transition.forward(g, &p)?;
            for (col, &choice) in cell.columns.iter().zip(&cg.columns) {
                p = col.module_forward(g, &p, choice)?;
            }
            g.searched_ops += ATTENTION_SITES;
            p = cell.attention.forward(g, &p, &cg.attention.map(SiteWeights::Fixed))?;
        }
        Ok(self.head_forward(g, &p))
    }

    /// Relaxed forward of one image under `arch`'s probabilities.
    pub fn forward_relaxed(&self, image: &Tensor, arch: &ArchParams) -> Result<Tensor> {
        let mut g = Graph::new(&self.params, false);
        let av = arch.bind(&mut g.tape, false);
        let x = g.constant(image.clone());
        let y = self.relaxed_graph(&mut g, x, &av)?;
        Ok(g.value(y).clone())
    }

    pub fn forward_discrete(&self, image: &Tensor) -> Result<Tensor> {
        Ok(self.forward_discrete_counted(image)?.0)
    }

    /// Discrete forward that also reports how many searched operators ran.
    pub fn forward_discrete_counted(&self, image: &Tensor) -> Result<(Tensor, usize)> {
        let mut g = Graph::new(&self.params, false);
        let x = g.constant(image.clone());
        let y = self.discrete_graph(&mut g, x)?;
        Ok((g.value(y).clone(), g.searched_ops))
    }

    /// Whichever forward matches the network's mode; a relaxed network uses
    /// `arch`.
    pub fn graph(&self, g: &mut Graph, x: Var, arch: Option<&ArchVars>) -> Result<Var> {
        match (self.mode, arch) {
            (Mode::Relaxed, Some(a)) => self.relaxed_graph(g, x, a),
            (Mode::Relaxed, None) => Err(Error::Shape("relaxed forward needs architecture parameters".into())),
            (Mode::Discrete, _) => self.discrete_graph(g, x),
        }
    }

    /// Parameter counts of every searched candidate, in millions, in the
    /// order of the architecture logit groups.
    pub fn complexity_table(&self, shared_attention_choice: bool) -> Result<ComplexityTable> {
        if self.mode != Mode::Relaxed {
            return Err(Error::GenotypeMismatch("complexity table needs the full supernet".into()));
        }
        let mut columns = Vec::new();
        let mut sites = Vec::new();
        for cell in &self.cells {
            for col in &cell.columns {
                let p = col.parallel.as_ref().map_or(0, Parallel::param_count);
                let f = col.fusion.as_ref().map_or(0, Fusion::param_count);
                columns.push([p as f64 / 1e6, f as f64 / 1e6]);
            }
            let site_row = |s: usize| -> [f64; 7] {
                std::array::from_fn(|k| {
                    cell.attention.site_param_count(s, AttentionOpKind::from_index(k).unwrap()) as f64 / 1e6
                })
            };
            if shared_attention_choice {
                let rows: Vec<[f64; 7]> = (0..ATTENTION_SITES).map(site_row).collect();
                sites.push(std::array::from_fn(|k| rows.iter().map(|r| r[k]).sum()));
            } else {
                sites.extend((0..ATTENTION_SITES).map(site_row));
            }
        }
        Ok(ComplexityTable { columns, sites })
    }
}
