//! Architecture logits, their softmax relaxation and argmax binarisation.

use crate::autograd::{softmax_tensor, Grads, Tape, Var};
use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::genotype::{CellGenotype, ColumnChoice, Genotype, ATTENTION_SITES};
use crate::search_space::{AttentionOpKind, SiteWeights};
use crate::tensor::Tensor;

/// Logit used for an exactly-zero probability; `exp` of it underflows to 0.
const VANISHING_LOGIT: f64 = -1.0e4;

const COLUMN_WIDTH: usize = 2;
const SITE_WIDTH: usize = AttentionOpKind::COUNT;

/// Softmax over one logit group.
pub fn relax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| v.is_nan()) {
        return Err(Error::NanLogits);
    }
    Ok(softmax_tensor(&Tensor::from_vec(&[logits.len()], logits.to_vec())).into_data())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Column logits `μ` (one pair per column) and attention logits `ν` (one
/// 7-vector per site, or per cell when the choice is shared) for every cell,
/// stored flat in cell-major order: columns first, then sites.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchParams {
    cells: usize,
    columns: usize,
    sites: usize,
    logits: Vec<f64>,
}

impl ArchParams {
    /// All-zero logits: uniform probabilities.
    pub fn new(cfg: &NetworkConfig, shared_attention_choice: bool) -> Self {
        let sites = if shared_attention_choice { 1 } else { ATTENTION_SITES };
        let per_cell = cfg.columns * COLUMN_WIDTH + sites * SITE_WIDTH;
        ArchParams {
            cells: cfg.num_cells,
            columns: cfg.columns,
            sites,
            logits: vec![0.0; cfg.num_cells * per_cell],
        }
    }

    pub fn from_logits(cfg: &NetworkConfig, shared_attention_choice: bool, logits: Vec<f64>) -> Result<Self> {
        let mut a = Self::new(cfg, shared_attention_choice);
        if logits.len() != a.logits.len() {
            return Err(Error::Length {
                what: "architecture logits".into(),
                expected: a.logits.len(),
                found: logits.len(),
            });
        }
        if logits.iter().any(|v| v.is_nan()) {
            return Err(Error::NanLogits);
        }
        a.logits = logits;
        Ok(a)
    }

    /// Logits reproducing the given probabilities, which must each lie on
    /// the simplex within 1e-6. `alphas[t][m]` and `betas[t][s]`.
    pub fn from_probabilities(
        cfg: &NetworkConfig,
        shared_attention_choice: bool,
        alphas: &[Vec<[f64; 2]>],
        betas: &[Vec<[f64; 7]>],
    ) -> Result<Self> {
        let mut a = Self::new(cfg, shared_attention_choice);
        if alphas.len() != a.cells || betas.len() != a.cells {
            return Err(Error::Length { what: "cells".into(), expected: a.cells, found: alphas.len().min(betas.len()) });
        }
        for t in 0..a.cells {
            if alphas[t].len() != a.columns || betas[t].len() != a.sites {
                return Err(Error::Length {
                    what: format!("cell {t} probability groups"),
                    expected: a.columns + a.sites,
                    found: alphas[t].len() + betas[t].len(),
                });
            }
            for m in 0..a.columns {
                let l = to_logits(&alphas[t][m])?;
                a.column_logits_mut(t, m).copy_from_slice(&l);
            }
            for s in 0..a.sites {
                let l = to_logits(&betas[t][s])?;
                a.site_logits_mut(t, s).copy_from_slice(&l);
            }
        }
        Ok(a)
    }

    /// Vertex probabilities selecting exactly the genotype's choices.
    pub fn one_hot(genotype: &Genotype, shared_attention_choice: bool) -> Result<Self> {
        let cfg = genotype.config;
        let sites = if shared_attention_choice { 1 } else { ATTENTION_SITES };
        let alphas: Vec<Vec<[f64; 2]>> = genotype
            .cells
            .iter()
            .map(|c| c.columns.iter().map(|m| one_hot_array::<2>(m.index())).collect())
            .collect();
        let betas: Vec<Vec<[f64; 7]>> = genotype
            .cells
            .iter()
            .map(|c| {
                if shared_attention_choice && c.attention.iter().any(|&k| k != c.attention[0]) {
                    return Err(Error::GenotypeMismatch("shared attention choice needs equal site ops".into()));
                }
                Ok((0..sites).map(|s| one_hot_array::<7>(c.attention[s].index())).collect())
            })
            .collect::<Result<_>>()?;
        Self::from_probabilities(&cfg, shared_attention_choice, &alphas, &betas)
    }

    pub fn num_cells(&self) -> usize {
        self.cells
    }

    pub fn num_columns(&self) -> usize {
        self.columns
    }

    /// Distinct `β` vectors per cell: 3, or 1 when shared.
    pub fn sites_per_cell(&self) -> usize {
        self.sites
    }

    pub fn shared_attention_choice(&self) -> bool {
        self.sites == 1
    }

    /// Total count of `α` scalars.
    pub fn u(&self) -> usize {
        COLUMN_WIDTH * self.columns * self.cells
    }

    /// Total count of `β` scalars.
    pub fn v(&self) -> usize {
        SITE_WIDTH * self.sites * self.cells
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    fn per_cell(&self) -> usize {
        self.columns * COLUMN_WIDTH + self.sites * SITE_WIDTH
    }

    fn column_offset(&self, t: usize, m: usize) -> usize {
        t * self.per_cell() + m * COLUMN_WIDTH
    }

    fn site_offset(&self, t: usize, s: usize) -> usize {
        t * self.per_cell() + self.columns * COLUMN_WIDTH + s * SITE_WIDTH
    }

    pub fn column_logits(&self, t: usize, m: usize) -> &[f64] {
        let o = self.column_offset(t, m);
        &self.logits[o..o + COLUMN_WIDTH]
    }

    pub fn column_logits_mut(&mut self, t: usize, m: usize) -> &mut [f64] {
        let o = self.column_offset(t, m);
        &mut self.logits[o..o + COLUMN_WIDTH]
    }

    pub fn site_logits(&self, t: usize, s: usize) -> &[f64] {
        let o = self.site_offset(t, s);
        &self.logits[o..o + SITE_WIDTH]
    }

    pub fn site_logits_mut(&mut self, t: usize, s: usize) -> &mut [f64] {
        let o = self.site_offset(t, s);
        &mut self.logits[o..o + SITE_WIDTH]
    }

    pub fn alpha(&self, t: usize, m: usize) -> [f64; 2] {
        relax(self.column_logits(t, m)).expect("logits are NaN-free").try_into().unwrap()
    }

    pub fn beta(&self, t: usize, s: usize) -> [f64; 7] {
        relax(self.site_logits(t, s)).expect("logits are NaN-free").try_into().unwrap()
    }

    /// Every probability group, columns then sites, cell by cell.
    pub fn groups(&self) -> Vec<Vec<f64>> {
        self.logits
            .chunks(self.per_cell())
            .flat_map(|cell| {
                let (cols, sites) = cell.split_at(self.columns * COLUMN_WIDTH);
                cols.chunks(COLUMN_WIDTH).chain(sites.chunks(SITE_WIDTH)).map(|l| relax(l).unwrap())
            })
            .collect()
    }

    /// Argmax of each logit group, lowest index on ties.
    pub fn binarize(&self, cfg: &NetworkConfig) -> Genotype {
        let cells = (0..self.cells)
            .map(|t| CellGenotype {
                columns: (0..self.columns)
                    .map(|m| ColumnChoice::from_index(argmax_lowest(self.column_logits(t, m))).unwrap())
                    .collect(),
                attention: std::array::from_fn(|s| {
                    let group = if self.sites == 1 { 0 } else { s };
                    AttentionOpKind::from_index(argmax_lowest(self.site_logits(t, group))).unwrap()
                }),
            })
            .collect();
        Genotype { config: *cfg, cells }
    }

    /// Put every logit group on the tape as a differentiable leaf followed by
    /// its softmax.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ArchVars {
        let mut leaves = Vec::new();
        let mut cells = Vec::with_capacity(self.cells);
        let mut leaf = |tape: &mut Tape, l: &[f64]| {
            let t = Tensor::from_vec(&[l.len()], l.to_vec());
            let v = if trainable { tape.var(t) } else { tape.constant(t) };
            leaves.push(v);
            tape.softmax(v)
        };
        for t in 0..self.cells {
            let columns = (0..self.columns)
                .map(|m| {
                    let p = leaf(tape, self.column_logits(t, m));
                    (p, [tape.index(p, 0), tape.index(p, 1)])
                })
                .collect::<Vec<_>>();
            let groups = (0..self.sites)
                .map(|s| {
                    let p = leaf(tape, self.site_logits(t, s));
                    (p, std::array::from_fn::<_, 7, _>(|k| tape.index(p, k)))
                })
                .collect::<Vec<_>>();
            cells.push(CellArchVars {
                column_probs: columns.iter().map(|c| c.0).collect(),
                group_probs: groups.iter().map(|g| g.0).collect(),
                columns: columns.into_iter().map(|c| c.1).collect(),
                groups: groups.into_iter().map(|g| g.1).collect(),
            });
        }
        ArchVars { cells, leaves }
    }
}

fn to_logits(p: &[f64]) -> Result<Vec<f64>> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-6 || p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::NonSimplex(format!("{p:?} sums to {sum}")));
    }
    Ok(p.iter().map(|&v| if v > 0.0 { v.ln() } else { VANISHING_LOGIT }).collect())
}

fn one_hot_array<const K: usize>(i: usize) -> [f64; K] {
    let mut a = [0.0; K];
    a[i] = 1.0;
    a
}

#[derive(Clone, Debug)]
pub struct CellArchVars {
    /// `α` vector per column.
    pub column_probs: Vec<Var>,
    /// `β` vector per site group.
    pub group_probs: Vec<Var>,
    /// `[α0, α1]` per column.
    pub columns: Vec<[Var; 2]>,
    /// One `β` group per site, or a single shared group.
    pub groups: Vec<[Var; 7]>,
}

impl CellArchVars {
    pub fn site(&self, s: usize) -> SiteWeights {
        SiteWeights::Mixed(if self.groups.len() == 1 { self.groups[0] } else { self.groups[s] })
    }
}

/// Architecture probabilities living on a tape.
#[derive(Clone, Debug)]
pub struct ArchVars {
    pub cells: Vec<CellArchVars>,
    leaves: Vec<Var>,
}

impl ArchVars {
    /// Gradient with respect to the flat logit vector.
    pub fn logit_grads(&self, tape: &Tape, grads: &Grads) -> Vec<f64> {
        self.leaves
            .iter()
            .flat_map(|&v| grads.get_or_zeros(v, tape.value(v)).into_data())
            .collect()
    }

    /// Every `α` vector, cell-major.
    pub fn alpha_vectors(&self) -> Vec<Var> {
        self.cells.iter().flat_map(|c| c.column_probs.iter().copied()).collect()
    }

    /// Every `β` vector, cell-major.
    pub fn beta_vectors(&self) -> Vec<Var> {
        self.cells.iter().flat_map(|c| c.group_probs.iter().copied()).collect()
    }
}
