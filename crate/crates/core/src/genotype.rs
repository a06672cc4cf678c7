//! Discrete architectures and their JSON form.
//!
//! ```json
//! { "version": 1,
//!   "config": {"T": 1, "C": 16, "M": 4, "N": 3, "H": 64, "W": 64},
//!   "cells": [ {"columns": ["P", "F", "F", "P"],
//!               "attention": ["spatial", "cba", "identity"]} ] }
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{validate_config, NetworkConfig};
use crate::error::{Error, Result};
use crate::search_space::AttentionOpKind;

pub const GENOTYPE_VERSION: u32 = 1;

/// Number of attention application sites per cell: `Φ(X1)`, `Φ(X2)`, `Φ(Y1)`.
pub const ATTENTION_SITES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ColumnChoice {
    Parallel,
    Fusion,
}

impl ColumnChoice {
    pub const ALL: [ColumnChoice; 2] = [ColumnChoice::Parallel, ColumnChoice::Fusion];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            ColumnChoice::Parallel => "P",
            ColumnChoice::Fusion => "F",
        }
    }
}

impl FromStr for ColumnChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "P" => Ok(ColumnChoice::Parallel),
            "F" => Ok(ColumnChoice::Fusion),
            other => Err(Error::UnknownColumn(other.to_string())),
        }
    }
}

impl fmt::Display for ColumnChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellGenotype {
    pub columns: Vec<ColumnChoice>,
    pub attention: [AttentionOpKind; ATTENTION_SITES],
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Genotype {
    pub config: NetworkConfig,
    pub cells: Vec<CellGenotype>,
}

#[derive(Serialize, Deserialize)]
struct GenotypeDoc {
    version: u32,
    config: NetworkConfig,
    cells: Vec<CellDoc>,
}

#[derive(Serialize, Deserialize)]
struct CellDoc {
    columns: Vec<String>,
    attention: Vec<String>,
}

impl Genotype {
    /// Every column and attention site set to the same choice.
    pub fn uniform(config: NetworkConfig, column: ColumnChoice, op: AttentionOpKind) -> Self {
        Genotype {
            config,
            cells: (0..config.num_cells)
                .map(|_| CellGenotype {
                    columns: vec![column; config.columns],
                    attention: [op; ATTENTION_SITES],
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_config(&self.config)?;
        if self.cells.len() != self.config.num_cells {
            return Err(Error::Length {
                what: "cells".into(),
                expected: self.config.num_cells,
                found: self.cells.len(),
            });
        }
        for (t, cell) in self.cells.iter().enumerate() {
            if cell.columns.len() != self.config.columns {
                return Err(Error::Length {
                    what: format!("cell {t} columns"),
                    expected: self.config.columns,
                    found: cell.columns.len(),
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        let doc = GenotypeDoc {
            version: GENOTYPE_VERSION,
            config: self.config,
            cells: self
                .cells
                .iter()
                .map(|c| CellDoc {
                    columns: c.columns.iter().map(|m| m.code().to_string()).collect(),
                    attention: c.attention.iter().map(|k| k.name().to_string()).collect(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GenotypeDoc = serde_json::from_str(text).map_err(|e| Error::Genotype(e.to_string()))?;
        if doc.version != GENOTYPE_VERSION {
            return Err(Error::Genotype(format!("unsupported version {}", doc.version)));
        }
        let cells = doc
            .cells
            .into_iter()
            .enumerate()
            .map(|(t, c)| {
                let columns = c.columns.iter().map(|s| s.parse()).collect::<Result<Vec<_>>>()?;
                let ops = c.attention.iter().map(|s| s.parse()).collect::<Result<Vec<AttentionOpKind>>>()?;
                let attention: [AttentionOpKind; ATTENTION_SITES] =
                    ops.try_into().map_err(|v: Vec<_>| Error::Length {
                        what: format!("cell {t} attention"),
                        expected: ATTENTION_SITES,
                        found: v.len(),
                    })?;
                Ok(CellGenotype { columns, attention })
            })
            .collect::<Result<Vec<_>>>()?;
        let g = Genotype { config: doc.config, cells };
        g.validate()?;
        Ok(g)
    }
}
