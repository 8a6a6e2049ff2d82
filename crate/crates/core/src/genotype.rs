//! Human-readable genotype records.
//!
//! Serialized as `{"normal": [{state, source, op}, ...], "reduce": [...], "metadata": {...}}`.

use crate::discretize::{DiscreteArchitecture, Selection};
use crate::error::{Error, Result};
use crate::space::{CellLayout, OpKind, CELL_TYPE_NAMES};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenotypeEntry {
    pub state: usize,
    pub source: usize,
    pub op: OpKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenotypeMeta {
    pub num_input_nodes: usize,
    pub num_states: usize,
    pub operators: Vec<OpKind>,
    pub skip_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genotype {
    #[serde(flatten)]
    pub cells: BTreeMap<String, Vec<GenotypeEntry>>,
    pub metadata: GenotypeMeta,
}

pub fn export_genotype(arch: &DiscreteArchitecture) -> Result<Genotype> {
    let (ok, violations) = arch.validate();
    if !ok {
        let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(Error::InvalidGenotype(msg.join("; ")));
    }
    if arch.cells.len() > CELL_TYPE_NAMES.len() {
        return Err(Error::InvalidGenotype(format!("{} cell types", arch.cells.len())));
    }
    let cells = arch
        .selections()
        .into_iter()
        .enumerate()
        .map(|(c, sels)| {
            let entries = sels
                .into_iter()
                .map(|s| GenotypeEntry { state: s.state, source: s.source, op: arch.layout.ops[s.op] })
                .collect();
            (CELL_TYPE_NAMES[c].to_string(), entries)
        })
        .collect();
    Ok(Genotype {
        cells,
        metadata: GenotypeMeta {
            num_input_nodes: arch.layout.num_inputs,
            num_states: arch.layout.num_states,
            operators: arch.layout.ops.clone(),
            skip_fraction: arch.skip_fraction(),
        },
    })
}

impl Genotype {
    pub fn layout(&self) -> CellLayout {
        CellLayout::new(self.metadata.num_input_nodes, self.metadata.num_states, self.metadata.operators.clone())
    }

    /// Rebuilds and validates the indicator encoding.
    pub fn to_architecture(&self) -> Result<DiscreteArchitecture> {
        let layout = self.layout();
        let n = self.cells.len();
        let mut selections = Vec::with_capacity(n);
        for name in CELL_TYPE_NAMES.iter().take(n) {
            let entries = self
                .cells
                .get(*name)
                .ok_or_else(|| Error::InvalidGenotype(format!("missing cell type {name:?}")))?;
            let sels = entries
                .iter()
                .map(|e| {
                    let op = layout
                        .ops
                        .iter()
                        .position(|&k| k == e.op)
                        .ok_or_else(|| Error::InvalidGenotype(format!("operator {} not in roster", e.op)))?;
                    Ok(Selection { state: e.state, source: e.source, op })
                })
                .collect::<Result<Vec<_>>>()?;
            selections.push(sels);
        }
        let arch = DiscreteArchitecture::from_selections(layout, &selections)?;
        let (ok, violations) = arch.validate();
        if !ok {
            let msg: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(Error::InvalidGenotype(msg.join("; ")));
        }
        Ok(arch)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
