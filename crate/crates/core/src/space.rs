//! Cell layout, operator roster and architecture weights.
//!
//! Every intermediate state `i` of a cell receives one edge from each
//! earlier node `j < num_inputs + i` (the cell inputs first, then earlier
//! states). Each edge carries every operator in the roster. Architecture
//! weights are stored per cell type as an `[edges, operators]` matrix with
//! edges ordered by destination state, then source.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    None,
    Skip,
    AffineRelu,
    AffineTanh,
    /// Two stacked `affine_relu` layers.
    SepAffine,
    /// Fixed three-tap circular averaging, the parameter-free pooling analog.
    AvgProj,
}

impl OpKind {
    pub const ALL: [OpKind; 6] = [
        OpKind::None,
        OpKind::Skip,
        OpKind::AffineRelu,
        OpKind::AffineTanh,
        OpKind::SepAffine,
        OpKind::AvgProj,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::None => "none",
            OpKind::Skip => "skip",
            OpKind::AffineRelu => "affine_relu",
            OpKind::AffineTanh => "affine_tanh",
            OpKind::SepAffine => "sep_affine",
            OpKind::AvgProj => "avg_proj",
        }
    }

    /// Number of affine layers the operator owns.
    pub fn affine_layers(self) -> usize {
        match self {
            OpKind::None | OpKind::Skip | OpKind::AvgProj => 0,
            OpKind::AffineRelu | OpKind::AffineTanh => 1,
            OpKind::SepAffine => 2,
        }
    }

    /// Parameter count on an edge of the given width.
    pub fn param_count(self, width: usize) -> usize {
        self.affine_layers() * (width * width + width)
    }

    pub fn is_parameterized(self) -> bool {
        self.affine_layers() > 0
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Parse { what: "operator", detail: format!("unknown operator {s:?}") })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationMode {
    Softmax,
    /// Unit-clipped ReLU with post-sum batch normalization and progressive pruning.
    Crb,
}

impl FromStr for ActivationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Self::Softmax),
            "crb" => Ok(Self::Crb),
            _ => Err(Error::Parse { what: "activation", detail: format!("unknown activation {s:?}") }),
        }
    }
}

/// Shape of one cell type's architecture weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellLayout {
    pub num_inputs: usize,
    pub num_states: usize,
    pub ops: Vec<OpKind>,
}

impl CellLayout {
    pub fn new(num_inputs: usize, num_states: usize, ops: Vec<OpKind>) -> Self {
        Self { num_inputs, num_states, ops }
    }

    pub fn num_ops(&self) -> usize {
        self.ops.len()
    }

    pub fn sources(&self, state: usize) -> usize {
        self.num_inputs + state
    }

    /// Index of the first edge entering `state`.
    pub fn edge_offset(&self, state: usize) -> usize {
        (0..state).map(|s| self.sources(s)).sum()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_offset(self.num_states)
    }

    pub fn edge_index(&self, state: usize, source: usize) -> usize {
        debug_assert!(source < self.sources(state));
        self.edge_offset(state) + source
    }

    /// `(state, source)` for every edge, in storage order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_states).flat_map(move |i| (0..self.sources(i)).map(move |j| (i, j)))
    }

    /// Flat length of one cell type's weights.
    pub fn len(&self) -> usize {
        self.num_edges() * self.num_ops()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat_index(&self, state: usize, source: usize, op: usize) -> usize {
        self.edge_index(state, source) * self.num_ops() + op
    }

    pub fn none_index(&self) -> Option<usize> {
        self.ops.iter().position(|&k| k == OpKind::None)
    }

    /// Operator indices that may be selected by discretization.
    pub fn selectable_ops(&self) -> impl Iterator<Item = usize> + '_ {
        self.ops.iter().enumerate().filter(|(_, &k)| k != OpKind::None).map(|(p, _)| p)
    }
}

pub const CELL_TYPE_NAMES: [&str; 2] = ["normal", "reduce"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpaceConfig {
    pub num_input_nodes: usize,
    pub num_states: usize,
    pub operators: Vec<OpKind>,
    pub state_width: usize,
    /// 1 (normal only) or 2 (normal and reduce, alternating).
    pub num_cell_types: usize,
    pub cells: usize,
    pub activation: ActivationMode,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl Default for SearchSpaceConfig {
    fn default() -> Self {
        Self {
            num_input_nodes: 2,
            num_states: 3,
            operators: OpKind::ALL.to_vec(),
            state_width: 8,
            num_cell_types: 1,
            cells: 2,
            activation: ActivationMode::Softmax,
            input_dim: 2,
            num_classes: 2,
        }
    }
}

impl SearchSpaceConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.num_input_nodes < 2 {
            return bad("num_input_nodes must be at least 2");
        }
        if self.num_states < 1 {
            return bad("num_states must be at least 1");
        }
        if self.operators.is_empty() {
            return bad("operator set is empty");
        }
        let mut sorted = self.operators.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.operators.len() {
            return bad("operator set has duplicates");
        }
        if !self.operators.iter().any(|&k| k != OpKind::None) {
            return bad("operator set needs at least one selectable operator");
        }
        let has_none = self.operators.contains(&OpKind::None);
        match self.activation {
            ActivationMode::Softmax if !has_none => return bad("softmax mode requires the none operator"),
            ActivationMode::Crb if has_none => return bad("crb mode excludes the none operator"),
            _ => {}
        }
        if self.state_width == 0 || self.input_dim == 0 {
            return bad("widths must be positive");
        }
        if self.num_classes < 2 {
            return bad("need at least 2 classes");
        }
        if !(1..=2).contains(&self.num_cell_types) {
            return bad("num_cell_types must be 1 or 2");
        }
        if self.cells < self.num_cell_types {
            return bad("need at least one cell per cell type");
        }
        Ok(())
    }

    pub fn layout(&self) -> CellLayout {
        CellLayout::new(self.num_input_nodes, self.num_states, self.operators.clone())
    }

    /// Cell type of the `k`-th cell: reduce cells sit at odd positions.
    pub fn cell_type_of(&self, k: usize) -> usize {
        if self.num_cell_types == 2 && k % 2 == 1 {
            1
        } else {
            0
        }
    }
}

/// Architecture weights after activation, flat per cell type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivatedAlpha {
    pub layout: CellLayout,
    pub cells: Vec<Vec<f64>>,
}

impl ActivatedAlpha {
    pub fn new(layout: CellLayout, cells: Vec<Vec<f64>>) -> Result<Self> {
        if cells.is_empty() || cells.iter().any(|c| c.len() != layout.len()) {
            return Err(Error::ShapeMismatch {
                op: "activated_alpha",
                detail: format!("each cell type needs {} values", layout.len()),
            });
        }
        Ok(Self { layout, cells })
    }

    pub fn get(&self, cell_type: usize, state: usize, source: usize, op: usize) -> f64 {
        self.cells[cell_type][self.layout.flat_index(state, source, op)]
    }

    pub fn edge(&self, cell_type: usize, state: usize, source: usize) -> &[f64] {
        let p = self.layout.num_ops();
        let e = self.layout.edge_index(state, source);
        &self.cells[cell_type][e * p..(e + 1) * p]
    }
}

/// Raw architecture weights plus the CRB prune mask.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaStore {
    pub layout: CellLayout,
    pub mode: ActivationMode,
    /// One `[edges, ops]` tensor per cell type.
    pub raw: Vec<Tensor>,
    /// `true` while an entry is still active; pruning only ever clears entries.
    pub active: Vec<Vec<bool>>,
}

impl AlphaStore {
    /// Zeros in softmax mode (uniform mixture), 0.5 in CRB mode.
    pub fn init(layout: CellLayout, mode: ActivationMode, cell_types: usize) -> Self {
        let fill = match mode {
            ActivationMode::Softmax => 0.0,
            ActivationMode::Crb => 0.5,
        };
        let shape = vec![layout.num_edges(), layout.num_ops()];
        let raw = (0..cell_types)
            .map(|_| Tensor::new(shape.clone(), vec![fill; layout.len()]).expect("shape").param())
            .collect();
        let active = vec![vec![true; layout.len()]; cell_types];
        Self { layout, mode, raw, active }
    }

    pub fn from_raw(layout: CellLayout, mode: ActivationMode, values: Vec<Vec<f64>>) -> Result<Self> {
        let shape = vec![layout.num_edges(), layout.num_ops()];
        let raw = values
            .into_iter()
            .map(|v| Tensor::new(shape.clone(), v).map(Tensor::param))
            .collect::<Result<Vec<_>>>()?;
        let active = vec![vec![true; layout.len()]; raw.len()];
        Ok(Self { layout, mode, raw, active })
    }

    pub fn cell_types(&self) -> usize {
        self.raw.len()
    }

    pub fn raw_values(&self) -> Vec<Vec<f64>> {
        self.raw.iter().map(|t| t.data().to_vec()).collect()
    }

    pub fn entry_count(&self) -> usize {
        self.layout.len() * self.cell_types()
    }

    /// Softmax per edge, or `clamp(α, 0, 1)` with pruned entries forced to 0.
    pub fn activate(&self) -> ActivatedAlpha {
        let p = self.layout.num_ops();
        let cells = self
            .raw
            .iter()
            .zip(&self.active)
            .map(|(t, mask)| match self.mode {
                ActivationMode::Softmax => {
                    let mut out = vec![0.0; t.len()];
                    for (row, dst) in t.data().chunks(p).zip(out.chunks_mut(p)) {
                        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut z = 0.0;
                        for (d, v) in dst.iter_mut().zip(row) {
                            *d = (v - m).exp();
                            z += *d;
                        }
                        dst.iter_mut().for_each(|d| *d /= z);
                    }
                    out
                }
                ActivationMode::Crb => t
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&v, &on)| if on { v.clamp(0.0, 1.0) } else { 0.0 })
                    .collect(),
            })
            .collect();
        ActivatedAlpha { layout: self.layout.clone(), cells }
    }

    /// Pulls a gradient with respect to activated weights back to raw weights.
    pub fn activation_vjp(&self, grad_activated: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let p = self.layout.num_ops();
        let act = self.activate();
        grad_activated
            .iter()
            .enumerate()
            .map(|(c, g)| match self.mode {
                ActivationMode::Softmax => {
                    let a = &act.cells[c];
                    let mut out = vec![0.0; g.len()];
                    for e in 0..self.layout.num_edges() {
                        let r = e * p..(e + 1) * p;
                        let dot: f64 = a[r.clone()].iter().zip(&g[r.clone()]).map(|(x, y)| x * y).sum();
                        for k in r {
                            out[k] = a[k] * (g[k] - dot);
                        }
                    }
                    out
                }
                ActivationMode::Crb => {
                    let raw = self.raw[c].data();
                    g.iter()
                        .zip(raw)
                        .zip(&self.active[c])
                        .map(|((&gv, &v), &on)| if on && v > 0.0 && v < 1.0 { gv } else { 0.0 })
                        .collect()
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_counts() {
        let l = CellLayout::new(2, 1, vec![OpKind::Skip, OpKind::AffineRelu, OpKind::None]);
        assert_eq!(l.num_edges(), 2);
        assert_eq!(l.len(), 6);
        let l = CellLayout::new(2, 4, vec![OpKind::Skip]);
        let enumerated = l.edges().count();
        assert_eq!(enumerated, (0..4).map(|i| 2 + i).sum::<usize>());
        assert_eq!(l.num_edges(), 14);
        for (k, (i, j)) in l.edges().enumerate() {
            assert_eq!(l.edge_index(i, j), k);
        }
    }

    #[test]
    fn softmax_activation_of_zeros_is_uniform() {
        let l = CellLayout::new(2, 1, vec![OpKind::None, OpKind::Skip, OpKind::AffineRelu]);
        let a = AlphaStore::init(l, ActivationMode::Softmax, 1).activate();
        for v in &a.cells[0] {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn crb_activation_clips() {
        let l = CellLayout::new(2, 1, vec![OpKind::Skip, OpKind::AffineRelu, OpKind::AvgProj]);
        let s = AlphaStore::from_raw(l, ActivationMode::Crb, vec![vec![-0.5, 0.3, 1.7, 0.1, 0.2, 0.3]]).unwrap();
        assert_eq!(&s.activate().cells[0][..3], &[0.0, 0.3, 1.0]);
    }

    #[test]
    fn config_validation() {
        let mut c = SearchSpaceConfig::default();
        c.validate().unwrap();
        c.activation = ActivationMode::Crb;
        assert!(c.validate().is_err());
        c.operators.retain(|&k| k != OpKind::None);
        c.validate().unwrap();
        c.activation = ActivationMode::Softmax;
        assert!(c.validate().is_err());
        let c = SearchSpaceConfig { num_input_nodes: 1, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn op_names_round_trip() {
        for k in OpKind::ALL {
            assert_eq!(k.name().parse::<OpKind>().unwrap(), k);
        }
        assert!("conv3x3".parse::<OpKind>().is_err());
    }
}
