//! The discrete constraint set and the projection onto it.
//!
//! A member of the set selects, for every intermediate state, exactly two
//! operators coming from two distinct source nodes, never the `none`
//! operator, with all indicators binary.

use crate::error::{Error, Result};
use crate::space::{ActivatedAlpha, ActivationMode, AlphaStore, CellLayout, OpKind};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Indicator encoding of a discrete architecture, one flat vector per cell type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteArchitecture {
    pub layout: CellLayout,
    pub cells: Vec<Vec<f64>>,
}

/// One selected operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Selection {
    pub state: usize,
    pub source: usize,
    pub op: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// More than one active operator on an edge (`S_i^1`).
    EdgeCardinality { cell_type: usize, state: usize, source: usize, active: usize },
    /// State does not have exactly two active operators (`S_i^2`).
    StateCardinality { cell_type: usize, state: usize, active: usize },
    /// Entry outside `{0, 1}` (`S_i^3`).
    NonBinary { cell_type: usize, state: usize, source: usize, op: usize, value: f64 },
    /// The `none` operator is active.
    NoneSelected { cell_type: usize, state: usize, source: usize },
    Shape(String),
}

impl Violation {
    /// Name of the failing constraint set.
    pub fn set_name(&self) -> &'static str {
        match self {
            Violation::EdgeCardinality { .. } => "S1",
            Violation::StateCardinality { .. } => "S2",
            Violation::NonBinary { .. } => "S3",
            Violation::NoneSelected { .. } => "none",
            Violation::Shape(_) => "shape",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EdgeCardinality { cell_type, state, source, active } => write!(
                f,
                "S1: cell {cell_type} edge ({state},{source}) has {active} active operators"
            ),
            Violation::StateCardinality { cell_type, state, active } => {
                write!(f, "S2: cell {cell_type} state {state} has {active} active operators")
            }
            Violation::NonBinary { cell_type, state, source, op, value } => write!(
                f,
                "S3: cell {cell_type} entry ({state},{source},{op}) = {value}"
            ),
            Violation::NoneSelected { cell_type, state, source } => {
                write!(f, "none operator active on cell {cell_type} edge ({state},{source})")
            }
            Violation::Shape(m) => write!(f, "shape: {m}"),
        }
    }
}

impl DiscreteArchitecture {
    pub fn empty(layout: CellLayout, cell_types: usize) -> Self {
        let n = layout.len();
        Self { layout, cells: vec![vec![0.0; n]; cell_types] }
    }

    /// Builds an architecture from explicit selections per cell type.
    pub fn from_selections(layout: CellLayout, selections: &[Vec<Selection>]) -> Result<Self> {
        let mut arch = Self::empty(layout, selections.len());
        for (c, sels) in selections.iter().enumerate() {
            for s in sels {
                if s.state >= arch.layout.num_states
                    || s.source >= arch.layout.sources(s.state)
                    || s.op >= arch.layout.num_ops()
                {
                    return Err(Error::InvalidGenotype(format!("selection {s:?} out of range")));
                }
                let k = arch.layout.flat_index(s.state, s.source, s.op);
                arch.cells[c][k] = 1.0;
            }
        }
        Ok(arch)
    }

    /// Active entries per cell type, in layout order.
    pub fn selections(&self) -> Vec<Vec<Selection>> {
        let l = &self.layout;
        self.cells
            .iter()
            .map(|cell| {
                let mut out = Vec::new();
                for (state, source) in l.edges() {
                    for op in 0..l.num_ops() {
                        if cell[l.flat_index(state, source, op)] != 0.0 {
                            out.push(Selection { state, source, op });
                        }
                    }
                }
                out
            })
            .collect()
    }

    pub fn validate(&self) -> (bool, Vec<Violation>) {
        let v = validate_in_s(self);
        (v.is_empty(), v)
    }

    pub fn is_valid(&self) -> bool {
        validate_in_s(self).is_empty()
    }

    /// Fraction of selected operators that are skip connections.
    pub fn skip_fraction(&self) -> f64 {
        let sels: Vec<Selection> = self.selections().into_iter().flatten().collect();
        if sels.is_empty() {
            return 0.0;
        }
        let skips = sels.iter().filter(|s| self.layout.ops[s.op] == OpKind::Skip).count();
        skips as f64 / sels.len() as f64
    }
}

/// Lists every violated constraint; empty iff `arch` is a member of the set.
pub fn validate_in_s(arch: &DiscreteArchitecture) -> Vec<Violation> {
    let l = &arch.layout;
    let mut out = Vec::new();
    if arch.cells.is_empty() {
        out.push(Violation::Shape("no cell types".into()));
    }
    for (c, cell) in arch.cells.iter().enumerate() {
        if cell.len() != l.len() {
            out.push(Violation::Shape(format!("cell {c} has {} entries, expected {}", cell.len(), l.len())));
            continue;
        }
        for state in 0..l.num_states {
            let mut state_active = 0;
            for source in 0..l.sources(state) {
                let mut edge_active = 0;
                for op in 0..l.num_ops() {
                    let v = cell[l.flat_index(state, source, op)];
                    if v != 0.0 && v != 1.0 {
                        out.push(Violation::NonBinary { cell_type: c, state, source, op, value: v });
                    }
                    if v != 0.0 {
                        edge_active += 1;
                        if l.ops[op] == OpKind::None {
                            out.push(Violation::NoneSelected { cell_type: c, state, source });
                        }
                    }
                }
                if edge_active > 1 {
                    out.push(Violation::EdgeCardinality { cell_type: c, state, source, active: edge_active });
                }
                state_active += edge_active;
            }
            if state_active != 2 {
                out.push(Violation::StateCardinality { cell_type: c, state, active: state_active });
            }
        }
    }
    out
}

/// Best selectable operator for one edge; ties go to the lowest index.
fn best_op(layout: &CellLayout, edge: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for p in layout.selectable_ops() {
        if best.is_none_or(|(_, v)| edge[p] > v) {
            best = Some((p, edge[p]));
        }
    }
    best
}

/// Projects real-valued per-cell weights onto the set (greedy rule, exact
/// for this constraint family): per source take the strongest selectable
/// operator, then keep the two strongest sources. Ties go to the lowest
/// operator index, then the lowest source index.
pub fn project_values(layout: &CellLayout, cells: &[Vec<f64>]) -> Result<DiscreteArchitecture> {
    let p = layout.num_ops();
    let mut arch = DiscreteArchitecture::empty(layout.clone(), cells.len());
    for (c, values) in cells.iter().enumerate() {
        if values.len() != layout.len() {
            return Err(Error::ShapeMismatch {
                op: "project",
                detail: format!("{} values for layout of {}", values.len(), layout.len()),
            });
        }
        for state in 0..layout.num_states {
            let n = layout.sources(state);
            if n < 2 {
                return Err(Error::TooFewSources { state, available: n });
            }
            let mut cands: Vec<(usize, usize, f64)> = (0..n)
                .filter_map(|j| {
                    let e = layout.edge_index(state, j);
                    best_op(layout, &values[e * p..(e + 1) * p]).map(|(op, v)| (j, op, v))
                })
                .collect();
            // Stable sort keeps lower sources first among equal values.
            cands.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(std::cmp::Ordering::Equal));
            for &(j, op, _) in cands.iter().take(2) {
                arch.cells[c][layout.flat_index(state, j, op)] = 1.0;
            }
        }
    }
    Ok(arch)
}

/// Projection of activated weights.
pub fn project_to_s(activated: &ActivatedAlpha) -> Result<DiscreteArchitecture> {
    if activated.cells.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("project_to_s"));
    }
    project_values(&activated.layout, &activated.cells)
}

/// `‖a − Π(a)‖₂` over all cell types.
pub fn distance_to_s(activated: &ActivatedAlpha) -> Result<f64> {
    let proj = project_to_s(activated)?;
    Ok(squared_distance(&activated.cells, &proj.cells).sqrt())
}

pub fn squared_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)))
        .sum()
}

/// Smallest value gap that the projection decision depends on. Perturbations
/// smaller than half of it cannot change the projection.
pub fn projection_margin(layout: &CellLayout, cells: &[Vec<f64>]) -> f64 {
    let p = layout.num_ops();
    let mut margin = f64::INFINITY;
    for values in cells {
        for state in 0..layout.num_states {
            let mut bests = Vec::new();
            for j in 0..layout.sources(state) {
                let e = layout.edge_index(state, j);
                let edge = &values[e * p..(e + 1) * p];
                let mut sel: Vec<f64> = layout.selectable_ops().map(|k| edge[k]).collect();
                sel.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if sel.len() > 1 {
                    margin = margin.min(sel[0] - sel[1]);
                }
                bests.push(sel[0]);
            }
            bests.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if bests.len() > 2 {
                margin = margin.min(bests[1] - bests[2]);
            }
        }
    }
    margin
}

/// Number of members of the set, per the product of per-state choices.
pub fn count_s(layout: &CellLayout, cell_types: usize) -> u128 {
    let k = layout.selectable_ops().count() as u128;
    let per_cell: u128 = (0..layout.num_states)
        .map(|i| {
            let n = layout.sources(i) as u128;
            n * n.saturating_sub(1) / 2 * k * k
        })
        .product();
    per_cell.pow(cell_types as u32)
}

pub const ENUMERATION_GUARD: u128 = 1_000_000;

/// Exhaustive list of all members of the set. Test oracle.
pub fn enumerate_s(layout: &CellLayout, cell_types: usize) -> Result<Vec<DiscreteArchitecture>> {
    let size = count_s(layout, cell_types);
    if size > ENUMERATION_GUARD {
        return Err(Error::EnumerationGuard { size, guard: ENUMERATION_GUARD });
    }
    let ops: Vec<usize> = layout.selectable_ops().collect();
    // Every legal pair of selections for each state.
    let per_state: Vec<Vec<[Selection; 2]>> = (0..layout.num_states)
        .map(|state| {
            let n = layout.sources(state);
            let mut v = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    for &pa in &ops {
                        for &pb in &ops {
                            v.push([
                                Selection { state, source: a, op: pa },
                                Selection { state, source: b, op: pb },
                            ]);
                        }
                    }
                }
            }
            v
        })
        .collect();
    let slots = layout.num_states * cell_types;
    let mut out = Vec::with_capacity(size as usize);
    let mut idx = vec![0usize; slots];
    if per_state.iter().any(Vec::is_empty) {
        return Ok(out);
    }
    loop {
        let mut arch = DiscreteArchitecture::empty(layout.clone(), cell_types);
        for (slot, &i) in idx.iter().enumerate() {
            let (c, state) = (slot / layout.num_states, slot % layout.num_states);
            for s in &per_state[state][i] {
                arch.cells[c][layout.flat_index(s.state, s.source, s.op)] = 1.0;
            }
        }
        out.push(arch);
        // Odometer increment.
        let mut slot = 0;
        loop {
            if slot == slots {
                return Ok(out);
            }
            let state = slot % layout.num_states;
            idx[slot] += 1;
            if idx[slot] < per_state[state].len() {
                break;
            }
            idx[slot] = 0;
            slot += 1;
        }
    }
}

/// Prunes every entry whose raw weight is non-positive. Returns how many
/// entries were newly pruned; pruned entries never come back.
pub fn crb_prune_update(store: &mut AlphaStore) -> Result<usize> {
    if store.mode != ActivationMode::Crb {
        return Err(Error::WrongActivationMode("crb"));
    }
    let mut pruned = 0;
    for (t, mask) in store.raw.iter().zip(store.active.iter_mut()) {
        for (&v, on) in t.data().iter().zip(mask.iter_mut()) {
            if *on && v <= 0.0 {
                *on = false;
                pruned += 1;
            }
        }
    }
    Ok(pruned)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(inputs: usize, states: usize, ops: &[OpKind]) -> CellLayout {
        CellLayout::new(inputs, states, ops.to_vec())
    }

    #[test]
    fn obvious_argmax_case() {
        let l = layout(2, 1, &[OpKind::Skip, OpKind::AffineRelu]);
        let a = ActivatedAlpha::new(l, vec![vec![0.9, 0.05, 0.6, 0.3]]).unwrap();
        let s = project_to_s(&a).unwrap();
        assert_eq!(s.cells[0], vec![1.0, 0.0, 1.0, 0.0]);
        assert!(s.is_valid());
    }

    #[test]
    fn projection_of_member_is_itself() {
        let l = layout(2, 2, &[OpKind::None, OpKind::Skip, OpKind::AffineRelu]);
        for arch in enumerate_s(&l, 1).unwrap() {
            let a = ActivatedAlpha::new(l.clone(), arch.cells.clone()).unwrap();
            assert_eq!(project_to_s(&a).unwrap(), arch);
            assert_eq!(distance_to_s(&a).unwrap(), 0.0);
        }
    }

    #[test]
    fn none_is_never_selected() {
        let l = layout(2, 1, &[OpKind::None, OpKind::Skip]);
        let a = ActivatedAlpha::new(l, vec![vec![0.99, 0.01, 0.98, 0.02]]).unwrap();
        let s = project_to_s(&a).unwrap();
        assert_eq!(s.cells[0], vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn ties_go_to_lowest_indices() {
        let l = layout(3, 1, &[OpKind::Skip, OpKind::AvgProj]);
        let a = ActivatedAlpha::new(l, vec![vec![0.5; 6]]).unwrap();
        let s = project_to_s(&a).unwrap();
        assert_eq!(s.cells[0], vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn violations_name_their_sets() {
        let l = layout(2, 1, &[OpKind::Skip, OpKind::AffineRelu]);
        let three = DiscreteArchitecture { layout: l.clone(), cells: vec![vec![1.0, 1.0, 1.0, 0.0]] };
        let v = validate_in_s(&three);
        assert!(v.iter().any(|v| v.set_name() == "S2"));
        assert!(v.iter().any(|v| v.set_name() == "S1"));

        let l3 = layout(3, 1, &[OpKind::Skip, OpKind::AffineRelu]);
        let same_edge = DiscreteArchitecture { layout: l3, cells: vec![vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]] };
        let v = validate_in_s(&same_edge);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].set_name(), "S1");

        let frac = DiscreteArchitecture { layout: l.clone(), cells: vec![vec![0.5, 0.0, 1.0, 0.0]] };
        assert!(validate_in_s(&frac).iter().any(|v| v.set_name() == "S3"));

        let ln = layout(2, 1, &[OpKind::None, OpKind::Skip]);
        let with_none = DiscreteArchitecture { layout: ln, cells: vec![vec![1.0, 0.0, 0.0, 1.0]] };
        assert!(validate_in_s(&with_none).iter().any(|v| v.set_name() == "none"));
    }

    #[test]
    fn enumeration_counts() {
        let l = layout(2, 1, &[OpKind::None, OpKind::Skip]);
        assert_eq!(enumerate_s(&l, 1).unwrap().len(), 1);
        let l = layout(3, 1, &[OpKind::Skip, OpKind::AffineRelu]);
        let all = enumerate_s(&l, 1).unwrap();
        assert_eq!(all.len(), 12);
        assert_eq!(count_s(&l, 1), 12);
        assert!(all.iter().all(DiscreteArchitecture::is_valid));
        let l = layout(2, 2, &[OpKind::Skip, OpKind::AffineRelu]);
        assert_eq!(enumerate_s(&l, 2).unwrap().len() as u128, count_s(&l, 2));
    }

    #[test]
    fn enumeration_guard() {
        let l = layout(2, 4, &OpKind::ALL);
        assert!(matches!(enumerate_s(&l, 2), Err(Error::EnumerationGuard { .. })));
    }

    #[test]
    fn single_edge_uniform_distance_closed_form() {
        // 2 sources, k ops, uniform softmax 1/k everywhere: each selected entry
        // contributes (1 − 1/k)², each of the other 2k − 2 entries (1/k)².
        for k in 2..6 {
            let ops: Vec<OpKind> = OpKind::ALL[1..=k.min(5)].to_vec();
            let k = ops.len();
            let l = layout(2, 1, &ops);
            let a = ActivatedAlpha::new(l, vec![vec![1.0 / k as f64; 2 * k]]).unwrap();
            let kf = k as f64;
            let want = (2.0 * (1.0 - 1.0 / kf).powi(2) + (2.0 * kf - 2.0) / (kf * kf)).sqrt();
            assert!((distance_to_s(&a).unwrap() - want).abs() < 1e-14);
        }
    }

    #[test]
    fn too_few_sources() {
        let l = layout(1, 1, &[OpKind::Skip]);
        assert!(matches!(project_values(&l, &[vec![1.0]]), Err(Error::TooFewSources { .. })));
    }

    #[test]
    fn pruning_rules() {
        let l = layout(2, 1, &[OpKind::Skip, OpKind::AffineRelu]);
        let mut s = AlphaStore::from_raw(l.clone(), ActivationMode::Crb, vec![vec![0.0, 0.3, 0.2, 0.9]]).unwrap();
        assert_eq!(crb_prune_update(&mut s).unwrap(), 1);
        assert_eq!(s.active[0], vec![false, true, true, true]);
        s.raw[0].data_mut()[0] = 0.8;
        assert_eq!(crb_prune_update(&mut s).unwrap(), 0);
        assert!(!s.active[0][0]);
        assert_eq!(s.activate().cells[0][0], 0.0);

        let mut soft = AlphaStore::init(l, ActivationMode::Softmax, 1);
        assert!(matches!(crb_prune_update(&mut soft), Err(Error::WrongActivationMode(_))));
    }

    #[test]
    fn skip_fraction_counts() {
        let l = layout(2, 4, &[OpKind::Skip, OpKind::AffineRelu]);
        let sel = |state, source, op| Selection { state, source, op };
        let arch = DiscreteArchitecture::from_selections(
            l.clone(),
            &[vec![
                sel(0, 0, 0),
                sel(0, 1, 1),
                sel(1, 0, 1),
                sel(1, 2, 0),
                sel(2, 0, 1),
                sel(2, 1, 1),
                sel(3, 0, 1),
                sel(3, 4, 1),
            ]],
        )
        .unwrap();
        assert!(arch.is_valid());
        assert_eq!(arch.skip_fraction(), 0.25);
    }
}
