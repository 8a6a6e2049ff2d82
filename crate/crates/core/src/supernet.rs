//! The over-parameterized search network.
//!
//! Layout: affine input stem, a stack of cells (each consuming the outputs
//! of the previous `num_input_nodes` cells, with affine adapters where a
//! width differs from the state width), and an affine classifier head.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::space::{ActivationMode, AlphaStore, OpKind, SearchSpaceConfig};
use crate::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Batchnorm denominator epsilon.
pub const BN_EPS: f64 = 1e-5;

/// Indices of an affine layer's weight `[in, out]` and bias `[out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AffineIds {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorInstance {
    pub kind: OpKind,
    /// Affine layers owned by this edge, in application order.
    pub layers: Vec<AffineIds>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub cell_type: usize,
    /// One adapter per input node; `None` when the input already has state width.
    pub adapters: Vec<Option<AffineIds>>,
    /// `edges[e][p]`, edges in layout order.
    pub edges: Vec<Vec<OperatorInstance>>,
}

/// Owns parameter tensors and hands out affine layers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamBank {
    pub tensors: Vec<Tensor>,
}

impl ParamBank {
    /// He-uniform weights, zero bias.
    pub fn affine(&mut self, rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> AffineIds {
        let bound = (6.0 / fan_in as f64).sqrt();
        let w: Vec<f64> = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        self.tensors.push(Tensor::new(vec![fan_in, fan_out], w).expect("shape").param());
        self.tensors.push(Tensor::zeros(vec![fan_out]).param());
        AffineIds { weight: self.tensors.len() - 2, bias: self.tensors.len() - 1 }
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| if trainable { g.leaf(t) } else { g.constant(t.clone()) })
            .collect()
    }

    /// Gradient buffers of every tensor, concatenated (zeros where absent).
    pub fn flat_grad(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| match &t.grad {
                Some(g) => g.clone(),
                None => vec![0.0; t.len()],
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Supernet {
    pub config: SearchSpaceConfig,
    pub params: ParamBank,
    pub stem: AffineIds,
    pub cells: Vec<CellParams>,
    pub head: AffineIds,
}

/// Circular three-tap averaging as a `[width, width]` matrix in `x · M` form.
pub fn avg_proj_matrix(width: usize) -> Tensor {
    let mut m = vec![0.0; width * width];
    for k in 0..width {
        for d in [width - 1, 0, 1] {
            let j = (k + d) % width;
            m[j * width + k] += 1.0 / 3.0;
        }
    }
    Tensor::new(vec![width, width], m).expect("shape")
}

/// Graph handles for one forward pass.
#[derive(Debug, Clone)]
pub struct Bindings {
    pub params: Vec<Var>,
    /// Raw α leaf per cell type.
    pub alpha_raw: Vec<Var>,
    /// Activated α per cell type, shape `[edges, ops]`.
    pub alpha: Vec<Var>,
    pub avg: Var,
}

/// Applies a single operator; `None` for the `none` operator (zero output).
pub fn op_forward(
    g: &mut Graph,
    op: &OperatorInstance,
    x: Var,
    params: &[Var],
    avg: Var,
) -> Result<Option<Var>> {
    let affine = |g: &mut Graph, x: Var, l: &AffineIds| g.affine(x, params[l.weight], Some(params[l.bias]));
    let y = match op.kind {
        OpKind::None => return Ok(None),
        OpKind::Skip => x,
        OpKind::AvgProj => g.affine(x, avg, None)?,
        OpKind::AffineRelu => {
            let h = affine(g, x, &op.layers[0])?;
            g.relu(h)?
        }
        OpKind::AffineTanh => {
            let h = affine(g, x, &op.layers[0])?;
            g.tanh(h)?
        }
        OpKind::SepAffine => {
            let h = affine(g, x, &op.layers[0])?;
            let h = g.relu(h)?;
            let h = affine(g, h, &op.layers[1])?;
            g.relu(h)?
        }
    };
    Ok(Some(y))
}

fn zeros_like(g: &mut Graph, x: Var) -> Var {
    let shape = g.value(x).shape().to_vec();
    g.constant(Tensor::zeros(shape))
}

/// `Σ_p a_p · op_p(x)` for one edge whose weights are row `edge` of `weights`.
/// Entries flagged inactive are skipped entirely.
#[allow(clippy::too_many_arguments)]
pub fn mixed_edge_forward(
    g: &mut Graph,
    x: Var,
    ops: &[OperatorInstance],
    weights: Var,
    edge: usize,
    active: Option<&[bool]>,
    params: &[Var],
    avg: Var,
) -> Result<Var> {
    let width = g.value(weights).dims2().map(|d| d.1).unwrap_or(0);
    if width != ops.len() {
        return Err(Error::ShapeMismatch {
            op: "mixed_edge",
            detail: format!("{} weights per edge for {} operators", width, ops.len()),
        });
    }
    let mut terms = Vec::with_capacity(ops.len());
    for (p, op) in ops.iter().enumerate() {
        let idx = edge * ops.len() + p;
        if active.is_some_and(|m| !m[idx]) {
            continue;
        }
        if let Some(y) = op_forward(g, op, x, params, avg)? {
            terms.push(g.scale(y, weights, idx)?);
        }
    }
    if terms.is_empty() {
        return Ok(zeros_like(g, x));
    }
    g.add_n(&terms)
}

impl Supernet {
    pub fn build(config: &SearchSpaceConfig, seed: u64) -> Result<(Supernet, AlphaStore)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamBank::default();
        let d = config.state_width;
        let stem = params.affine(&mut rng, config.input_dim, d);
        let layout = config.layout();

        let mut widths = vec![d; config.num_input_nodes];
        let mut cells = Vec::with_capacity(config.cells);
        for k in 0..config.cells {
            let inputs = &widths[widths.len() - config.num_input_nodes..];
            let adapters = inputs
                .iter()
                .map(|&w| (w != d).then(|| params.affine(&mut rng, w, d)))
                .collect();
            let edges = layout
                .edges()
                .map(|_| {
                    layout
                        .ops
                        .iter()
                        .map(|&kind| OperatorInstance {
                            kind,
                            layers: (0..kind.affine_layers()).map(|_| params.affine(&mut rng, d, d)).collect(),
                        })
                        .collect()
                })
                .collect();
            cells.push(CellParams { cell_type: config.cell_type_of(k), adapters, edges });
            widths.push(config.num_states * d);
        }
        let head = params.affine(&mut rng, *widths.last().expect("non-empty"), config.num_classes);
        let alpha = AlphaStore::init(layout, config.activation, config.num_cell_types);
        Ok((Supernet { config: config.clone(), params, stem, cells, head }, alpha))
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Records parameters and α on the graph and activates α in-graph.
    pub fn bind(&self, g: &mut Graph, alpha: &AlphaStore, train_w: bool, train_alpha: bool) -> Result<Bindings> {
        let params = self.params.bind(g, train_w);
        let avg = g.constant(avg_proj_matrix(self.config.state_width));
        let mut alpha_raw = Vec::new();
        let mut act = Vec::new();
        for (c, t) in alpha.raw.iter().enumerate() {
            let raw = if train_alpha { g.leaf(t) } else { g.constant(t.clone()) };
            let a = match alpha.mode {
                ActivationMode::Softmax => g.softmax_rows(raw)?,
                ActivationMode::Crb => {
                    let clipped = g.clip(raw, 0.0, 1.0)?;
                    let mask = alpha.active[c].iter().map(|&on| if on { 1.0 } else { 0.0 }).collect();
                    g.mul_const(clipped, mask)?
                }
            };
            alpha_raw.push(raw);
            act.push(a);
        }
        Ok(Bindings { params, alpha_raw, alpha: act, avg })
    }

    /// States in topological order, concatenated. In CRB mode each state sum
    /// is batch-normalized before use.
    pub fn cell_forward(
        &self,
        g: &mut Graph,
        inputs: &[Var],
        cell: &CellParams,
        alpha: &AlphaStore,
        b: &Bindings,
    ) -> Result<Var> {
        let layout = &alpha.layout;
        if inputs.len() != layout.num_inputs {
            return Err(Error::ShapeMismatch {
                op: "cell",
                detail: format!("{} inputs for {} input nodes", inputs.len(), layout.num_inputs),
            });
        }
        let d = self.config.state_width;
        for &x in inputs {
            let w = g.value(x).dims2().map(|d| d.1);
            if w != Some(d) {
                return Err(Error::ShapeMismatch { op: "cell", detail: format!("input width {:?}, state width {}", w, d) });
            }
        }
        let weights = b.alpha[cell.cell_type];
        let mask = (alpha.mode == ActivationMode::Crb).then(|| alpha.active[cell.cell_type].as_slice());
        let mut nodes: Vec<Var> = inputs.to_vec();
        for i in 0..layout.num_states {
            let mut incoming = Vec::with_capacity(layout.sources(i));
            for (j, &node) in nodes.iter().enumerate().take(layout.sources(i)) {
                let e = layout.edge_index(i, j);
                incoming.push(mixed_edge_forward(g, node, &cell.edges[e], weights, e, mask, &b.params, b.avg)?);
            }
            let mut s = g.add_n(&incoming)?;
            if alpha.mode == ActivationMode::Crb {
                s = g.batch_norm(s, BN_EPS)?;
            }
            nodes.push(s);
        }
        g.concat_cols(&nodes[layout.num_inputs..])
    }

    /// Logits `[batch, classes]` for a batch `x: [batch, input_dim]`.
    pub fn forward(&self, g: &mut Graph, x: Var, alpha: &AlphaStore, b: &Bindings) -> Result<Var> {
        let p = &b.params;
        let stem = g.affine(x, p[self.stem.weight], Some(p[self.stem.bias]))?;
        let k = self.config.num_input_nodes;
        let mut outputs = vec![stem; k];
        for cell in &self.cells {
            let prev = &outputs[outputs.len() - k..];
            let mut inputs = Vec::with_capacity(k);
            for (&o, ad) in prev.iter().zip(&cell.adapters) {
                inputs.push(match ad {
                    Some(a) => g.affine(o, p[a.weight], Some(p[a.bias]))?,
                    None => o,
                });
            }
            let out = self.cell_forward(g, &inputs, cell, alpha, b)?;
            outputs.push(out);
        }
        let last = *outputs.last().expect("non-empty");
        g.affine(last, p[self.head.weight], Some(p[self.head.bias]))
    }

    /// Mean cross-entropy of the batch; returns the graph, bindings and loss node.
    pub fn loss(
        &self,
        alpha: &AlphaStore,
        features: &Tensor,
        labels: &[usize],
        train_w: bool,
        train_alpha: bool,
    ) -> Result<(Graph, Bindings, Var)> {
        let mut g = Graph::new();
        let b = self.bind(&mut g, alpha, train_w, train_alpha)?;
        let x = g.constant(features.clone());
        let logits = self.forward(&mut g, x, alpha, &b)?;
        let loss = g.cross_entropy(logits, labels)?;
        Ok((g, b, loss))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::CellLayout;

    fn config(states: usize, ops: Vec<OpKind>) -> SearchSpaceConfig {
        SearchSpaceConfig {
            num_states: states,
            operators: ops,
            state_width: 4,
            cells: 1,
            ..Default::default()
        }
    }

    #[test]
    fn alpha_entry_count() {
        let c = config(1, vec![OpKind::None, OpKind::Skip, OpKind::AffineRelu]);
        let (_, a) = Supernet::build(&c, 1).unwrap();
        assert_eq!(a.entry_count(), 6);
    }

    #[test]
    fn build_is_deterministic() {
        let c = SearchSpaceConfig::default();
        let (a, _) = Supernet::build(&c, 7).unwrap();
        let (b, _) = Supernet::build(&c, 7).unwrap();
        assert_eq!(a, b);
        let (d, _) = Supernet::build(&c, 8).unwrap();
        assert_ne!(a.params, d.params);
    }

    #[test]
    fn parameter_free_ops_own_nothing_and_edges_do_not_share() {
        let (net, _) = Supernet::build(&SearchSpaceConfig::default(), 3).unwrap();
        let mut seen = std::collections::HashSet::new();
        for cell in &net.cells {
            for edge in &cell.edges {
                for op in edge {
                    assert_eq!(op.layers.is_empty(), !op.kind.is_parameterized());
                    for l in &op.layers {
                        assert!(seen.insert(l.weight));
                        assert!(seen.insert(l.bias));
                    }
                }
            }
        }
    }

    #[test]
    fn avg_rows_and_columns_sum_to_one() {
        for w in 1..6 {
            let m = avg_proj_matrix(w);
            for k in 0..w {
                let col: f64 = (0..w).map(|j| m.data()[j * w + k]).sum();
                assert!((col - 1.0).abs() < 1e-12);
            }
        }
    }

    fn batch(rows: usize, width: usize) -> Tensor {
        let data = (0..rows * width).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        Tensor::new(vec![rows, width], data).unwrap()
    }

    #[test]
    fn one_hot_skip_edge_is_identity() {
        let c = config(1, vec![OpKind::None, OpKind::Skip, OpKind::AffineRelu]);
        let (net, _) = Supernet::build(&c, 1).unwrap();
        let mut g = Graph::new();
        let params = net.params.bind(&mut g, false);
        let avg = g.constant(avg_proj_matrix(4));
        let w = g.constant(Tensor::new(vec![2, 3], vec![0.0, 1.0, 0.0, 0.0, 1.0, 0.0]).unwrap());
        let x = g.constant(batch(3, 4));
        let y = mixed_edge_forward(&mut g, x, &net.cells[0].edges[0], w, 0, None, &params, avg).unwrap();
        assert_eq!(g.value(y).data(), batch(3, 4).data());

        let z = g.constant(Tensor::zeros(vec![2, 3]));
        let y = mixed_edge_forward(&mut g, x, &net.cells[0].edges[0], z, 0, None, &params, avg).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_half_weights_average_two_ops() {
        let c = config(1, vec![OpKind::None, OpKind::AvgProj, OpKind::AffineTanh]);
        let (net, _) = Supernet::build(&c, 2).unwrap();
        let mut g = Graph::new();
        let params = net.params.bind(&mut g, false);
        let avg = g.constant(avg_proj_matrix(4));
        let x = g.constant(batch(2, 4));
        let ops = &net.cells[0].edges[1];
        let w = g.constant(Tensor::new(vec![2, 3], vec![0.0, 0.5, 0.5, 0.0, 0.5, 0.5]).unwrap());
        let y = mixed_edge_forward(&mut g, x, ops, w, 1, None, &params, avg).unwrap();
        let a = op_forward(&mut g, &ops[1], x, &params, avg).unwrap().unwrap();
        let t = op_forward(&mut g, &ops[2], x, &params, avg).unwrap().unwrap();
        for ((y, a), t) in g.value(y).data().iter().zip(g.value(a).data()).zip(g.value(t).data()) {
            assert!((y - 0.5 * (a + t)).abs() < 1e-15);
        }
    }

    #[test]
    fn cell_output_width_and_one_hot_path() {
        let c = SearchSpaceConfig { num_states: 4, state_width: 8, cells: 1, ..Default::default() };
        let (net, alpha) = Supernet::build(&c, 1).unwrap();
        let mut g = Graph::new();
        let b = net.bind(&mut g, &alpha, false, false).unwrap();
        let x0 = g.constant(batch(2, 8));
        let x1 = g.constant(batch(2, 8));
        let y = net.cell_forward(&mut g, &[x0, x1], &net.cells[0], &alpha, &b).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 32]);

        // 1 state: skip from input 0 at (nearly) full weight, none everywhere else.
        let c = config(1, vec![OpKind::None, OpKind::Skip, OpKind::AffineRelu]);
        let (net, _) = Supernet::build(&c, 1).unwrap();
        let l = CellLayout::new(2, 1, c.operators.clone());
        let alpha = AlphaStore::from_raw(l, ActivationMode::Softmax, vec![vec![-40.0, 40.0, -40.0, 40.0, -40.0, -40.0]]).unwrap();
        let mut g = Graph::new();
        let b = net.bind(&mut g, &alpha, false, false).unwrap();
        let x0 = g.constant(batch(2, 4));
        let x1 = g.constant(Tensor::new(vec![2, 4], vec![5.0; 8]).unwrap());
        let y = net.cell_forward(&mut g, &[x0, x1], &net.cells[0], &alpha, &b).unwrap();
        for (y, x) in g.value(y).data().iter().zip(batch(2, 4).data()) {
            assert!((y - x).abs() < 1e-12);
        }
    }

    #[test]
    fn logits_shape_and_determinism() {
        let c = SearchSpaceConfig { cells: 1, num_classes: 3, ..Default::default() };
        let (net, alpha) = Supernet::build(&c, 9).unwrap();
        let x = batch(1, 2);
        let run = || {
            let mut g = Graph::new();
            let b = net.bind(&mut g, &alpha, false, false).unwrap();
            let xv = g.constant(x.clone());
            let y = net.forward(&mut g, xv, &alpha, &b).unwrap();
            g.value(y).clone()
        };
        let a = run();
        assert_eq!(a.shape(), &[1, 3]);
        assert_eq!(a, run());
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let (net, alpha) = Supernet::build(&SearchSpaceConfig::default(), 1).unwrap();
        let mut g = Graph::new();
        let b = net.bind(&mut g, &alpha, false, false).unwrap();
        let x = g.constant(batch(2, 3));
        assert!(net.forward(&mut g, x, &alpha, &b).is_err());
    }
}
