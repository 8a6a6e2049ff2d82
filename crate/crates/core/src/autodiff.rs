//! Define-by-run reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every minibatch: each primitive evaluates
//! eagerly, appends a node to the tape and keeps whatever it needs for the
//! backward sweep. [`Graph::backward`] then walks the tape in reverse and
//! leaves exact derivatives on every node that requires a gradient.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Option<Var> },
    Relu(Var),
    Tanh(Var),
    Clip { x: Var, lo: f64, hi: f64 },
    SoftmaxRows(Var),
    MulConst { x: Var, c: Vec<f64> },
    Mul(Var, Var),
    Scale { x: Var, s: Var, index: usize },
    /// Output holds the normalized values; `inv_std` is per column.
    BatchNorm { x: Var, inv_std: Vec<f64> },
    AddN(Vec<Var>),
    SumAll(Var),
    ConcatCols(Vec<Var>),
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn mismatch(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(op))
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let t = &self.nodes[v.0].value;
        t.dims2()
            .ok_or_else(|| mismatch(op, format!("expected a 2-D tensor, got shape {:?}", t.shape())))
    }

    /// Records a leaf, copying the tensor's value and `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let value = Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid tensor");
        self.push(value, Op::Leaf, t.requires_grad)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        t.grad = None;
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` output with respect to `v`, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient held for `v` into `t.grad`. Unreached nodes contribute nothing.
    pub fn accumulate_into(&self, v: Var, t: &mut Tensor) -> Result<()> {
        match self.grad(v) {
            Some(g) => t.accumulate_grad(g),
            None => Ok(()),
        }
    }

    /// `x · w + b` for `x: [batch, in]`, `w: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (rows, inner) = self.dims2("affine", x)?;
        let (w_in, out) = self.dims2("affine", w)?;
        if w_in != inner {
            return Err(mismatch("affine", format!("input width {} vs weight rows {}", inner, w_in)));
        }
        if let Some(b) = b {
            let bl = self.nodes[b.0].value.len();
            if bl != out {
                return Err(mismatch("affine", format!("bias length {} vs output width {}", bl, out)));
            }
        }
        let xd = self.nodes[x.0].value.data();
        let wd = self.nodes[w.0].value.data();
        let mut y = vec![0.0; rows * out];
        for r in 0..rows {
            let yr = &mut y[r * out..(r + 1) * out];
            if let Some(b) = b {
                yr.copy_from_slice(self.nodes[b.0].value.data());
            }
            for k in 0..inner {
                let a = xd[r * inner + k];
                if a == 0.0 {
                    continue;
                }
                let wr = &wd[k * out..(k + 1) * out];
                for (yv, wv) in yr.iter_mut().zip(wr) {
                    *yv += a * wv;
                }
            }
        }
        check_finite("affine", &y)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(Tensor::new(vec![rows, out], y)?, Op::Affine { x, w, b }, rg))
    }

    fn unary(&mut self, x: Var, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let data: Vec<f64> = t.data().iter().map(|&v| f(v)).collect();
        check_finite(name, &data)?;
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, op, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "relu", |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, "tanh", f64::tanh, Op::Tanh(x))
    }

    /// Elementwise clamp to `[lo, hi]`; the derivative is 1 strictly inside and 0 elsewhere.
    pub fn clip(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(x, "clip", move |v| v.clamp(lo, hi), Op::Clip { x, lo, hi })
    }

    /// Elementwise product with a fixed vector of the same length.
    pub fn mul_const(&mut self, x: Var, c: Vec<f64>) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        if c.len() != t.len() {
            return Err(mismatch("mul_const", format!("{} constants for {} values", c.len(), t.len())));
        }
        let data: Vec<f64> = t.data().iter().zip(&c).map(|(a, b)| a * b).collect();
        check_finite("mul_const", &data)?;
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::MulConst { x, c }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(mismatch("mul", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        check_finite("mul", &data)?;
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Softmax along the last axis of a 2-D tensor.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.dims2("softmax", x)?;
        let xd = self.nodes[x.0].value.data();
        let mut y = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xd[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut y[r * cols..(r + 1) * cols];
            let mut z = 0.0;
            for (o, v) in out.iter_mut().zip(row) {
                *o = (v - m).exp();
                z += *o;
            }
            out.iter_mut().for_each(|o| *o /= z);
        }
        check_finite("softmax", &y)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![rows, cols], y)?, Op::SoftmaxRows(x), rg))
    }

    /// `x * s[index]`, scaling a whole tensor by one element of another.
    pub fn scale(&mut self, x: Var, s: Var, index: usize) -> Result<Var> {
        let sv = self.nodes[s.0].value.data().get(index).copied().ok_or_else(|| {
            mismatch("scale", format!("index {} out of range", index))
        })?;
        let t = &self.nodes[x.0].value;
        let data: Vec<f64> = t.data().iter().map(|v| v * sv).collect();
        check_finite("scale", &data)?;
        let value = Tensor::new(t.shape().to_vec(), data)?;
        let rg = self.rg(&[x, s]);
        Ok(self.push(value, Op::Scale { x, s, index }, rg))
    }

    /// Non-affine batch normalization over the rows of `x: [batch, features]`
    /// using batch statistics (biased variance).
    pub fn batch_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = self.dims2("batch_norm", x)?;
        let xd = self.nodes[x.0].value.data();
        let n = rows as f64;
        let mut y = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; cols];
        for c in 0..cols {
            let mean = (0..rows).map(|r| xd[r * cols + c]).sum::<f64>() / n;
            let var = (0..rows).map(|r| (xd[r * cols + c] - mean).powi(2)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[c] = is;
            for r in 0..rows {
                y[r * cols + c] = (xd[r * cols + c] - mean) * is;
            }
        }
        check_finite("batch_norm", &y)?;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(vec![rows, cols], y)?, Op::BatchNorm { x, inv_std }, rg))
    }

    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| mismatch("add_n", "no operands".into()))?;
        let shape = self.nodes[first.0].value.shape().to_vec();
        let mut data = vec![0.0; self.nodes[first.0].value.len()];
        for v in xs {
            let t = &self.nodes[v.0].value;
            if t.shape() != shape.as_slice() {
                return Err(mismatch("add_n", format!("{:?} vs {:?}", t.shape(), shape)));
            }
            data.iter_mut().zip(t.data()).for_each(|(a, b)| *a += b);
        }
        check_finite("add_n", &data)?;
        let rg = self.rg(xs);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddN(xs.to_vec()), rg))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.nodes[x.0].value.data().iter().sum();
        check_finite("sum_all", &[s])?;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::SumAll(x), rg))
    }

    /// Concatenates 2-D tensors with equal row counts along the columns.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(mismatch("concat", "no operands".into()));
        }
        let mut widths = Vec::with_capacity(xs.len());
        let rows = self.dims2("concat", xs[0])?.0;
        for &v in xs {
            let (r, c) = self.dims2("concat", v)?;
            if r != rows {
                return Err(mismatch("concat", format!("row counts {} vs {}", r, rows)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![0.0; rows * total];
        let mut offset = 0;
        for (&v, &w) in xs.iter().zip(&widths) {
            let src = self.nodes[v.0].value.data();
            for r in 0..rows {
                data[r * total + offset..r * total + offset + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let rg = self.rg(xs);
        Ok(self.push(Tensor::new(vec![rows, total], data)?, Op::ConcatCols(xs.to_vec()), rg))
    }

    /// Mean softmax cross-entropy of `logits: [batch, classes]` against integer labels.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (rows, cols) = self.dims2("cross_entropy", logits)?;
        if labels.len() != rows {
            return Err(mismatch("cross_entropy", format!("{} labels for {} rows", labels.len(), rows)));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
            return Err(mismatch("cross_entropy", format!("label {} with {} classes", bad, cols)));
        }
        let xd = self.nodes[logits.0].value.data();
        let mut probs = vec![0.0; rows * cols];
        let mut loss = 0.0;
        for r in 0..rows {
            let row = &xd[r * cols..(r + 1) * cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + z.ln();
            loss += lse - row[labels[r]];
            for c in 0..cols {
                probs[r * cols + c] = (row[c] - lse).exp();
            }
        }
        loss /= rows as f64;
        check_finite("cross_entropy", &[loss])?;
        let rg = self.rg(&[logits]);
        let op = Op::CrossEntropy { logits, labels: labels.to_vec(), probs };
        Ok(self.push(Tensor::scalar(loss), op, rg))
    }

    /// Reverse sweep from a single-element output. Gradients from any
    /// previous sweep are discarded.
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if out.0 >= self.nodes.len() {
            return Err(Error::BackpropBeforeForward);
        }
        if self.nodes[out.0].value.len() != 1 {
            return Err(mismatch(
                "backward",
                format!("output must be a single value, got shape {:?}", self.nodes[out.0].value.shape()),
            ));
        }
        let Graph { nodes, grads } = self;
        grads.iter_mut().for_each(|g| *g = None);
        grads[out.0] = Some(vec![1.0]);

        for i in (0..=out.0).rev() {
            if !nodes[i].requires_grad {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            backward_node(nodes, grads, i, &gy);
            grads[i] = Some(gy);
        }
        Ok(())
    }
}

fn add_grad(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, contrib: &[f64]) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(g) => g.iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(contrib.to_vec()),
    }
}

fn backward_node(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, gy: &[f64]) {
    let node = &nodes[i];
    let y = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::Affine { x, w, b } => {
            let xt = &nodes[x.0].value;
            let (rows, inner) = xt.dims2().expect("2-D");
            let out = gy.len() / rows;
            let xd = xt.data();
            let wd = nodes[w.0].value.data();
            if nodes[x.0].requires_grad {
                let mut gx = vec![0.0; rows * inner];
                for r in 0..rows {
                    let gr = &gy[r * out..(r + 1) * out];
                    for k in 0..inner {
                        let wr = &wd[k * out..(k + 1) * out];
                        gx[r * inner + k] = gr.iter().zip(wr).map(|(a, b)| a * b).sum();
                    }
                }
                add_grad(nodes, grads, *x, &gx);
            }
            if nodes[w.0].requires_grad {
                let mut gw = vec![0.0; inner * out];
                for r in 0..rows {
                    let gr = &gy[r * out..(r + 1) * out];
                    for k in 0..inner {
                        let a = xd[r * inner + k];
                        if a == 0.0 {
                            continue;
                        }
                        for (g, v) in gw[k * out..(k + 1) * out].iter_mut().zip(gr) {
                            *g += a * v;
                        }
                    }
                }
                add_grad(nodes, grads, *w, &gw);
            }
            if let Some(b) = b {
                let mut gb = vec![0.0; out];
                for r in 0..rows {
                    gb.iter_mut().zip(&gy[r * out..(r + 1) * out]).for_each(|(a, v)| *a += v);
                }
                add_grad(nodes, grads, *b, &gb);
            }
        }
        Op::Relu(x) => {
            let g: Vec<f64> = gy.iter().zip(y).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect();
            add_grad(nodes, grads, *x, &g);
        }
        Op::Tanh(x) => {
            let g: Vec<f64> = gy.iter().zip(y).map(|(g, v)| g * (1.0 - v * v)).collect();
            add_grad(nodes, grads, *x, &g);
        }
        Op::Clip { x, lo, hi } => {
            let xd = nodes[x.0].value.data();
            let g: Vec<f64> = gy
                .iter()
                .zip(xd)
                .map(|(g, &v)| if v > *lo && v < *hi { *g } else { 0.0 })
                .collect();
            add_grad(nodes, grads, *x, &g);
        }
        Op::SoftmaxRows(x) => {
            let (rows, cols) = node.value.dims2().expect("2-D");
            let mut g = vec![0.0; rows * cols];
            for r in 0..rows {
                let yr = &y[r * cols..(r + 1) * cols];
                let gr = &gy[r * cols..(r + 1) * cols];
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for c in 0..cols {
                    g[r * cols + c] = yr[c] * (gr[c] - dot);
                }
            }
            add_grad(nodes, grads, *x, &g);
        }
        Op::MulConst { x, c } => {
            let g: Vec<f64> = gy.iter().zip(c).map(|(a, b)| a * b).collect();
            add_grad(nodes, grads, *x, &g);
        }
        Op::Mul(a, b) => {
            let (ad, bd) = (nodes[a.0].value.data(), nodes[b.0].value.data());
            let ga: Vec<f64> = gy.iter().zip(bd).map(|(g, v)| g * v).collect();
            let gb: Vec<f64> = gy.iter().zip(ad).map(|(g, v)| g * v).collect();
            add_grad(nodes, grads, *a, &ga);
            add_grad(nodes, grads, *b, &gb);
        }
        Op::Scale { x, s, index } => {
            let st = &nodes[s.0].value;
            let sv = st.data()[*index];
            let xd = nodes[x.0].value.data();
            if nodes[x.0].requires_grad {
                let gx: Vec<f64> = gy.iter().map(|g| g * sv).collect();
                add_grad(nodes, grads, *x, &gx);
            }
            if nodes[s.0].requires_grad {
                let mut gs = vec![0.0; st.len()];
                gs[*index] = gy.iter().zip(xd).map(|(a, b)| a * b).sum();
                add_grad(nodes, grads, *s, &gs);
            }
        }
        Op::BatchNorm { x, inv_std } => {
            let (rows, cols) = node.value.dims2().expect("2-D");
            let n = rows as f64;
            let mut g = vec![0.0; rows * cols];
            for c in 0..cols {
                let mean_g = (0..rows).map(|r| gy[r * cols + c]).sum::<f64>() / n;
                let mean_gx = (0..rows).map(|r| gy[r * cols + c] * y[r * cols + c]).sum::<f64>() / n;
                for r in 0..rows {
                    let k = r * cols + c;
                    g[k] = inv_std[c] * (gy[k] - mean_g - y[k] * mean_gx);
                }
            }
            add_grad(nodes, grads, *x, &g);
        }
        Op::AddN(xs) => {
            for v in xs {
                add_grad(nodes, grads, *v, gy);
            }
        }
        Op::SumAll(x) => {
            let g = vec![gy[0]; nodes[x.0].value.len()];
            add_grad(nodes, grads, *x, &g);
        }
        Op::ConcatCols(xs) => {
            let (rows, total) = node.value.dims2().expect("2-D");
            let mut offset = 0;
            for v in xs {
                let w = nodes[v.0].value.dims2().expect("2-D").1;
                if nodes[v.0].requires_grad {
                    let mut g = vec![0.0; rows * w];
                    for r in 0..rows {
                        g[r * w..(r + 1) * w]
                            .copy_from_slice(&gy[r * total + offset..r * total + offset + w]);
                    }
                    add_grad(nodes, grads, *v, &g);
                }
                offset += w;
            }
        }
        Op::CrossEntropy { logits, labels, probs } => {
            let rows = labels.len();
            let cols = probs.len() / rows;
            let scale = gy[0] / rows as f64;
            let mut g: Vec<f64> = probs.iter().map(|p| p * scale).collect();
            for (r, &l) in labels.iter().enumerate() {
                g[r * cols + l] -= scale;
            }
            add_grad(nodes, grads, *logits, &g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn affine_identity() {
        let mut g = Graph::new();
        let x = g.constant(t(vec![1, 2], vec![1.0, 2.0]));
        let w = g.constant(t(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(Tensor::zeros(vec![2]));
        let y = g.affine(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 3]));
        let y = g.softmax_rows(x).unwrap();
        for v in g.value(y).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_cross_entropy_is_ln2() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![3, 2]));
        let l = g.cross_entropy(x, &[0, 1, 1]).unwrap();
        assert!((g.value(l).data()[0] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn square_has_gradient_six_at_three() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::scalar(3.0).param());
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn softmax_cross_entropy_gradient_identity() {
        let logits = vec![0.3, -1.2, 0.5, 2.0, 0.1, -0.4];
        let labels = [2, 0];
        let mut g = Graph::new();
        let x = g.leaf(&t(vec![2, 3], logits.clone()).param());
        let l = g.cross_entropy(x, &labels).unwrap();
        g.backward(l).unwrap();
        let got = g.grad(x).unwrap();
        for r in 0..2 {
            let row = &logits[r * 3..r * 3 + 3];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            for c in 0..3 {
                let onehot = if labels[r] == c { 1.0 } else { 0.0 };
                let want = (row[c].exp() / z - onehot) / 2.0;
                assert!((got[r * 3 + c] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn backward_rejects_unknown_or_vector_output() {
        let mut g = Graph::new();
        assert!(matches!(g.backward(Var(0)), Err(Error::BackpropBeforeForward)));
        let x = g.leaf(&Tensor::zeros(vec![2]).param());
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(t(vec![1], vec![f64::MAX]));
        assert!(matches!(g.mul(x, x), Err(Error::NonFinite("mul"))));
    }

    #[test]
    fn affine_rejects_bad_shapes() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 3]));
        let w = g.constant(Tensor::zeros(vec![2, 2]));
        assert!(matches!(g.affine(x, w, None), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn gradients_accumulate_across_passes() {
        let mut p = Tensor::scalar(2.0).param();
        for _ in 0..2 {
            let mut g = Graph::new();
            let x = g.leaf(&p);
            let y = g.mul(x, x).unwrap();
            g.backward(y).unwrap();
            g.accumulate_into(x, &mut p).unwrap();
        }
        assert_eq!(p.grad.as_deref(), Some(&[8.0][..]));
    }
}
