//! Retraining a discretized architecture from scratch.

use crate::autodiff::{Graph, Var};
use crate::data::Dataset;
use crate::discretize::DiscreteArchitecture;
use crate::error::{Error, Result};
use crate::optim::{CosineSchedule, OptimizerState};
use crate::search::derive_rng;
use crate::space::SearchSpaceConfig;
use crate::supernet::{avg_proj_matrix, op_forward, AffineIds, OperatorInstance, ParamBank};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 64, lr: 0.05, lr_min: 1e-3, momentum: 0.9, weight_decay: 3e-4, grad_clip: Some(5.0), seed: 101 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct DiscreteCell {
    cell_type: usize,
    adapters: Vec<Option<AffineIds>>,
    /// Per state, its two `(source, operator)` inputs.
    states: Vec<Vec<(usize, OperatorInstance)>>,
}

/// Network holding only the selected operators; state nodes are plain sums.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteNet {
    pub space: SearchSpaceConfig,
    pub params: ParamBank,
    stem: AffineIds,
    cells: Vec<DiscreteCell>,
    head: AffineIds,
}

impl DiscreteNet {
    pub fn build(space: &SearchSpaceConfig, arch: &DiscreteArchitecture, seed: u64) -> Result<Self> {
        space.validate()?;
        if arch.layout != space.layout() || arch.cells.len() != space.num_cell_types {
            return Err(Error::InvalidGenotype("architecture does not match the search space".into()));
        }
        let (ok, violations) = arch.validate();
        if !ok {
            return Err(Error::InvalidGenotype(format!("{} constraint violations", violations.len())));
        }
        let selections = arch.selections();
        let mut rng = derive_rng(seed, 7);
        let mut params = ParamBank::default();
        let d = space.state_width;
        let stem = params.affine(&mut rng, space.input_dim, d);
        let mut widths = vec![d; space.num_input_nodes];
        let mut cells = Vec::with_capacity(space.cells);
        for k in 0..space.cells {
            let cell_type = space.cell_type_of(k);
            let adapters = widths[widths.len() - space.num_input_nodes..]
                .iter()
                .map(|&w| (w != d).then(|| params.affine(&mut rng, w, d)))
                .collect();
            let mut states = vec![Vec::new(); space.num_states];
            for s in &selections[cell_type] {
                let kind = arch.layout.ops[s.op];
                let layers = (0..kind.affine_layers()).map(|_| params.affine(&mut rng, d, d)).collect();
                states[s.state].push((s.source, OperatorInstance { kind, layers }));
            }
            cells.push(DiscreteCell { cell_type, adapters, states });
            widths.push(space.num_states * d);
        }
        let head = params.affine(&mut rng, *widths.last().expect("non-empty"), space.num_classes);
        Ok(Self { space: space.clone(), params, stem, cells, head })
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Cell type of each stacked cell.
    pub fn cell_types(&self) -> Vec<usize> {
        self.cells.iter().map(|c| c.cell_type).collect()
    }

    pub fn forward(&self, g: &mut Graph, x: Var, p: &[Var]) -> Result<Var> {
        let avg = g.constant(avg_proj_matrix(self.space.state_width));
        let stem = g.affine(x, p[self.stem.weight], Some(p[self.stem.bias]))?;
        let k = self.space.num_input_nodes;
        let mut outputs = vec![stem; k];
        for cell in &self.cells {
            let mut nodes = Vec::with_capacity(k + cell.states.len());
            for (&o, ad) in outputs[outputs.len() - k..].iter().zip(&cell.adapters) {
                nodes.push(match ad {
                    Some(a) => g.affine(o, p[a.weight], Some(p[a.bias]))?,
                    None => o,
                });
            }
            for state in &cell.states {
                let mut terms = Vec::with_capacity(state.len());
                for (src, op) in state {
                    if let Some(y) = op_forward(g, op, nodes[*src], p, avg)? {
                        terms.push(y);
                    }
                }
                let s = g.add_n(&terms)?;
                nodes.push(s);
            }
            outputs.push(g.concat_cols(&nodes[k..])?);
        }
        let last = *outputs.last().expect("non-empty");
        g.affine(last, p[self.head.weight], Some(p[self.head.bias]))
    }

    fn batch_loss(&mut self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, true);
        let xv = g.constant(x.clone());
        let logits = self.forward(&mut g, xv, &p)?;
        let loss = g.cross_entropy(logits, labels)?;
        g.backward(loss)?;
        self.params.zero_grads();
        for (t, &v) in self.params.tensors.iter_mut().zip(&p) {
            g.accumulate_into(v, t)?;
        }
        Ok(g.value(loss).data()[0])
    }

    /// SGD with momentum and per-epoch cosine annealing; returns the mean loss of the last epoch.
    pub fn train(&mut self, data: &Dataset, config: &RetrainConfig) -> Result<f64> {
        if config.epochs == 0 || config.batch_size == 0 {
            return Err(Error::InvalidConfig("retraining needs epochs >= 1 and batch_size >= 1".into()));
        }
        if data.is_empty() {
            return Err(Error::DatasetTooSmall { size: 0, needed: 1 });
        }
        let mut opt = OptimizerState::sgd(config.lr, config.momentum, config.weight_decay).with_cosine(CosineSchedule {
            lr_max: config.lr,
            lr_min: config.lr_min,
            horizon: config.epochs,
        })
        .with_grad_clip(config.grad_clip);
        let mut rng = derive_rng(config.seed, 8);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut last = f64::NAN;
        for epoch in 0..config.epochs {
            opt.anneal_to(epoch)?;
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(config.batch_size) {
                let (x, y) = data.batch(chunk);
                total += self.batch_loss(&x, &y)? * chunk.len() as f64;
                let mut refs: Vec<&mut Tensor> = self.params.tensors.iter_mut().collect();
                opt.step(&mut refs)?;
            }
            last = total / data.len() as f64;
        }
        Ok(last)
    }

    pub fn predict(&self, data: &Dataset) -> Result<Vec<usize>> {
        let idx: Vec<usize> = (0..data.len()).collect();
        let (x, _) = data.batch(&idx);
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x);
        let logits = self.forward(&mut g, xv, &p)?;
        let t = g.value(logits);
        let k = self.space.num_classes;
        Ok(t.data()
            .chunks(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }

    /// Fraction of misclassified rows.
    pub fn error_rate(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::DatasetTooSmall { size: 0, needed: 1 });
        }
        let pred = self.predict(data)?;
        let wrong = pred.iter().zip(&data.labels).filter(|(p, l)| p != l).count();
        Ok(wrong as f64 / data.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub test_error: f64,
    pub train_error: f64,
    pub final_loss: f64,
    pub param_count: usize,
}

/// Builds the discrete network, trains it on `train` and scores it on `test`.
pub fn retrain_discrete(
    space: &SearchSpaceConfig,
    arch: &DiscreteArchitecture,
    train: &Dataset,
    test: &Dataset,
    config: &RetrainConfig,
) -> Result<RetrainReport> {
    let mut net = DiscreteNet::build(space, arch, config.seed)?;
    let final_loss = net.train(train, config)?;
    Ok(RetrainReport {
        test_error: net.error_rate(test)?,
        train_error: net.error_rate(train)?,
        final_loss,
        param_count: net.param_count(),
    })
}
