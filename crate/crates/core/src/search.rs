//! First-order bilevel search: weight steps on the training split, scheduled
//! architecture steps on the validation split.

use crate::autodiff::Graph;
use crate::data::Dataset;
use crate::discretize::{crb_prune_update, distance_to_s, project_to_s, DiscreteArchitecture};
use crate::error::{Error, Result};
use crate::history::{AlphaSnapshot, SearchHistory, StepRecord};
use crate::optim::{CosineSchedule, OptimizerState};
use crate::regularize::{
    admm_penalty, admm_update_zu, proximity_grad, proximity_penalty, ramp_c, AdmmConfig, AdmmState,
    ProximityConfig,
};
use crate::schedule::{fimt_trace, ScheduleKind, Scheduler, SchedulerConfig};
use crate::space::{ActivationMode, AlphaStore, SearchSpaceConfig};
use crate::supernet::Supernet;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegularizerConfig {
    #[default]
    None,
    Proximity(ProximityConfig),
    Admm(AdmmConfig),
}

/// How the proximity ramp `c` advances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampIndexing {
    /// By epoch for the dynamic schedule, by architecture step otherwise.
    #[default]
    Auto,
    AlphaSteps,
    Epochs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightOptConfig {
    pub lr: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub grad_clip: Option<f64>,
}

impl Default for WeightOptConfig {
    fn default() -> Self {
        Self { lr: 0.05, lr_min: 1e-3, momentum: 0.9, weight_decay: 3e-4, grad_clip: Some(5.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaOptConfig {
    pub lr: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub cosine: bool,
}

impl Default for AlphaOptConfig {
    fn default() -> Self {
        Self { lr: 0.01, lr_min: 0.0, beta1: 0.5, beta2: 0.999, eps: 1e-8, weight_decay: 1e-3, cosine: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub space: SearchSpaceConfig,
    pub scheduler: SchedulerConfig,
    pub regularizer: RegularizerConfig,
    pub ramp: RampIndexing,
    pub epochs: usize,
    pub batch_size: usize,
    pub w_opt: WeightOptConfig,
    pub alpha_opt: AlphaOptConfig,
    pub seed: u64,
    /// Record a projected architecture at the end of every epoch divisible by
    /// this (starting with epoch 0), plus the final one.
    pub checkpoint_every: Option<usize>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            space: SearchSpaceConfig::default(),
            scheduler: SchedulerConfig::default(),
            regularizer: RegularizerConfig::None,
            ramp: RampIndexing::Auto,
            epochs: 20,
            batch_size: 64,
            w_opt: WeightOptConfig::default(),
            alpha_opt: AlphaOptConfig::default(),
            seed: 101,
            checkpoint_every: None,
        }
    }
}

fn positive(x: f64) -> bool {
    x > 0.0 && x.is_finite()
}

fn non_negative(x: f64) -> bool {
    x >= 0.0 && x.is_finite()
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        self.scheduler.validate()?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        let w = &self.w_opt;
        if !positive(w.lr) || !non_negative(w.lr_min) || !(0.0..1.0).contains(&w.momentum) || !non_negative(w.weight_decay)
            || w.grad_clip.is_some_and(|c| !positive(c))
        {
            return bad("invalid weight optimizer settings");
        }
        let a = &self.alpha_opt;
        if !positive(a.lr)
            || !non_negative(a.lr_min)
            || !(0.0..1.0).contains(&a.beta1)
            || !(0.0..1.0).contains(&a.beta2)
            || !positive(a.eps)
            || !non_negative(a.weight_decay)
        {
            return bad("invalid architecture optimizer settings");
        }
        match self.regularizer {
            RegularizerConfig::None => {}
            RegularizerConfig::Proximity(p) => {
                if !non_negative(p.rho) || !non_negative(p.kink_epsilon) {
                    return bad("proximity rho and kink_epsilon must be >= 0");
                }
            }
            RegularizerConfig::Admm(c) => {
                if !non_negative(c.rho) || !(0.0..=1.0).contains(&c.decay) || c.period == 0 {
                    return bad("admm needs rho >= 0, decay in [0, 1], period >= 1");
                }
            }
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be >= 1");
        }
        Ok(())
    }

    /// Architecture optimizer as actually used: CRB disables decay and annealing.
    pub fn effective_alpha_opt(&self) -> AlphaOptConfig {
        let mut a = self.alpha_opt;
        if self.space.activation == ActivationMode::Crb {
            a.weight_decay = 0.0;
            a.cosine = false;
        }
        a
    }

    fn ramp_by_epoch(&self) -> bool {
        match self.ramp {
            RampIndexing::Auto => self.scheduler.kind == ScheduleKind::DynamicFimt,
            RampIndexing::AlphaSteps => false,
            RampIndexing::Epochs => true,
        }
    }
}

/// Independent stream for one purpose of a run.
pub fn derive_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seeded permutation split into `(train, valid)` index sets with
/// `valid = ⌊n / (r + 1)⌋`, so the training split is about `r` times larger.
pub fn split_indices(n: usize, ratio: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let ratio = ratio.max(1);
    let valid_len = n / (ratio + 1);
    if valid_len == 0 {
        return Err(Error::DatasetTooSmall { size: n, needed: ratio + 1 });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut derive_rng(seed, 1));
    let valid = idx.split_off(n - valid_len);
    Ok((idx, valid))
}

pub fn split_dataset(data: &Dataset, ratio: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let (t, v) = split_indices(data.len(), ratio, seed)?;
    Ok((data.subset(&t), data.subset(&v)))
}

/// Endless stream of shuffled minibatches; reshuffles when a pass runs out.
#[derive(Debug, Clone)]
pub struct BatchCycler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchCycler {
    pub fn new(n: usize, rng: ChaCha8Rng) -> Self {
        Self { order: (0..n).collect(), pos: n, rng }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.pos + size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        b
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightStep {
    pub loss: f64,
    /// Flattened `∇_w L_train` taken before the update.
    pub grad: Vec<f64>,
    pub trace: f64,
}

/// Loss and gradient of the training loss with respect to the weights, α fixed.
pub fn weight_gradient(net: &mut Supernet, alpha: &AlphaStore, x: &Tensor, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    let (mut g, b, loss) = net.loss(alpha, x, labels, true, false)?;
    g.backward(loss)?;
    net.params.zero_grads();
    for (t, &v) in net.params.tensors.iter_mut().zip(&b.params) {
        g.accumulate_into(v, t)?;
    }
    Ok((g.value(loss).data()[0], net.params.flat_grad()))
}

/// One SGD step on the weights.
pub fn w_step(
    net: &mut Supernet,
    alpha: &AlphaStore,
    x: &Tensor,
    labels: &[usize],
    opt: &mut OptimizerState,
) -> Result<WeightStep> {
    let (loss, grad) = weight_gradient(net, alpha, x, labels)?;
    let trace = fimt_trace(&grad)?;
    let mut refs: Vec<&mut Tensor> = net.params.tensors.iter_mut().collect();
    opt.step(&mut refs)?;
    Ok(WeightStep { loss, grad, trace })
}

/// Regularizer together with its running state.
#[derive(Debug, Clone, PartialEq)]
pub enum Regularizer {
    None,
    Proximity(ProximityConfig),
    Admm(AdmmState),
}

impl Regularizer {
    pub fn new(config: &RegularizerConfig, alpha: &AlphaStore) -> Result<Self> {
        Ok(match config {
            RegularizerConfig::None => Self::None,
            RegularizerConfig::Proximity(p) => Self::Proximity(*p),
            RegularizerConfig::Admm(c) => Self::Admm(AdmmState::init(&alpha.activate(), *c)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss: f64,
    pub penalty: f64,
    /// Gradient of `loss + penalty` with respect to raw α, per cell type.
    pub grad: Vec<Vec<f64>>,
}

impl Objective {
    pub fn value(&self) -> f64 {
        self.loss + self.penalty
    }
}

/// Validation loss plus regularizer at the current weights. A regularizer
/// with zero strength contributes nothing, not even a zero gradient.
pub fn alpha_objective(
    net: &Supernet,
    alpha: &AlphaStore,
    x: &Tensor,
    labels: &[usize],
    reg: &Regularizer,
    c: f64,
) -> Result<Objective> {
    let (mut g, b, loss): (Graph, _, _) = net.loss(alpha, x, labels, false, true)?;
    g.backward(loss)?;
    let mut grad: Vec<Vec<f64>> = b
        .alpha_raw
        .iter()
        .zip(&alpha.raw)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    let extra = match reg {
        Regularizer::Proximity(p) if p.rho > 0.0 && c > 0.0 => {
            Some((proximity_penalty(&alpha.activate(), c, p)?, proximity_grad(alpha, c, p)?))
        }
        Regularizer::Admm(st) if st.config.rho > 0.0 => Some(admm_penalty(alpha, st)?),
        _ => None,
    };
    let mut penalty = 0.0;
    if let Some((value, pg)) = extra {
        penalty = value;
        for (g, p) in grad.iter_mut().zip(&pg) {
            for (a, b) in g.iter_mut().zip(p) {
                *a += b;
            }
        }
    }
    Ok(Objective { loss: g.value(loss).data()[0], penalty, grad })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaStepReport {
    pub val_loss: f64,
    pub penalty: f64,
    /// Distance to the discrete set at the point the objective was evaluated.
    pub distance: f64,
    /// Entries newly pruned (CRB only).
    pub pruned: usize,
}

/// One Adam step on α; in CRB mode followed by pruning.
pub fn alpha_step(
    net: &Supernet,
    alpha: &mut AlphaStore,
    x: &Tensor,
    labels: &[usize],
    reg: &Regularizer,
    c: f64,
    opt: &mut OptimizerState,
) -> Result<AlphaStepReport> {
    let distance = distance_to_s(&alpha.activate())?;
    let obj = alpha_objective(net, alpha, x, labels, reg, c)?;
    for (t, g) in alpha.raw.iter_mut().zip(obj.grad) {
        t.grad = Some(g);
    }
    let mut refs: Vec<&mut Tensor> = alpha.raw.iter_mut().collect();
    opt.step(&mut refs)?;
    let pruned = if alpha.mode == ActivationMode::Crb { crb_prune_update(alpha)? } else { 0 };
    Ok(AlphaStepReport { val_loss: obj.loss, penalty: obj.penalty, distance, pruned })
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub architecture: DiscreteArchitecture,
    pub alpha: AlphaStore,
    pub net: Supernet,
    pub history: SearchHistory,
    pub train_size: usize,
    pub valid_size: usize,
    pub w_steps: u64,
    pub alpha_steps: u64,
}

fn snapshot(epoch: usize, alpha: &AlphaStore) -> AlphaSnapshot {
    AlphaSnapshot { epoch, raw: alpha.raw_values(), activated: alpha.activate(), active: alpha.active.clone() }
}

/// Runs a full search on `data`, which is split into training and
/// validation parts sized for the schedule's step ratio.
pub fn run_search(config: &SearchConfig, data: &Dataset) -> Result<SearchOutcome> {
    config.validate()?;
    if data.dim != config.space.input_dim || data.classes != config.space.num_classes {
        return Err(Error::InvalidConfig(format!(
            "dataset has dim {} and {} classes, search space expects {} and {}",
            data.dim, data.classes, config.space.input_dim, config.space.num_classes
        )));
    }
    let (mut net, mut alpha) = Supernet::build(&config.space, config.seed)?;
    let (train, valid) = split_dataset(data, config.scheduler.split_ratio(), config.seed)?;
    let batch = config.batch_size.min(train.len());
    let steps_per_epoch = train.len().div_ceil(batch);
    let total_steps = steps_per_epoch * config.epochs;

    let w = &config.w_opt;
    let mut w_opt = OptimizerState::sgd(w.lr, w.momentum, w.weight_decay).with_cosine(CosineSchedule {
        lr_max: w.lr,
        lr_min: w.lr_min,
        horizon: config.epochs,
    })
    .with_grad_clip(w.grad_clip);
    let a = config.effective_alpha_opt();
    let mut a_opt = OptimizerState::adam(a.lr, a.beta1, a.beta2, a.eps, a.weight_decay);
    if a.cosine {
        a_opt = a_opt.with_cosine(CosineSchedule { lr_max: a.lr, lr_min: a.lr_min, horizon: config.epochs });
    }

    let mut scheduler = Scheduler::new(config.scheduler)?;
    let mut reg = Regularizer::new(&config.regularizer, &alpha)?;
    let by_epoch = config.ramp_by_epoch();
    let planned_alpha_steps = match config.scheduler.kind {
        ScheduleKind::Alternating => total_steps,
        ScheduleKind::Constant(k) => total_steps / k,
        ScheduleKind::DynamicFimt => total_steps / (config.scheduler.r + 1),
    };
    let ramp_horizon = if by_epoch { (config.epochs - 1).max(1) } else { planned_alpha_steps.saturating_sub(1) };

    let mut train_rng = derive_rng(config.seed, 2);
    let mut valid_batches = BatchCycler::new(valid.len(), derive_rng(config.seed, 3));
    let mut history = SearchHistory::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step: u64 = 0;
    let mut alpha_index: usize = 0;

    for epoch in 0..config.epochs {
        w_opt.anneal_to(epoch)?;
        a_opt.anneal_to(epoch)?;
        order.shuffle(&mut train_rng);
        for chunk in order.chunks(batch) {
            let (x, y) = train.batch(chunk);
            let ws = w_step(&mut net, &alpha, &x, &y, &mut w_opt)?;
            let d = scheduler.observe(ws.trace);
            let mut rec = StepRecord {
                step,
                epoch,
                trace: d.trace,
                fimt: d.ewma,
                threshold: d.threshold,
                fired: d.fired,
                train_loss: ws.loss,
                c: None,
                val_loss: None,
                penalty: None,
                distance: None,
                act_min: 0.0,
                act_max: 0.0,
                active: 0,
            };
            if d.fired {
                let c = ramp_c(if by_epoch { epoch } else { alpha_index }, ramp_horizon);
                let (vx, vy) = valid.batch(&valid_batches.next_batch(config.batch_size));
                let r = alpha_step(&net, &mut alpha, &vx, &vy, &reg, c, &mut a_opt)?;
                alpha_index += 1;
                if let Regularizer::Admm(st) = &mut reg {
                    if alpha_index.is_multiple_of(st.config.period) {
                        admm_update_zu(st, &alpha.activate())?;
                    }
                }
                rec.c = Some(c);
                rec.val_loss = Some(r.val_loss);
                rec.penalty = Some(r.penalty);
                rec.distance = Some(r.distance);
            }
            let act = alpha.activate();
            let flat = act.cells.iter().flatten();
            rec.act_min = flat.clone().cloned().fold(f64::INFINITY, f64::min);
            rec.act_max = flat.cloned().fold(f64::NEG_INFINITY, f64::max);
            rec.active = alpha.active.iter().flatten().filter(|&&on| on).count();
            history.steps.push(rec);
            step += 1;
        }
        history.snapshots.push(snapshot(epoch, &alpha));
        if let Some(every) = config.checkpoint_every {
            if epoch % every == 0 {
                history.checkpoints.push((epoch, project_to_s(&alpha.activate())?));
            }
        }
    }

    let architecture = project_to_s(&alpha.activate())?;
    if config.checkpoint_every.is_some() && history.checkpoints.last().map(|c| c.0) != Some(config.epochs - 1) {
        history.checkpoints.push((config.epochs - 1, architecture.clone()));
    }
    Ok(SearchOutcome {
        architecture,
        alpha,
        net,
        history,
        train_size: train.len(),
        valid_size: valid.len(),
        w_steps: scheduler.state.w_steps,
        alpha_steps: scheduler.state.alpha_steps,
    })
}

/// Long search that records a projected architecture every `every` epochs.
pub fn extended_run(config: &SearchConfig, data: &Dataset, every: usize) -> Result<SearchOutcome> {
    let mut c = config.clone();
    c.checkpoint_every = Some(every);
    run_search(&c, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_a_partition_with_expected_sizes() {
        let (t, v) = split_indices(1100, 10, 5).unwrap();
        assert_eq!((t.len(), v.len()), (1000, 100));
        let mut all: Vec<usize> = t.iter().chain(&v).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..1100).collect::<Vec<_>>());
        let (t, v) = split_indices(1000, 1, 5).unwrap();
        assert_eq!((t.len(), v.len()), (500, 500));
        assert!(split_indices(3, 10, 5).is_err());
    }

    #[test]
    fn cycler_covers_everything_each_pass() {
        let mut c = BatchCycler::new(10, derive_rng(1, 3));
        let mut seen: Vec<usize> = (0..2).flat_map(|_| c.next_batch(5)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(c.next_batch(50).len(), 10);
    }

    #[test]
    fn crb_disables_alpha_decay_and_annealing() {
        let mut c = SearchConfig::default();
        c.space.activation = ActivationMode::Crb;
        c.space.operators.retain(|o| *o != crate::space::OpKind::None);
        let a = c.effective_alpha_opt();
        assert_eq!(a.weight_decay, 0.0);
        assert!(!a.cosine);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = SearchConfig { epochs: 0, ..Default::default() };
        assert!(c.validate().is_err());
        c.epochs = 1;
        c.regularizer = RegularizerConfig::Admm(AdmmConfig { period: 0, ..Default::default() });
        assert!(c.validate().is_err());
        c.regularizer = RegularizerConfig::Proximity(ProximityConfig { rho: -1.0, ..Default::default() });
        assert!(c.validate().is_err());
    }
}
