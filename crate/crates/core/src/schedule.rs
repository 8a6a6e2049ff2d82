//! Architecture-update scheduling.
//!
//! The dynamic schedule smooths the per-minibatch trace of the empirical
//! Fisher information (the squared norm of the weight gradient) with an
//! exponentially weighted moving average, and fires an architecture step
//! whenever the average sits below an adaptive threshold `h`. Each fire
//! multiplies `h` by `h_d = h_i^(−r)`, each non-fire by `h_i`, so under a
//! stationary average one fire is balanced by exactly `r` non-fires.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// One architecture step after every weight step.
    Alternating,
    /// One architecture step after every `k` weight steps.
    Constant(usize),
    DynamicFimt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub kind: ScheduleKind,
    /// Initial threshold.
    pub h0: f64,
    /// Threshold increasing factor.
    pub h_inc: f64,
    /// Expected weight-to-architecture step ratio.
    pub r: usize,
    /// Moving-average weight on the newest trace.
    pub lambda: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { kind: ScheduleKind::DynamicFimt, h0: 1.0, h_inc: 1.05, r: 10, lambda: 0.2 }
    }
}

impl SchedulerConfig {
    pub fn alternating() -> Self {
        Self { kind: ScheduleKind::Alternating, ..Default::default() }
    }

    pub fn constant(k: usize) -> Self {
        Self { kind: ScheduleKind::Constant(k), r: k, ..Default::default() }
    }

    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.h_inc >= 1.0) {
            return bad("h_inc must be >= 1");
        }
        if self.r < 1 {
            return bad("r must be >= 1");
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("lambda must lie in (0, 1]");
        }
        if !(self.h0 > 0.0) {
            return bad("h0 must be positive");
        }
        if let ScheduleKind::Constant(0) = self.kind {
            return bad("constant schedule needs k >= 1");
        }
        Ok(())
    }

    /// Weight steps per architecture step that the data split is sized for.
    pub fn split_ratio(&self) -> usize {
        match self.kind {
            ScheduleKind::Alternating => 1,
            ScheduleKind::Constant(k) => k,
            ScheduleKind::DynamicFimt => self.r,
        }
    }

    /// `exp(−r · ln h_i)`.
    pub fn h_dec(&self) -> f64 {
        (-(self.r as f64) * self.h_inc.ln()).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FimtState {
    /// Smoothed trace; `None` until the first observation.
    pub ewma: Option<f64>,
    pub threshold: f64,
    pub h_inc: f64,
    pub h_dec: f64,
    /// Minibatches observed.
    pub n: u64,
    pub w_steps: u64,
    pub alpha_steps: u64,
}

impl FimtState {
    pub fn new(config: &SchedulerConfig) -> Self {
        Self {
            ewma: None,
            threshold: config.h0,
            h_inc: config.h_inc,
            h_dec: config.h_dec(),
            n: 0,
            w_steps: 0,
            alpha_steps: 0,
        }
    }
}

/// Trace of `G Gᵀ`, i.e. `Σ g²`.
pub fn fimt_trace(grads: &[f64]) -> Result<f64> {
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("fimt_trace"));
    }
    Ok(grads.iter().map(|g| g * g).sum())
}

/// `F̄ₙ = λ·trace + (1 − λ)·F̄ₙ₋₁`; the first observation initializes the average.
pub fn ewma_update(state: &mut FimtState, trace: f64, lambda: f64) -> f64 {
    let next = match state.ewma {
        None => trace,
        Some(prev) => lambda * trace + (1.0 - lambda) * prev,
    };
    state.ewma = Some(next);
    state.n += 1;
    next
}

/// Fires when `F̄ₙ < h`, then shrinks `h` by `h_d`; otherwise grows it by `h_i`.
pub fn should_update_alpha(state: &mut FimtState) -> bool {
    let f = state.ewma.unwrap_or(f64::INFINITY);
    let fire = f < state.threshold;
    if fire {
        state.threshold *= state.h_dec;
    } else {
        state.threshold *= state.h_inc;
    }
    fire
}

/// Decides whether step `step` (0-based) is followed by an architecture step,
/// and updates the step counters.
pub fn schedule_decision(config: &SchedulerConfig, state: &mut FimtState, step: u64) -> bool {
    let fire = match config.kind {
        ScheduleKind::Alternating => true,
        ScheduleKind::Constant(k) => step % k as u64 == k as u64 - 1,
        ScheduleKind::DynamicFimt => should_update_alpha(state),
    };
    state.w_steps += 1;
    if fire {
        state.alpha_steps += 1;
    }
    fire
}

/// One logged scheduling event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub trace: f64,
    pub ewma: f64,
    /// Threshold the decision was taken against.
    pub threshold: f64,
    pub fired: bool,
}

/// Scheduler config and state bundled for a training loop.
#[derive(Debug, Clone)]
pub struct Scheduler {
    pub config: SchedulerConfig,
    pub state: FimtState,
}

impl Scheduler {
    pub fn new(config: SchedulerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { state: FimtState::new(&config), config })
    }

    /// Feeds the gradient trace of the weight step just taken.
    pub fn observe(&mut self, trace: f64) -> Decision {
        let step = self.state.n;
        let ewma = ewma_update(&mut self.state, trace, self.config.lambda);
        let threshold = self.state.threshold;
        let fired = schedule_decision(&self.config, &mut self.state, step);
        Decision { trace, ewma, threshold, fired }
    }
}
