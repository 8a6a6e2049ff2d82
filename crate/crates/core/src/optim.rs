//! SGD with momentum, Adam, and cosine learning-rate annealing.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub horizon: usize,
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/T))`.
pub fn cosine_lr(step: usize, schedule: &CosineSchedule) -> Result<f64> {
    if step > schedule.horizon {
        return Err(Error::StepPastHorizon { step, horizon: schedule.horizon });
    }
    if schedule.horizon == 0 {
        return Ok(schedule.lr_max);
    }
    let frac = step as f64 / schedule.horizon as f64;
    Ok(schedule.lr_min
        + 0.5 * (schedule.lr_max - schedule.lr_min) * (1.0 + (std::f64::consts::PI * frac).cos()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    SgdMomentum { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub cosine: Option<CosineSchedule>,
    /// Global L2 bound on the gradient, applied before each update.
    pub grad_clip: Option<f64>,
    step: u64,
    /// Momentum buffer (SGD) or first moment (Adam), one per parameter.
    first: Vec<Vec<f64>>,
    /// Second moment (Adam only).
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn sgd(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self::new(OptimizerKind::SgdMomentum { momentum }, lr, weight_decay)
    }

    pub fn adam(lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self::new(OptimizerKind::Adam { beta1, beta2, eps }, lr, weight_decay)
    }

    fn new(kind: OptimizerKind, lr: f64, weight_decay: f64) -> Self {
        Self { kind, lr, weight_decay, cosine: None, grad_clip: None, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn with_cosine(mut self, schedule: CosineSchedule) -> Self {
        self.lr = schedule.lr_max;
        self.cosine = Some(schedule);
        self
    }

    pub fn with_grad_clip(mut self, max_norm: Option<f64>) -> Self {
        self.grad_clip = max_norm;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Sets `lr` from the cosine schedule, if one is attached.
    pub fn anneal_to(&mut self, step: usize) -> Result<()> {
        if let Some(s) = &self.cosine {
            self.lr = cosine_lr(step, s)?;
        }
        Ok(())
    }

    /// Applies one update using each parameter's accumulated `grad` (absent = zero).
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if let Some(max) = self.grad_clip {
            clip_grad_norm(params, max);
        }
        match self.kind {
            OptimizerKind::SgdMomentum { .. } => sgd_momentum_step(params, self),
            OptimizerKind::Adam { .. } => adam_step(params, self),
        }
    }

    fn ensure_buffers(&mut self, params: &[&mut Tensor], second: bool) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.len()]).collect();
            if second {
                self.second = params.iter().map(|p| vec![0.0; p.len()]).collect();
            }
        }
        if self.first.len() != params.len()
            || self.first.iter().zip(params.iter()).any(|(b, p)| b.len() != p.len())
        {
            return Err(Error::ShapeMismatch {
                op: "optimizer",
                detail: "parameter list does not match optimizer buffers".into(),
            });
        }
        Ok(())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(params: &mut [&mut Tensor], max_norm: f64) -> f64 {
    let norm = params.iter().filter_map(|p| p.grad.as_ref()).flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in params.iter_mut().filter_map(|p| p.grad.as_mut()) {
            g.iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

fn effective_grad(p: &Tensor, i: usize, weight_decay: f64) -> f64 {
    let g = p.grad.as_ref().map_or(0.0, |g| g[i]);
    if weight_decay != 0.0 {
        g + weight_decay * p.data()[i]
    } else {
        g
    }
}

/// `v ← μv + g; p ← p − γv`, with weight decay folded into `g` first.
pub fn sgd_momentum_step(params: &mut [&mut Tensor], state: &mut OptimizerState) -> Result<()> {
    let OptimizerKind::SgdMomentum { momentum } = state.kind else {
        return Err(Error::InvalidConfig("sgd_momentum_step on a non-SGD optimizer".into()));
    };
    state.ensure_buffers(params, false)?;
    let (lr, wd) = (state.lr, state.weight_decay);
    for (p, buf) in params.iter_mut().zip(state.first.iter_mut()) {
        for (i, b) in buf.iter_mut().enumerate() {
            let g = effective_grad(p, i, wd);
            *b = momentum * *b + g;
            p.data_mut()[i] -= lr * *b;
        }
    }
    state.step += 1;
    Ok(())
}

/// Bias-corrected Adam.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut OptimizerState) -> Result<()> {
    let OptimizerKind::Adam { beta1, beta2, eps } = state.kind else {
        return Err(Error::InvalidConfig("adam_step on a non-Adam optimizer".into()));
    };
    state.ensure_buffers(params, true)?;
    state.step += 1;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
    let (lr, wd) = (state.lr, state.weight_decay);
    for ((p, m), v) in params.iter_mut().zip(state.first.iter_mut()).zip(state.second.iter_mut()) {
        for i in 0..p.len() {
            let g = effective_grad(p, i, wd);
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64, g: f64) -> Tensor {
        let mut t = Tensor::scalar(v).param();
        t.grad = Some(vec![g]);
        t
    }

    #[test]
    fn clipping_bounds_joint_norm() {
        let (mut a, mut b) = (scalar_param(0.0, 3.0), scalar_param(0.0, 4.0));
        assert_eq!(clip_grad_norm(&mut [&mut a, &mut b], 1.0), 5.0);
        assert!((a.grad.as_ref().unwrap()[0] - 0.6).abs() < 1e-15);
        assert!((b.grad.as_ref().unwrap()[0] - 0.8).abs() < 1e-15);
        let mut c = scalar_param(1.0, 0.5);
        let mut s = OptimizerState::sgd(1.0, 0.0, 0.0).with_grad_clip(Some(10.0));
        s.step(&mut [&mut c]).unwrap();
        assert_eq!(c.data()[0], 0.5);
    }

    #[test]
    fn plain_sgd_step() {
        let mut p = scalar_param(1.0, 2.0);
        let mut s = OptimizerState::sgd(0.1, 0.0, 0.0);
        s.step(&mut [&mut p]).unwrap();
        assert!((p.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut p = scalar_param(1.5, 2.0);
        let mut s = OptimizerState::sgd(0.0, 0.9, 0.0);
        s.step(&mut [&mut p]).unwrap();
        s.step(&mut [&mut p]).unwrap();
        assert_eq!(p.data()[0], 1.5);
    }

    #[test]
    fn momentum_two_steps_match_recurrence() {
        let (mu, lr) = (0.9, 0.05);
        let mut p = scalar_param(1.0, 0.4);
        let mut s = OptimizerState::sgd(lr, mu, 0.0);
        s.step(&mut [&mut p]).unwrap();
        p.grad = Some(vec![-0.3]);
        s.step(&mut [&mut p]).unwrap();
        let v1 = 0.4;
        let p1 = 1.0 - lr * v1;
        let v2 = mu * v1 + -0.3;
        let p2 = p1 - lr * v2;
        assert!((p.data()[0] - p2).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut p = Tensor::new(vec![3], vec![0.2, -1.0, 4.0]).unwrap().param();
        p.grad = Some(vec![0.0; 3]);
        let before = p.data().to_vec();
        let mut s = OptimizerState::adam(0.1, 0.5, 0.999, 1e-8, 0.0);
        for _ in 0..5 {
            s.step(&mut [&mut p]).unwrap();
        }
        assert_eq!(p.data(), before.as_slice());
    }

    #[test]
    fn adam_single_step_matches_reference_formula() {
        let (lr, b1, b2, eps, g) = (1e-3, 0.5, 0.999, 1e-8, 0.37);
        let mut p = scalar_param(0.25, g);
        let mut s = OptimizerState::adam(lr, b1, b2, eps, 0.0);
        s.step(&mut [&mut p]).unwrap();
        let m_hat = ((1.0 - b1) * g) / (1.0 - b1);
        let v_hat = ((1.0 - b2) * g * g) / (1.0 - b2);
        let want = 0.25 - lr * m_hat / (v_hat.sqrt() + eps);
        assert!((p.data()[0] - want).abs() < 1e-15);
    }

    #[test]
    fn adam_constant_gradient_step_approaches_lr() {
        let lr = 0.01;
        let mut p = scalar_param(0.0, 3.0);
        let mut s = OptimizerState::adam(lr, 0.5, 0.999, 1e-8, 0.0);
        let mut last = 0.0;
        for _ in 0..50 {
            let before = p.data()[0];
            s.step(&mut [&mut p]).unwrap();
            last = before - p.data()[0];
        }
        assert!((last - lr).abs() < 1e-8, "step {last}");
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let s = CosineSchedule { lr_max: 0.1, lr_min: 0.001, horizon: 10 };
        assert!((cosine_lr(0, &s).unwrap() - 0.1).abs() < 1e-15);
        assert!((cosine_lr(10, &s).unwrap() - 0.001).abs() < 1e-15);
        assert!((cosine_lr(5, &s).unwrap() - 0.0505).abs() < 1e-15);
        assert!(matches!(cosine_lr(11, &s), Err(Error::StepPastHorizon { .. })));
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let mut p = scalar_param(0.0, 1.0);
        let mut s = OptimizerState::sgd(0.1, 0.0, 0.0);
        assert!(adam_step(&mut [&mut p], &mut s).is_err());
    }
}
