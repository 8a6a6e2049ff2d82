//! Discretization-aware regularizers on the architecture weights.
//!
//! Both terms act on activated weights `a`; their gradients are pulled back
//! to raw weights through the activation. The projection onto the discrete
//! set is piecewise constant, so it is held fixed when differentiating.

use crate::discretize::{project_to_s, project_values, squared_distance, DiscreteArchitecture};
use crate::error::Result;
use crate::space::{ActivatedAlpha, AlphaStore};
use serde::{Deserialize, Serialize};

/// Linear ramp `index / horizon`, clamped to 1.
pub fn ramp_c(index: usize, horizon: usize) -> f64 {
    if horizon == 0 {
        return 1.0;
    }
    if index > horizon {
        log::warn!("ramp index {index} past horizon {horizon}; clamping to 1");
        return 1.0;
    }
    index as f64 / horizon as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProximityConfig {
    pub rho: f64,
    /// Use `(cρ/2)‖d‖²` instead of `(cρ/2)‖d‖`.
    pub squared: bool,
    /// Below this norm the gradient of `‖d‖` is taken as zero.
    pub kink_epsilon: f64,
}

impl Default for ProximityConfig {
    fn default() -> Self {
        Self { rho: 0.1, squared: false, kink_epsilon: 1e-12 }
    }
}

fn residual(activated: &ActivatedAlpha) -> Result<Vec<Vec<f64>>> {
    let proj = project_to_s(activated)?;
    Ok(activated
        .cells
        .iter()
        .zip(&proj.cells)
        .map(|(a, s)| a.iter().zip(s).map(|(x, y)| x - y).collect())
        .collect())
}

/// `(c·ρ/2)·‖a − Π(a)‖₂` (or its squared form).
pub fn proximity_penalty(activated: &ActivatedAlpha, c: f64, config: &ProximityConfig) -> Result<f64> {
    let d = residual(activated)?;
    let sq: f64 = d.iter().flatten().map(|v| v * v).sum();
    let norm_term = if config.squared { sq } else { sq.sqrt() };
    Ok(0.5 * c * config.rho * norm_term)
}

/// Gradient of [`proximity_penalty`] with respect to the raw weights.
pub fn proximity_grad(store: &AlphaStore, c: f64, config: &ProximityConfig) -> Result<Vec<Vec<f64>>> {
    let activated = store.activate();
    let d = residual(&activated)?;
    let norm = d.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let scale = if config.squared {
        c * config.rho
    } else if norm < config.kink_epsilon {
        0.0
    } else {
        0.5 * c * config.rho / norm
    };
    let grad_act: Vec<Vec<f64>> = d.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
    Ok(store.activation_vjp(&grad_act))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub rho: f64,
    /// Discount on the accumulated residual `u`.
    pub decay: f64,
    /// Architecture steps between `z`/`u` updates.
    pub period: usize,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self { rho: 0.1, decay: 0.8, period: 10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub config: AdmmConfig,
    /// Always a member of the discrete set.
    pub z: DiscreteArchitecture,
    pub u: Vec<Vec<f64>>,
    pub updates: usize,
}

impl AdmmState {
    /// `z ← Π(a₀)`, `u ← 0`.
    pub fn init(activated: &ActivatedAlpha, config: AdmmConfig) -> Result<Self> {
        let z = project_to_s(activated)?;
        let u = activated.cells.iter().map(|c| vec![0.0; c.len()]).collect();
        Ok(Self { config, z, u, updates: 0 })
    }
}

/// `(ρ/2)‖a − z + u‖²` and its gradient with respect to raw weights.
pub fn admm_penalty(store: &AlphaStore, state: &AdmmState) -> Result<(f64, Vec<Vec<f64>>)> {
    let a = store.activate();
    let rho = state.config.rho;
    let mut value = 0.0;
    let grad_act: Vec<Vec<f64>> = a
        .cells
        .iter()
        .zip(&state.z.cells)
        .zip(&state.u)
        .map(|((a, z), u)| {
            a.iter()
                .zip(z)
                .zip(u)
                .map(|((a, z), u)| {
                    let r = a - z + u;
                    value += r * r;
                    rho * r
                })
                .collect()
        })
        .collect();
    Ok((0.5 * rho * value, store.activation_vjp(&grad_act)))
}

/// `z ← Π(a + u)`, then `u ← λ_u·u + a − z`.
pub fn admm_update_zu(state: &mut AdmmState, activated: &ActivatedAlpha) -> Result<()> {
    let shifted: Vec<Vec<f64>> = activated
        .cells
        .iter()
        .zip(&state.u)
        .map(|(a, u)| a.iter().zip(u).map(|(x, y)| x + y).collect())
        .collect();
    let z = project_values(&activated.layout, &shifted)?;
    let decay = state.config.decay;
    for ((u, a), zc) in state.u.iter_mut().zip(&activated.cells).zip(&z.cells) {
        for ((u, a), z) in u.iter_mut().zip(a).zip(zc) {
            *u = decay * *u + a - z;
        }
    }
    state.z = z;
    state.updates += 1;
    Ok(())
}

/// `‖a − z‖₂`, the primal residual of the ADMM splitting.
pub fn admm_residual(activated: &ActivatedAlpha, state: &AdmmState) -> f64 {
    squared_distance(&activated.cells, &state.z.cells).sqrt()
}
