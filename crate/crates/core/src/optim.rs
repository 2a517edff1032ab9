//! Rectified Adam.
//!
//! `beta0` / `beta1` are the decay rates of the first and second moment estimates
//! (conventionally written β₁ / β₂). No learning-rate decay or warm-up is applied.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RAdamConfig {
    pub lr: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub eps: f64,
}

impl Default for RAdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta0: 0.5,
            beta1: 0.9,
            eps: 1e-8,
        }
    }
}

impl RAdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(param(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !unit(self.beta0) || !unit(self.beta1) {
            return Err(param(format!(
                "betas must lie in (0, 1), got ({}, {})",
                self.beta0, self.beta1
            )));
        }
        if !(self.eps >= 0.0) {
            return Err(param("eps must be non-negative"));
        }
        Ok(())
    }

    /// Length of the approximated simple moving average at infinity.
    pub fn rho_inf(&self) -> f64 {
        2.0 / (1.0 - self.beta1) - 1.0
    }

    /// `ρ_k = ρ_∞ − 2 k β1^k / (1 − β1^k)`.
    pub fn rho(&self, k: u64) -> f64 {
        let bk = self.beta1.powi(k as i32);
        self.rho_inf() - 2.0 * k as f64 * bk / (1.0 - bk)
    }
}

/// Optimizer state for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct RAdamState {
    config: RAdamConfig,
    step: u64,
    m: DVector<f64>,
    v: DVector<f64>,
}

/// Which update branch a step took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RAdamBranch {
    Momentum,
    Rectified,
}

impl RAdamState {
    pub fn new(config: RAdamConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            m: DVector::zeros(dim),
            v: DVector::zeros(dim),
        })
    }

    pub fn config(&self) -> &RAdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &DVector<f64> {
        &self.m
    }

    pub fn second_moment(&self) -> &DVector<f64> {
        &self.v
    }

    /// Applies one update in place.
    pub fn step(&mut self, param: &mut DVector<f64>, grad: &DVector<f64>) -> Result<RAdamBranch> {
        if param.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(crate::error::param(format!(
                "dimension mismatch: state {}, param {}, grad {}",
                self.m.len(),
                param.len(),
                grad.len()
            )));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        let RAdamConfig {
            lr,
            beta0,
            beta1,
            eps,
        } = self.config;
        self.step += 1;
        let k = self.step;
        self.m = &self.m * beta0 + grad * (1.0 - beta0);
        self.v = &self.v * beta1 + grad.component_mul(grad) * (1.0 - beta1);

        let bc0 = 1.0 - beta0.powi(k as i32);
        let bc1 = 1.0 - beta1.powi(k as i32);
        let m_hat = &self.m / bc0;
        let rho_inf = self.config.rho_inf();
        let rho = self.config.rho(k);
        if rho > 4.0 {
            let rect = ((rho - 4.0) * (rho - 2.0) * rho_inf
                / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho))
                .sqrt();
            let denom = self.v.map(|v| (v / bc1).sqrt() + eps);
            *param -= m_hat.component_div(&denom) * (lr * rect);
            Ok(RAdamBranch::Rectified)
        } else {
            *param -= m_hat * lr;
            Ok(RAdamBranch::Momentum)
        }
    }
}

/// Functional form of [`RAdamState::step`].
pub fn radam_step(
    state: &RAdamState,
    grad: &DVector<f64>,
    param: &DVector<f64>,
) -> Result<(DVector<f64>, RAdamState)> {
    let mut next = state.clone();
    let mut p = param.clone();
    next.step(&mut p, grad)?;
    Ok((p, next))
}
