//! Closed-form conditional noise predictors standing in for a trained backbone.
//!
//! The toy data law conditioned on a semantic code `z` is `N(z, s² I)`. Its diffused
//! marginal at time `t` is `N(α_t z, (α_t² s² + σ_t²) I)`, so the exact noise prediction
//! `ε = −σ_t ∇ log p_t(x_t)` is available in closed form.

use std::cell::Cell;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{domain, param, Error, Result};
use crate::schedule::NoiseSchedule;

/// A point in data/noise space: `x_t`, `x_0`, or a noise prediction.
pub type StatePoint = DVector<f64>;

/// Conditioning code produced by the semantic encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticCode(pub DVector<f64>);

impl SemanticCode {
    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Linear interpolation `(1 − w) self + w other`.
    pub fn lerp(&self, other: &SemanticCode, w: f64) -> SemanticCode {
        SemanticCode(&self.0 * (1.0 - w) + &other.0 * w)
    }
}

/// Toy semantic encoder: the identity map.
pub fn encode_semantic(x0: &StatePoint) -> SemanticCode {
    SemanticCode(x0.clone())
}

/// A conditional noise predictor `ε(x_t, z, t)`.
pub trait EpsilonModel: Sync {
    fn dim(&self) -> usize;

    fn predict(
        &self,
        x_t: &StatePoint,
        z: &SemanticCode,
        t: f64,
        schedule: &NoiseSchedule,
    ) -> Result<StatePoint>;
}

/// Exact noise predictor for `x_0 | z ~ N(z, s² I)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianIdentityModel {
    data_std: f64,
    dim: usize,
}

pub const DEFAULT_DATA_STD: f64 = 0.05;
pub const DEFAULT_DIM: usize = 8;

impl Default for GaussianIdentityModel {
    fn default() -> Self {
        Self {
            data_std: DEFAULT_DATA_STD,
            dim: DEFAULT_DIM,
        }
    }
}

impl GaussianIdentityModel {
    pub fn new(data_std: f64, dim: usize) -> Result<Self> {
        if !(data_std.is_finite() && data_std >= 0.0) {
            return Err(param(format!(
                "data_std must be finite and >= 0, got {data_std}"
            )));
        }
        if dim == 0 {
            return Err(param("dimension must be positive"));
        }
        Ok(Self { data_std, dim })
    }

    pub fn data_std(&self) -> f64 {
        self.data_std
    }

    /// `ε = σ_t (x_t − α_t z) / (α_t² s² + σ_t²)`.
    pub fn analytic_epsilon(
        &self,
        x_t: &StatePoint,
        z: &SemanticCode,
        t: f64,
        schedule: &NoiseSchedule,
    ) -> Result<StatePoint> {
        schedule.check_time(t)?;
        if x_t.len() != self.dim || z.dim() != self.dim {
            return Err(param(format!(
                "dimension mismatch: model {}, x_t {}, z {}",
                self.dim,
                x_t.len(),
                z.dim()
            )));
        }
        let (alpha, sigma) = schedule.alpha_sigma(t);
        let denom = alpha * alpha * self.data_std * self.data_std + sigma * sigma;
        if denom <= 0.0 {
            // on the mean the noise is zero in the limit; anywhere else it is undefined
            if x_t
                .iter()
                .zip(z.as_vector().iter())
                .all(|(x, z)| *x == alpha * z)
            {
                return Ok(StatePoint::zeros(self.dim));
            }
            return Err(domain(format!(
                "degenerate marginal variance at t = {t} with data_std = {}",
                self.data_std
            )));
        }
        Ok((x_t - z.as_vector() * alpha) * (sigma / denom))
    }

    /// Posterior mean `E[x_0 | x_t] = (α_t s² x_t + σ_t² z) / (α_t² s² + σ_t²)`.
    pub fn posterior_mean(
        &self,
        x_t: &StatePoint,
        z: &SemanticCode,
        t: f64,
        schedule: &NoiseSchedule,
    ) -> StatePoint {
        let (alpha, sigma) = schedule.alpha_sigma(t);
        let s2 = self.data_std * self.data_std;
        let denom = alpha * alpha * s2 + sigma * sigma;
        (x_t * (alpha * s2) + z.as_vector() * (sigma * sigma)) / denom
    }

    /// Exact probability-flow ODE solution from `(t_from, x)` to `t_to`.
    ///
    /// `(x_t − α_t z) / sqrt(α_t² s² + σ_t²)` is conserved along the flow.
    pub fn exact_flow(
        &self,
        x: &StatePoint,
        z: &SemanticCode,
        t_from: f64,
        t_to: f64,
        schedule: &NoiseSchedule,
    ) -> StatePoint {
        let s2 = self.data_std * self.data_std;
        let spread = |t: f64| {
            let (a, s) = schedule.alpha_sigma(t);
            (a * a * s2 + s * s).sqrt()
        };
        let a_from = schedule.alpha(t_from);
        let a_to = schedule.alpha(t_to);
        z.as_vector() * a_to + (x - z.as_vector() * a_from) * (spread(t_to) / spread(t_from))
    }
}

impl EpsilonModel for GaussianIdentityModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(
        &self,
        x_t: &StatePoint,
        z: &SemanticCode,
        t: f64,
        schedule: &NoiseSchedule,
    ) -> Result<StatePoint> {
        self.analytic_epsilon(x_t, z, t, schedule)
    }
}

/// Per-run wrapper that counts network function evaluations.
///
/// A batched call over several `(x_t, z)` inputs at one time counts as a single NFE.
pub struct Evaluator<'m, M: ?Sized> {
    model: &'m M,
    schedule: NoiseSchedule,
    nfe: Cell<u64>,
}

impl<'m, M: EpsilonModel + ?Sized> Evaluator<'m, M> {
    pub fn new(model: &'m M, schedule: NoiseSchedule) -> Self {
        Self {
            model,
            schedule,
            nfe: Cell::new(0),
        }
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn model(&self) -> &M {
        self.model
    }

    pub fn nfe(&self) -> u64 {
        self.nfe.get()
    }

    pub fn epsilon(&self, x_t: &StatePoint, z: &SemanticCode, t: f64) -> Result<StatePoint> {
        let eps = self.model.predict(x_t, z, t, &self.schedule)?;
        self.nfe.set(self.nfe.get() + 1);
        Ok(eps)
    }

    pub fn epsilon_batched(
        &self,
        inputs: &[(&StatePoint, &SemanticCode)],
        t: f64,
    ) -> Result<Vec<StatePoint>> {
        if inputs.is_empty() {
            return Err(Error::Precondition("empty batch".into()));
        }
        let out = inputs
            .iter()
            .map(|(x, z)| self.model.predict(x, z, t, &self.schedule))
            .collect::<Result<Vec<_>>>()?;
        self.nfe.set(self.nfe.get() + 1);
        Ok(out)
    }
}
