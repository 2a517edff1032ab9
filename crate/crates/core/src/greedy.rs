//! Greedy guided sampling.
//!
//! Every variant scores the clean-sample estimate `(x_t − σ_t ε)/α_t` of a candidate noise
//! with the heuristic at each sampling step and steps the solver with the best candidate:
//!
//! * [`greedy_dim_s`] searches a discrete set of blends between the twin noise predictions
//!   conditioned on each bona fide code;
//! * [`greedy_w_continuous`] searches the blend over `[0, 1]` by projected gradient descent;
//! * [`greedy_dim_star`] optimizes the noise prediction itself with RAdam, keeping the best
//!   iterate. Gradients never flow through the noise model.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::heuristics::{heuristic_grad_eps, BoundHeuristic, Heuristic};
use crate::morph::{
    interpolate, interpolate_dgamma, uniform_blends, BonaFidePair, Interpolation, MorphPipeline,
    MorphResult, StepRecord, Variant,
};
use crate::optim::{RAdamConfig, RAdamState};
use crate::schedule::{NoiseSchedule, TimeGrid};
use crate::solvers::{sample_with, x0_from_eps};
use crate::toymodel::{EpsilonModel, StatePoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    Discrete,
    ContinuousW,
    #[default]
    EpsilonOpt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GreedyConfig {
    /// Inner optimization iterations per step.
    pub n_opt: usize,
    pub lr: f64,
    /// First-moment decay.
    pub beta0: f64,
    /// Second-moment decay.
    pub beta1: f64,
    /// Optimize only every `opt_stride`-th step.
    pub opt_stride: usize,
    /// Fraction of the sampling grid kept; sampling starts below `T` when `< 1`.
    pub noise_level: f64,
    pub blend_count: usize,
    pub search_mode: SearchMode,
    pub interpolation: Interpolation,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            n_opt: 50,
            lr: 0.01,
            beta0: 0.5,
            beta1: 0.9,
            opt_stride: 1,
            noise_level: 1.0,
            blend_count: 21,
            search_mode: SearchMode::EpsilonOpt,
            interpolation: Interpolation::Slerp,
        }
    }
}

impl GreedyConfig {
    pub fn discrete() -> Self {
        Self {
            search_mode: SearchMode::Discrete,
            ..Self::default()
        }
    }

    pub fn continuous_w() -> Self {
        Self {
            search_mode: SearchMode::ContinuousW,
            ..Self::default()
        }
    }

    pub fn radam(&self) -> RAdamConfig {
        RAdamConfig {
            lr: self.lr,
            beta0: self.beta0,
            beta1: self.beta1,
            ..RAdamConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.opt_stride == 0 {
            return Err(param("opt_stride must be >= 1"));
        }
        if !(self.noise_level > 0.0 && self.noise_level <= 1.0) {
            return Err(param(format!(
                "noise_level must be in (0, 1], got {}",
                self.noise_level
            )));
        }
        if self.blend_count == 0 {
            return Err(param("blend_count must be >= 1"));
        }
        self.radam().validate()
    }

    fn expect_mode(&self, mode: SearchMode) -> Result<()> {
        self.validate()?;
        if self.search_mode != mode {
            return Err(param(format!(
                "search_mode {:?} does not match the requested {:?} search",
                self.search_mode, mode
            )));
        }
        Ok(())
    }
}

fn greedy_grid<M: EpsilonModel + ?Sized>(
    pipe: &MorphPipeline<'_, M>,
    cfg: &GreedyConfig,
) -> Result<TimeGrid> {
    pipe.sampling_grid()?.truncate_noise_level(cfg.noise_level)
}

/// Outcome of scoring every blend candidate at one step.
#[derive(Debug, Clone)]
pub struct BlendChoice {
    pub index: usize,
    pub blend: f64,
    pub eps: StatePoint,
    pub heuristic: f64,
    pub scores: Vec<f64>,
}

/// Scores `slerp(ε_a, ε_b; w)` for each blend and returns the argmin (lowest index on ties).
#[allow(clippy::too_many_arguments)]
pub fn search_blend_step(
    x_t: &StatePoint,
    eps_a: &StatePoint,
    eps_b: &StatePoint,
    t: f64,
    schedule: &NoiseSchedule,
    bound: &BoundHeuristic<'_>,
    blends: &[f64],
    interpolation: Interpolation,
) -> Result<BlendChoice> {
    let mut best: Option<BlendChoice> = None;
    let mut scores = Vec::with_capacity(blends.len());
    for (index, &w) in blends.iter().enumerate() {
        let eps = interpolate(eps_a, eps_b, w, interpolation)?;
        let h = bound.eval(&x0_from_eps(x_t, &eps, t, schedule)?)?;
        scores.push(h);
        if best.as_ref().is_none_or(|b| h < b.heuristic) {
            best = Some(BlendChoice {
                index,
                blend: w,
                eps,
                heuristic: h,
                scores: Vec::new(),
            });
        }
    }
    let mut best = best.ok_or_else(|| param("blend set must be non-empty"))?;
    best.scores = scores;
    Ok(best)
}

/// Greedy-DiM-S: discrete blend search on the twin noise predictions at every step.
pub fn greedy_dim_s<M: EpsilonModel + ?Sized>(
    pipe: &MorphPipeline<'_, M>,
    pair: &BonaFidePair,
    heuristic: &Heuristic,
    cfg: &GreedyConfig,
) -> Result<MorphResult> {
    cfg.expect_mode(SearchMode::Discrete)?;
    let blends = uniform_blends(cfg.blend_count)?;
    let bound = heuristic.bind(&pair.x0_a, &pair.x0_b)?;
    let ev = pipe.evaluator();
    let grid = greedy_grid(pipe, cfg)?;
    let enc = pipe.encode_pair(&ev, pair, grid.start())?;
    let x_start = pipe.initial_state(&enc, 0.5)?;
    let sched = pipe.schedule;
    let before = ev.nfe();
    let mut records = Vec::with_capacity(grid.steps());
    let x0_ab = sample_with(&x_start, &grid, pipe.sampler.solver, &sched, |_, t, x| {
        let twins = ev.epsilon_batched(&[(x, &enc.z_a), (x, &enc.z_b)], t)?;
        let choice = search_blend_step(
            x,
            &twins[0],
            &twins[1],
            t,
            &sched,
            &bound,
            &blends,
            cfg.interpolation,
        )?;
        records.push(StepRecord {
            t,
            blend: Some(choice.blend),
            heuristic_initial: None,
            heuristic: Some(choice.heuristic),
        });
        Ok(choice.eps)
    })?;
    Ok(MorphResult {
        x0_ab,
        variant: Variant::GreedyS,
        encode_nfe: enc.encode_nfe,
        sample_nfe: ev.nfe() - before,
        blends: None,
        per_step: records,
        blend: None,
    })
}

/// Trajectory of a sampler that uses a prescribed blend at each step. Returns the states
/// `x_{t_N}, …, x_{t_1}, x_0` in traversal order.
pub fn follow_blend_path<M: EpsilonModel + ?Sized>(
    pipe: &MorphPipeline<'_, M>,
    pair: &BonaFidePair,
    path: &[f64],
    interpolation: Interpolation,
) -> Result<Vec<StatePoint>> {
    let ev = pipe.evaluator();
    let grid = pipe.sampling_grid()?;
    if path.len() != grid.steps() {
        return Err(param(format!(
            "blend path has {} entries for {} steps",
            path.len(),
            grid.steps()
        )));
    }
    let enc = pipe.encode_pair(&ev, pair, grid.start())?;
    let x_start = pipe.initial_state(&enc, 0.5)?;
    let mut states = vec![x_start.clone()];
    let last = sample_with(
        &x_start,
        &grid,
        pipe.sampler.solver,
        &pipe.schedule,
        |i, t, x| {
            if i > 0 {
                states.push(x.clone());
            }
            let twins = ev.epsilon_batched(&[(x, &enc.z_a), (x, &enc.z_b)], t)?;
            interpolate(&twins[0], &twins[1], path[i], interpolation)
        },
    )?;
    states.push(last);
    Ok(states)
}

/// Projected gradient descent on `w ∈ [0, 1]` with Armijo backtracking, started at 0.5.
/// `score(w)` returns the heuristic and its derivative. Returns the best iterate.
pub fn optimize_blend<F>(mut score: F, n_opt: usize) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<(f64, f64)>,
{
    const ARMIJO: f64 = 1e-4;
    let mut w = 0.5;
    let (mut h, mut g) = score(w)?;
    let mut best = (w, h);
    let mut step = 1.0;
    for _ in 0..n_opt {
        if g == 0.0 {
            break;
        }
        let mut accepted = None;
        for _ in 0..60 {
            let w_new = (w - step * g).clamp(0.0, 1.0);
            if w_new == w {
                break;
            }
            let (h_new, g_new) = score(w_new)?;
            if h_new <= h + ARMIJO * g * (w_new - w) {
                accepted = Some((w_new, h_new, g_new));
                break;
            }
            step *= 0.5;
        }
        let Some((w_new, h_new, g_new)) = accepted else {
            break;
        };
        (w, h, g) = (w_new, h_new, g_new);
        step *= 2.0;
        if h < best.1 {
            best = (w, h);
        }
    }
    Ok(best)
}

/// Greedy-DiM-S with the blend searched continuously over `[0, 1]`.
pub fn greedy_w_continuous<M: EpsilonModel + ?Sized>(
    pipe: &MorphPipeline<'_, M>,
    pair: &BonaFidePair,
    heuristic: &Heuristic,
    cfg: &GreedyConfig,
) -> Result<MorphResult> {
    cfg.expect_mode(SearchMode::ContinuousW)?;
    let bound = heuristic.bind(&pair.x0_a, &pair.x0_b)?;
    let ev = pipe.evaluator();
    let grid = greedy_grid(pipe, cfg)?;
    let enc = pipe.encode_pair(&ev, pair, grid.start())?;
    let x_start = pipe.initial_state(&enc, 0.5)?;
    let sched = pipe.schedule;
    let before = ev.nfe();
    let mut records = Vec::with_capacity(grid.steps());
    let x0_ab = sample_with(&x_start, &grid, pipe.sampler.solver, &sched, |_, t, x| {
        let twins = ev.epsilon_batched(&[(x, &enc.z_a), (x, &enc.z_b)], t)?;
        let (ea, eb) = (&twins[0], &twins[1]);
        let (alpha, sigma) = sched.alpha_sigma(t);
        let score = |w: f64| -> Result<(f64, f64)> {
            let eps = interpolate(ea, eb, w, cfg.interpolation)?;
            let (h, gx) = bound.value_and_grad(&x0_from_eps(x, &eps, t, &sched)?)?;
            let deps = interpolate_dgamma(ea, eb, w, cfg.interpolation)?;
            Ok((h, -(sigma / alpha) * gx.dot(&deps)))
        };
        let initial = score(0.5)?.0;
        let (w, h) = optimize_blend(score, cfg.n_opt)?;
        records.push(StepRecord {
            t,
            blend: Some(w),
            heuristic_initial: Some(initial),
            heuristic: Some(h),
        });
        interpolate(ea, eb, w, cfg.interpolation)
    })?;
    Ok(MorphResult {
        x0_ab,
        variant: Variant::GreedyW,
        encode_nfe: enc.encode_nfe,
        sample_nfe: ev.nfe() - before,
        blends: None,
        per_step: records,
        blend: None,
    })
}

/// Result of the per-step noise optimization.
#[derive(Debug, Clone)]
pub struct EpsilonOptimization {
    pub best_eps: StatePoint,
    pub best_heuristic: f64,
    pub initial_heuristic: f64,
    /// Best heuristic so far after each inner iteration.
    pub best_trace: Vec<f64>,
}

/// Inner loop of Greedy-DiM*: RAdam on `ε` minimizing `H(x0(ε))`, with
/// `∇_ε H = −(σ_t/α_t) ∇_x H`. The best iterate (including the starting noise) is kept.
pub fn optimize_epsilon(
    x_t: &StatePoint,
    eps0: &StatePoint,
    t: f64,
    schedule: &NoiseSchedule,
    bound: &BoundHeuristic<'_>,
    radam: RAdamConfig,
    n_opt: usize,
) -> Result<EpsilonOptimization> {
    let initial = bound.eval(&x0_from_eps(x_t, eps0, t, schedule)?)?;
    let mut best_eps = eps0.clone();
    let mut best_h = initial;
    let mut eps = eps0.clone();
    let mut opt = RAdamState::new(radam, eps.len())?;
    let mut trace = Vec::with_capacity(n_opt);
    for _ in 0..n_opt {
        let (h, grad_x) = bound.value_and_grad(&x0_from_eps(x_t, &eps, t, schedule)?)?;
        if h < best_h {
            best_h = h;
            best_eps.copy_from(&eps);
        }
        trace.push(best_h);
        let grad_eps = heuristic_grad_eps(&grad_x, t, schedule)?;
        opt.step(&mut eps, &grad_eps)?;
    }
    Ok(EpsilonOptimization {
        best_eps,
        best_heuristic: best_h,
        initial_heuristic: initial,
        best_trace: trace,
    })
}

/// Greedy-DiM*: per-step optimization of the noise prediction against the heuristic.
pub fn greedy_dim_star<M: EpsilonModel + ?Sized>(
    pipe: &MorphPipeline<'_, M>,
    pair: &BonaFidePair,
    heuristic: &Heuristic,
    cfg: &GreedyConfig,
) -> Result<MorphResult> {
    cfg.expect_mode(SearchMode::EpsilonOpt)?;
    let bound = heuristic.bind(&pair.x0_a, &pair.x0_b)?;
    let ev = pipe.evaluator();
    let grid = greedy_grid(pipe, cfg)?;
    let enc = pipe.encode_pair(&ev, pair, grid.start())?;
    let x_start = pipe.initial_state(&enc, 0.5)?;
    let z_ab = enc.z_a.lerp(&enc.z_b, 0.5);
    let sched = pipe.schedule;
    let radam = cfg.radam();
    let before = ev.nfe();
    let mut records = Vec::with_capacity(grid.steps());
    let x0_ab = sample_with(&x_start, &grid, pipe.sampler.solver, &sched, |i, t, x| {
        let eps = ev.epsilon(x, &z_ab, t)?;
        if cfg.n_opt == 0 || i % cfg.opt_stride != 0 {
            records.push(StepRecord {
                t,
                blend: None,
                heuristic_initial: None,
                heuristic: None,
            });
            return Ok(eps);
        }
        let out = optimize_epsilon(x, &eps, t, &sched, &bound, radam, cfg.n_opt)?;
        records.push(StepRecord {
            t,
            blend: None,
            heuristic_initial: Some(out.initial_heuristic),
            heuristic: Some(out.best_heuristic),
        });
        Ok(out.best_eps)
    })?;
    Ok(MorphResult {
        x0_ab,
        variant: Variant::GreedyStar,
        encode_nfe: enc.encode_nfe,
        sample_nfe: ev.nfe() - before,
        blends: None,
        per_step: records,
        blend: Some(0.5),
    })
}

/// Dispatches on the configured search mode.
pub fn greedy_morph<M: EpsilonModel + ?Sized>(
    pipe: &MorphPipeline<'_, M>,
    pair: &BonaFidePair,
    heuristic: &Heuristic,
    cfg: &GreedyConfig,
) -> Result<MorphResult> {
    match cfg.search_mode {
        SearchMode::Discrete => greedy_dim_s(pipe, pair, heuristic, cfg),
        SearchMode::ContinuousW => greedy_w_continuous(pipe, pair, heuristic, cfg),
        SearchMode::EpsilonOpt => greedy_dim_star(pipe, pair, heuristic, cfg),
    }
}

/// Number of distinct clean outputs over every blend path of a tiny instance.
pub fn count_distinct_blend_paths<M: EpsilonModel + ?Sized>(
    pipe: &MorphPipeline<'_, M>,
    pair: &BonaFidePair,
    blends: &[f64],
    interpolation: Interpolation,
    tolerance: f64,
) -> Result<usize> {
    let steps = pipe.sampler.sample_steps;
    let total = blends
        .len()
        .checked_pow(steps as u32)
        .filter(|&n| n <= 1 << 20)
        .ok_or_else(|| param("blend path enumeration too large"))?;
    let mut outputs: Vec<DVector<f64>> = Vec::with_capacity(total);
    for code in 0..total {
        let mut rest = code;
        let path: Vec<f64> = (0..steps)
            .map(|_| {
                let w = blends[rest % blends.len()];
                rest /= blends.len();
                w
            })
            .collect();
        let states = follow_blend_path(pipe, pair, &path, interpolation)?;
        let x0 = states.last().cloned().expect("non-empty trajectory");
        if outputs.iter().all(|o| (o - &x0).norm() > tolerance) {
            outputs.push(x0);
        }
    }
    Ok(outputs.len())
}
