//! Probability-flow ODE integration: DDIM (both time directions), DPM-Solver++(2M),
//! noise/data conversions and NFE accounting.

use serde::{Deserialize, Serialize};

use crate::error::{domain, param, Error, Result};
use crate::schedule::{Direction, NoiseSchedule, TimeGrid};
use crate::toymodel::{EpsilonModel, Evaluator, SemanticCode, StatePoint};

/// Step rule used when sampling (time running towards 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    Ddim,
    Dpmpp2m,
}

/// Step rule used when encoding (time running towards T).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardKind {
    /// Noise evaluated at the step's start node.
    #[default]
    DiffaeForward,
    /// Noise evaluated at the current state but labelled with the step's end time,
    /// the reversed-index convention of DDIM inversion.
    DdimForward,
}

/// Clean-sample estimate `(x_t − σ_t ε) / α_t`.
pub fn x0_from_eps(
    x_t: &StatePoint,
    eps: &StatePoint,
    t: f64,
    schedule: &NoiseSchedule,
) -> Result<StatePoint> {
    schedule.check_time(t)?;
    let (alpha, sigma) = schedule.alpha_sigma(t);
    if alpha <= 0.0 {
        return Err(domain(format!("alpha vanishes at t = {t}")));
    }
    Ok((x_t - eps * sigma) / alpha)
}

/// Noise implied by a clean-sample estimate, `(x_t − α_t x_0) / σ_t`.
pub fn eps_from_x0(
    x_t: &StatePoint,
    x0: &StatePoint,
    t: f64,
    schedule: &NoiseSchedule,
) -> Result<StatePoint> {
    schedule.check_time(t)?;
    let (alpha, sigma) = schedule.alpha_sigma(t);
    if sigma <= 0.0 {
        return Err(domain(format!(
            "sigma vanishes at t = {t}; no noise to explain"
        )));
    }
    Ok((x_t - x0 * alpha) / sigma)
}

/// DDIM update `x_s = (α_s/α_t)(x_t − σ_t ε) + σ_s ε`, valid in both time directions.
pub fn ddim_step(
    x_t: &StatePoint,
    eps: &StatePoint,
    t: f64,
    s: f64,
    schedule: &NoiseSchedule,
) -> Result<StatePoint> {
    schedule.check_time(t)?;
    schedule.check_time(s)?;
    if t == s {
        return Err(param(format!("degenerate DDIM step t = s = {t}")));
    }
    let (alpha_t, sigma_t) = schedule.alpha_sigma(t);
    let (alpha_s, sigma_s) = schedule.alpha_sigma(s);
    Ok((x_t - eps * sigma_t) * (alpha_s / alpha_t) + eps * sigma_s)
}

/// DPM-Solver++(2M) step from `t` to `s` in data-prediction form.
///
/// `history` holds `(time, x0-prediction)` pairs, oldest first; its last entry must be
/// the prediction at `t`. With `λ = log(α/σ)`, `h = λ_s − λ_t` and the previous node's
/// `h_prev = λ_t − λ_prev`, `r = h_prev / h`:
///
/// ```text
/// D   = (1 + 1/(2r)) x0_t − (1/(2r)) x0_prev
/// x_s = (σ_s/σ_t) x_t − α_s (e^{−h} − 1) D
/// ```
///
/// With a single history entry, or when landing on `σ_s = 0` (where `h` is infinite),
/// the update is first order (`D = x0_t`), which coincides with DDIM.
pub fn dpmpp_2m_step(
    history: &[(f64, StatePoint)],
    x_t: &StatePoint,
    t: f64,
    s: f64,
    schedule: &NoiseSchedule,
) -> Result<StatePoint> {
    let (t_cur, x0_cur) = history
        .last()
        .ok_or_else(|| Error::Precondition("DPM++ 2M needs at least one x0-prediction".into()))?;
    if *t_cur != t {
        return Err(Error::Precondition(format!(
            "latest history entry is at t = {t_cur}, step starts at {t}"
        )));
    }
    schedule.check_time(t)?;
    schedule.check_time(s)?;
    let (alpha_t, sigma_t) = schedule.alpha_sigma(t);
    let (alpha_s, sigma_s) = schedule.alpha_sigma(s);
    if sigma_t <= 0.0 {
        return Err(domain(format!(
            "cannot step out of t = {t} with zero noise"
        )));
    }
    let ratio = sigma_s / sigma_t;
    // α_s (1 − e^{−h}) written without λ so that σ_s = 0 stays finite
    let data_coef = alpha_s - sigma_s * alpha_t / sigma_t;

    if history.len() < 2 || sigma_s <= 0.0 {
        return Ok(x_t * ratio + x0_cur * data_coef);
    }
    let (t_prev, x0_prev) = &history[history.len() - 2];
    let lambda_prev = schedule.lambda(*t_prev);
    let lambda_t = schedule.lambda(t);
    let lambda_s = schedule.lambda(s);
    let h = lambda_s - lambda_t;
    let r = (lambda_t - lambda_prev) / h;
    let c = 0.5 / r;
    let d = x0_cur * (1.0 + c) - x0_prev * c;
    Ok(x_t * ratio + d * data_coef)
}

/// Stateful sampler step that carries the multistep history.
#[derive(Debug, Clone)]
pub struct OdeStepper {
    kind: SolverKind,
    history: Vec<(f64, StatePoint)>,
}

impl OdeStepper {
    pub fn new(kind: SolverKind) -> Self {
        Self {
            kind,
            history: Vec::new(),
        }
    }

    pub fn kind(&self) -> SolverKind {
        self.kind
    }

    pub fn step(
        &mut self,
        x_t: &StatePoint,
        eps: &StatePoint,
        t: f64,
        s: f64,
        schedule: &NoiseSchedule,
    ) -> Result<StatePoint> {
        match self.kind {
            SolverKind::Ddim => ddim_step(x_t, eps, t, s, schedule),
            SolverKind::Dpmpp2m => {
                let x0 = x0_from_eps(x_t, eps, t, schedule)?;
                self.history.push((t, x0));
                if self.history.len() > 2 {
                    self.history.remove(0);
                }
                dpmpp_2m_step(&self.history, x_t, t, s, schedule)
            }
        }
    }
}

fn require_direction(grid: &TimeGrid, want: Direction) -> Result<()> {
    if grid.direction() != want {
        return Err(param(format!("expected a {want:?} grid")));
    }
    Ok(())
}

/// Integrates the PF-ODE along a descending grid, choosing the noise at each step with
/// `choose(step_index, t, x_t)`.
pub fn sample_with<F>(
    x_start: &StatePoint,
    grid: &TimeGrid,
    kind: SolverKind,
    schedule: &NoiseSchedule,
    mut choose: F,
) -> Result<StatePoint>
where
    F: FnMut(usize, f64, &StatePoint) -> Result<StatePoint>,
{
    require_direction(grid, Direction::Descending)?;
    let mut stepper = OdeStepper::new(kind);
    let mut x = x_start.clone();
    for (i, (t, s)) in grid.intervals().enumerate() {
        let eps = choose(i, t, &x)?;
        x = stepper.step(&x, &eps, t, s, schedule)?;
    }
    Ok(x)
}

/// Solves the PF-ODE from the grid's first node down to its last; returns the terminal
/// state and the NFE spent (one per step).
pub fn solve_pf_ode<M: EpsilonModel + ?Sized>(
    ev: &Evaluator<'_, M>,
    x_start: &StatePoint,
    z: &SemanticCode,
    grid: &TimeGrid,
    kind: SolverKind,
) -> Result<(StatePoint, u64)> {
    let before = ev.nfe();
    let x0 = sample_with(x_start, grid, kind, ev.schedule(), |_, t, x| {
        ev.epsilon(x, z, t)
    })?;
    Ok((x0, ev.nfe() - before))
}

/// Time label at which the encoder evaluates the noise for the step `t → s`.
fn forward_eval_time(kind: ForwardKind, t: f64, s: f64) -> f64 {
    match kind {
        ForwardKind::DiffaeForward => t,
        ForwardKind::DdimForward => s,
    }
}

/// Deterministic encoding `x_T = Φ⁺(x_0)` along an ascending grid.
pub fn encode_forward<M: EpsilonModel + ?Sized>(
    ev: &Evaluator<'_, M>,
    x0: &StatePoint,
    z: &SemanticCode,
    grid: &TimeGrid,
    kind: ForwardKind,
) -> Result<(StatePoint, u64)> {
    require_direction(grid, Direction::Ascending)?;
    let before = ev.nfe();
    let sched = *ev.schedule();
    let mut x = x0.clone();
    for (t, s) in grid.intervals() {
        let eps = ev.epsilon(&x, z, forward_eval_time(kind, t, s))?;
        x = ddim_step(&x, &eps, t, s, &sched)?;
    }
    Ok((x, ev.nfe() - before))
}

/// Encodes several samples together; each step is one batched evaluation.
pub fn encode_forward_batched<M: EpsilonModel + ?Sized>(
    ev: &Evaluator<'_, M>,
    inputs: &[(&StatePoint, &SemanticCode)],
    grid: &TimeGrid,
    kind: ForwardKind,
) -> Result<(Vec<StatePoint>, u64)> {
    require_direction(grid, Direction::Ascending)?;
    let before = ev.nfe();
    let sched = *ev.schedule();
    let mut xs: Vec<StatePoint> = inputs.iter().map(|(x, _)| (*x).clone()).collect();
    for (t, s) in grid.intervals() {
        let batch: Vec<_> = xs.iter().zip(inputs).map(|(x, (_, z))| (x, *z)).collect();
        let eps = ev.epsilon_batched(&batch, forward_eval_time(kind, t, s))?;
        xs = xs
            .iter()
            .zip(&eps)
            .map(|(x, e)| ddim_step(x, e, t, s, &sched))
            .collect::<Result<_>>()?;
    }
    Ok((xs, ev.nfe() - before))
}

/// Which NFE reporting rule applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NfeMode {
    Dim,
    MorphPipe,
    GreedyS,
    GreedyStar,
    FastDimStyle,
}

/// Inputs to the NFE reporting rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NfeReport {
    pub encode_nfe: u64,
    pub sample_nfe: u64,
    pub blends: Option<u64>,
    pub mode: NfeMode,
}

/// Reported NFE: `N_E + N` for single-trajectory and batched-twin variants,
/// `N_E + B·N` for candidate search.
pub fn nfe_accounting(report: &NfeReport) -> Result<u64> {
    match report.mode {
        NfeMode::Dim | NfeMode::GreedyS | NfeMode::GreedyStar | NfeMode::FastDimStyle => {
            Ok(report.encode_nfe + report.sample_nfe)
        }
        NfeMode::MorphPipe => {
            let b = report
                .blends
                .ok_or_else(|| param("morph_pipe accounting needs the blend count"))?;
            Ok(report.encode_nfe + b * report.sample_nfe)
        }
    }
}
