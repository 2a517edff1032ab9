//! Interpolation primitives and the unguided morphing pipelines.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, param, Result};
use crate::heuristics::Heuristic;
use crate::schedule::{linear_time_grid, Direction, NoiseSchedule, TimeGrid, HORIZON};
use crate::solvers::{
    encode_forward_batched, solve_pf_ode, ForwardKind, NfeMode, NfeReport, SolverKind,
};
use crate::toymodel::{encode_semantic, EpsilonModel, Evaluator, SemanticCode, StatePoint};

/// Below this angle slerp is replaced by lerp.
pub const SLERP_MIN_ANGLE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    #[default]
    Slerp,
    Lerp,
}

fn slerp_angle(u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(domain("slerp of a zero vector"));
    }
    Ok((u.dot(v) / (nu * nv)).clamp(-1.0, 1.0).acos())
}

/// Near-parallel and near-antipodal pairs have no stable great circle.
fn slerp_degenerate(theta: f64) -> bool {
    !(SLERP_MIN_ANGLE..=std::f64::consts::PI - SLERP_MIN_ANGLE).contains(&theta)
}

/// `lerp: (1−γ)u + γv`; `slerp: [sin((1−γ)θ) u + sin(γθ) v] / sin θ`.
pub fn interpolate(
    u: &DVector<f64>,
    v: &DVector<f64>,
    gamma: f64,
    mode: Interpolation,
) -> Result<DVector<f64>> {
    if u.len() != v.len() {
        return Err(param("interpolation endpoints differ in dimension"));
    }
    let lerp = || u * (1.0 - gamma) + v * gamma;
    match mode {
        Interpolation::Lerp => Ok(lerp()),
        Interpolation::Slerp => {
            let theta = slerp_angle(u, v)?;
            if slerp_degenerate(theta) {
                return Ok(lerp());
            }
            let s = theta.sin();
            Ok(u * (((1.0 - gamma) * theta).sin() / s) + v * ((gamma * theta).sin() / s))
        }
    }
}

/// Derivative of [`interpolate`] with respect to `gamma`.
pub fn interpolate_dgamma(
    u: &DVector<f64>,
    v: &DVector<f64>,
    gamma: f64,
    mode: Interpolation,
) -> Result<DVector<f64>> {
    if u.len() != v.len() {
        return Err(param("interpolation endpoints differ in dimension"));
    }
    match mode {
        Interpolation::Lerp => Ok(v - u),
        Interpolation::Slerp => {
            let theta = slerp_angle(u, v)?;
            if slerp_degenerate(theta) {
                return Ok(v - u);
            }
            let k = theta / theta.sin();
            Ok(v * (k * (gamma * theta).cos()) - u * (k * ((1.0 - gamma) * theta).cos()))
        }
    }
}

/// `count` blend values spread uniformly over `[0, 1]`; a single blend is `0.5`.
pub fn uniform_blends(count: usize) -> Result<Vec<f64>> {
    match count {
        0 => Err(param("blend set must be non-empty")),
        1 => Ok(vec![0.5]),
        _ => Ok((0..count).map(|i| i as f64 / (count - 1) as f64).collect()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BonaFidePair {
    pub x0_a: StatePoint,
    pub x0_b: StatePoint,
    pub labels: (String, String),
}

impl BonaFidePair {
    pub fn new(x0_a: StatePoint, x0_b: StatePoint, labels: (String, String)) -> Result<Self> {
        if x0_a.len() != x0_b.len() {
            return Err(param(format!(
                "bona fide dimensions differ: {} vs {}",
                x0_a.len(),
                x0_b.len()
            )));
        }
        Ok(Self { x0_a, x0_b, labels })
    }

    pub fn unlabeled(x0_a: StatePoint, x0_b: StatePoint) -> Result<Self> {
        Self::new(x0_a, x0_b, ("a".into(), "b".into()))
    }

    pub fn dim(&self) -> usize {
        self.x0_a.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Dim,
    MorphPipe,
    GreedyS,
    GreedyW,
    GreedyStar,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Dim,
        Variant::MorphPipe,
        Variant::GreedyS,
        Variant::GreedyW,
        Variant::GreedyStar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Dim => "dim",
            Variant::MorphPipe => "morph_pipe",
            Variant::GreedyS => "greedy_s",
            Variant::GreedyW => "greedy_w",
            Variant::GreedyStar => "greedy_star",
        }
    }

    pub fn nfe_mode(self) -> NfeMode {
        match self {
            Variant::Dim => NfeMode::Dim,
            Variant::MorphPipe => NfeMode::MorphPipe,
            Variant::GreedyS | Variant::GreedyW => NfeMode::GreedyS,
            Variant::GreedyStar => NfeMode::GreedyStar,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| param(format!("unknown variant '{s}'")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.name())
    }
}

/// One sampling step of a guided run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    /// Chosen blend `w_t′`, for blend-searching variants.
    pub blend: Option<f64>,
    /// Heuristic of the unguided x0-prediction at this step.
    pub heuristic_initial: Option<f64>,
    /// Heuristic of the x0-prediction actually stepped with.
    pub heuristic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MorphResult {
    pub x0_ab: StatePoint,
    pub variant: Variant,
    pub encode_nfe: u64,
    pub sample_nfe: u64,
    /// Blend count entering the candidate-search NFE rule.
    pub blends: Option<u64>,
    pub per_step: Vec<StepRecord>,
    /// Blend of the returned output, where a single one applies.
    pub blend: Option<f64>,
}

impl MorphResult {
    pub fn nfe_report(&self) -> NfeReport {
        NfeReport {
            encode_nfe: self.encode_nfe,
            sample_nfe: self.sample_nfe,
            blends: self.blends,
            mode: self.variant.nfe_mode(),
        }
    }

    /// Evaluations actually spent.
    pub fn nfe(&self) -> u64 {
        match self.blends {
            Some(b) if self.variant == Variant::MorphPipe => self.encode_nfe + b * self.sample_nfe,
            _ => self.encode_nfe + self.sample_nfe,
        }
    }
}

/// Where the morphed trajectory starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitNoise {
    /// Slerp of the encoded bona fide noises.
    #[default]
    Encoded,
    /// Standard normal draw, seeded; skips forward encoding.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Forward (encoding) solver steps, `N_E`.
    pub encode_steps: usize,
    /// Sampling solver steps, `N`.
    pub sample_steps: usize,
    pub solver: SolverKind,
    pub forward: ForwardKind,
    pub init_noise: InitNoise,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            encode_steps: 250,
            sample_steps: 100,
            solver: SolverKind::Ddim,
            forward: ForwardKind::DiffaeForward,
            init_noise: InitNoise::Encoded,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encode_steps == 0 || self.sample_steps == 0 {
            return Err(param("step counts must be positive"));
        }
        if self.solver == SolverKind::Dpmpp2m && self.sample_steps < 2 {
            return Err(param("DPM++ 2M needs a grid of at least 3 nodes"));
        }
        Ok(())
    }
}

/// Encoded bona fide pair ready for sampling.
#[derive(Debug, Clone)]
pub struct EncodedPair {
    pub x_start_a: Option<StatePoint>,
    pub x_start_b: Option<StatePoint>,
    pub z_a: SemanticCode,
    pub z_b: SemanticCode,
    pub encode_nfe: u64,
}

/// A model, schedule and solver settings shared by every morphing variant.
pub struct MorphPipeline<'m, M: ?Sized> {
    pub model: &'m M,
    pub schedule: NoiseSchedule,
    pub sampler: SamplerConfig,
}

impl<'m, M: EpsilonModel + ?Sized> MorphPipeline<'m, M> {
    pub fn new(model: &'m M, schedule: NoiseSchedule, sampler: SamplerConfig) -> Result<Self> {
        sampler.validate()?;
        Ok(Self {
            model,
            schedule,
            sampler,
        })
    }

    pub fn evaluator(&self) -> Evaluator<'m, M> {
        Evaluator::new(self.model, self.schedule)
    }

    /// Descending grid of `sample_steps` steps from `T` to 0.
    pub fn sampling_grid(&self) -> Result<TimeGrid> {
        linear_time_grid(
            self.sampler.sample_steps + 1,
            0.0,
            HORIZON,
            Direction::Descending,
        )
    }

    /// Encodes both bona fides up to `t_start` (batched: one NFE per step).
    pub fn encode_pair(
        &self,
        ev: &Evaluator<'_, M>,
        pair: &BonaFidePair,
        t_start: f64,
    ) -> Result<EncodedPair> {
        if pair.dim() != self.model.dim() {
            return Err(param(format!(
                "pair dimension {} does not match model dimension {}",
                pair.dim(),
                self.model.dim()
            )));
        }
        let z_a = encode_semantic(&pair.x0_a);
        let z_b = encode_semantic(&pair.x0_b);
        if let InitNoise::Random { .. } = self.sampler.init_noise {
            return Ok(EncodedPair {
                x_start_a: None,
                x_start_b: None,
                z_a,
                z_b,
                encode_nfe: 0,
            });
        }
        let grid = linear_time_grid(
            self.sampler.encode_steps + 1,
            0.0,
            t_start,
            Direction::Ascending,
        )?;
        let (mut xs, nfe) = encode_forward_batched(
            ev,
            &[(&pair.x0_a, &z_a), (&pair.x0_b, &z_b)],
            &grid,
            self.sampler.forward,
        )?;
        let x_b = xs.pop();
        let x_a = xs.pop();
        Ok(EncodedPair {
            x_start_a: x_a,
            x_start_b: x_b,
            z_a,
            z_b,
            encode_nfe: nfe,
        })
    }

    /// Initial morphed state `slerp(x_T^a, x_T^b; w)` or the seeded random draw.
    pub fn initial_state(&self, enc: &EncodedPair, w: f64) -> Result<StatePoint> {
        match (self.sampler.init_noise, &enc.x_start_a, &enc.x_start_b) {
            (InitNoise::Random { seed }, _, _) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok(DVector::from_fn(self.model.dim(), |_, _| {
                    StandardNormal.sample(&mut rng)
                }))
            }
            (InitNoise::Encoded, Some(a), Some(b)) => interpolate(a, b, w, Interpolation::Slerp),
            _ => Err(param("encoded noise missing")),
        }
    }

    /// DiM: encode, slerp the noises, lerp the codes, solve the PF-ODE.
    pub fn dim_morph(&self, pair: &BonaFidePair, w: f64) -> Result<MorphResult> {
        check_blend(w)?;
        let ev = self.evaluator();
        let grid = self.sampling_grid()?;
        let enc = self.encode_pair(&ev, pair, grid.start())?;
        let x_start = self.initial_state(&enc, w)?;
        let z_ab = enc.z_a.lerp(&enc.z_b, w);
        let (x0_ab, sample_nfe) = solve_pf_ode(&ev, &x_start, &z_ab, &grid, self.sampler.solver)?;
        Ok(MorphResult {
            x0_ab,
            variant: Variant::Dim,
            encode_nfe: enc.encode_nfe,
            sample_nfe,
            blends: None,
            per_step: Vec::new(),
            blend: Some(w),
        })
    }

    /// Morph-PIPE: one DiM sample per blend, keep the candidate minimizing the heuristic
    /// (lowest index on ties). The encoding is shared across candidates.
    pub fn morph_pipe(
        &self,
        pair: &BonaFidePair,
        blends: &[f64],
        heuristic: &Heuristic,
    ) -> Result<MorphResult> {
        if blends.is_empty() {
            return Err(param("morph_pipe needs at least one blend"));
        }
        for &w in blends {
            check_blend(w)?;
        }
        let bound = heuristic.bind(&pair.x0_a, &pair.x0_b)?;
        let ev = self.evaluator();
        let grid = self.sampling_grid()?;
        let enc = self.encode_pair(&ev, pair, grid.start())?;
        let after_encoding = ev.nfe();

        let mut best: Option<(f64, f64, StatePoint)> = None;
        for &w in blends {
            let x_start = self.initial_state(&enc, w)?;
            let z_ab = enc.z_a.lerp(&enc.z_b, w);
            let (x0, _) = solve_pf_ode(&ev, &x_start, &z_ab, &grid, self.sampler.solver)?;
            let h = bound.eval(&x0)?;
            if best.as_ref().is_none_or(|(bh, _, _)| h < *bh) {
                best = Some((h, w, x0));
            }
        }
        let (_, w, x0_ab) = best.expect("non-empty blend set");
        let b = blends.len() as u64;
        Ok(MorphResult {
            x0_ab,
            variant: Variant::MorphPipe,
            encode_nfe: enc.encode_nfe,
            sample_nfe: (ev.nfe() - after_encoding) / b,
            blends: Some(b),
            per_step: Vec::new(),
            blend: Some(w),
        })
    }
}

pub(crate) fn check_blend(w: f64) -> Result<()> {
    if (0.0..=1.0).contains(&w) {
        Ok(())
    } else {
        Err(param(format!("blend {w} outside [0, 1]")))
    }
}
