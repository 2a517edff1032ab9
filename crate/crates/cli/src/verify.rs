//! Self-check suites runnable from the command line.
//!
//! Each suite compares the library against an independent oracle and reports the worst
//! observed deviation.

use std::fmt;
use std::str::FromStr;

use greedy_dim::greedy::{greedy_dim_s, greedy_dim_star, greedy_w_continuous, GreedyConfig};
use greedy_dim::heuristics::{
    heuristic_eval, heuristic_grad_eps, heuristic_grad_x, Distance, EmbeddingModel, Heuristic,
    HeuristicKind,
};
use greedy_dim::metrics::{map_1c, mmpmr, rsm, threshold_at_fmr, transferability, SimilarityTable};
use greedy_dim::morph::{uniform_blends, BonaFidePair, MorphPipeline, SamplerConfig, Variant};
use greedy_dim::optim::{RAdamConfig, RAdamState};
use greedy_dim::schedule::{linear_time_grid, make_vp_schedule, Direction, NoiseSchedule};
use greedy_dim::solvers::{
    ddim_step, encode_forward, eps_from_x0, nfe_accounting, solve_pf_ode, x0_from_eps, ForwardKind,
    NfeMode, NfeReport, SolverKind,
};
use greedy_dim::toymodel::{
    encode_semantic, Evaluator, GaussianIdentityModel, SemanticCode, StatePoint,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Theorem1,
    Theorem2,
    Gradients,
    Roundtrip,
    Solvers,
    Radam,
    Metrics,
    Nfe,
}

impl Suite {
    pub const ALL: [Suite; 8] = [
        Suite::Theorem1,
        Suite::Theorem2,
        Suite::Gradients,
        Suite::Roundtrip,
        Suite::Solvers,
        Suite::Radam,
        Suite::Metrics,
        Suite::Nfe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Theorem1 => "theorem1",
            Suite::Theorem2 => "theorem2",
            Suite::Gradients => "gradients",
            Suite::Roundtrip => "roundtrip",
            Suite::Solvers => "solvers",
            Suite::Radam => "radam",
            Suite::Metrics => "metrics",
            Suite::Nfe => "nfe",
        }
    }

    pub fn run(self) -> SuiteReport {
        let outcome = match self {
            Suite::Theorem1 => theorem1(1000),
            Suite::Theorem2 => theorem2(),
            Suite::Gradients => gradients(100),
            Suite::Roundtrip => roundtrip(),
            Suite::Solvers => solvers(),
            Suite::Radam => radam(),
            Suite::Metrics => metrics(1000),
            Suite::Nfe => nfe(),
        };
        match outcome {
            Ok((passed, detail)) => SuiteReport {
                name: self.name(),
                passed,
                detail,
            },
            Err(e) => SuiteReport {
                name: self.name(),
                passed: false,
                detail: format!("error: {e}"),
            },
        }
    }
}

impl FromStr for Suite {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown suite '{s}'")))
    }
}

/// A named suite, or every suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    All,
    One(Suite),
}

impl FromStr for Selector {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            Ok(Selector::All)
        } else {
            s.parse().map(Selector::One)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

pub fn verify_suite(selector: Selector) -> Vec<SuiteReport> {
    match selector {
        Selector::All => Suite::ALL.iter().map(|s| s.run()).collect(),
        Selector::One(s) => vec![s.run()],
    }
}

type Outcome = Result<(bool, String)>;

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> StatePoint {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Largest change of a prescribed-target noise across one DDIM step, over random schedules,
/// states and step pairs.
pub fn theorem1_deviation(probes: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let beta_min = rng.random_range(0.01..1.0);
        let beta_max = beta_min + rng.random_range(1.0..30.0);
        let sched = make_vp_schedule(beta_min, beta_max)?;
        let t = rng.random_range(0.02..1.0);
        let s = rng.random_range(0.01..t);
        let n = rng.random_range(1..12);
        let x_t = random_vec(&mut rng, n, 3.0);
        let target = random_vec(&mut rng, n, 3.0);
        let eps_t = eps_from_x0(&x_t, &target, t, &sched)?;
        let x_s = ddim_step(&x_t, &eps_t, t, s, &sched)?;
        let eps_s = eps_from_x0(&x_s, &target, s, &sched)?;
        worst = worst.max((eps_s - &eps_t).amax());
    }
    Ok(worst)
}

fn theorem1(probes: usize) -> Outcome {
    let worst = theorem1_deviation(probes)?;
    Ok((
        worst < 1e-9,
        format!("max |eps_s - eps_t| = {worst:.3e} over {probes} probes"),
    ))
}

/// Distances to an optimum placed off the plane of the bona fides, for the ε search and the
/// 21-blend discrete search: `(discrete, optimized)`.
pub fn off_trajectory_gaps(offset: f64) -> Result<(f64, f64)> {
    let n = 8;
    let a = DVector::from_fn(n, |i, _| (i as f64 * 0.9).sin());
    let b = DVector::from_fn(n, |i, _| (i as f64 * 0.4 + 0.5).cos());
    let e1 = a.normalize();
    let e2 = (&b - &e1 * e1.dot(&b)).normalize();
    let mut u = DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { -0.5 });
    u -= &e1 * e1.dot(&u);
    u -= &e2 * e2.dot(&u);
    let target = (&a + &b) * 0.5 + u.normalize() * offset;

    let model = GaussianIdentityModel::new(0.0, n)?;
    let sampler = SamplerConfig {
        sample_steps: 20,
        ..SamplerConfig::default()
    };
    let pipe = MorphPipeline::new(&model, NoiseSchedule::default(), sampler)?;
    let pair = BonaFidePair::unlabeled(a, b)?;
    let h = Heuristic::target(target.clone());
    let star = greedy_dim_star(&pipe, &pair, &h, &GreedyConfig::default())?;
    let discrete = greedy_dim_s(&pipe, &pair, &h, &GreedyConfig::discrete())?;
    Ok((
        (&discrete.x0_ab - &target).norm(),
        (&star.x0_ab - &target).norm(),
    ))
}

fn theorem2() -> Outcome {
    let (discrete, optimized) = off_trajectory_gaps(0.05)?;
    Ok((
        optimized < 1e-2 && discrete > 10.0 * optimized,
        format!("discrete gap {discrete:.3e}, optimized gap {optimized:.3e}"),
    ))
}

fn central_difference(
    f: impl Fn(&StatePoint) -> Result<f64>,
    x: &StatePoint,
    h: f64,
) -> Result<StatePoint> {
    let mut g = StatePoint::zeros(x.len());
    for i in 0..x.len() {
        let (mut p, mut m) = (x.clone(), x.clone());
        p[i] += h;
        m[i] -= h;
        g[i] = (f(&p)? - f(&m)?) / (2.0 * h);
    }
    Ok(g)
}

fn relative(a: &StatePoint, b: &StatePoint) -> f64 {
    (a - b).norm() / b.norm().max(1e-8)
}

/// Worst relative error of `(grad_x, grad_eps)` against central differences.
pub fn gradient_errors(probes: u64) -> Result<(f64, f64)> {
    let n = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sched = NoiseSchedule::default();
    let kinds = [
        HeuristicKind::IdStar,
        HeuristicKind::IdPart,
        HeuristicKind::IdDiff,
        HeuristicKind::WorstCaseL2,
        HeuristicKind::WorstCaseCos,
        HeuristicKind::Target(random_vec(&mut rng, n, 1.0)),
    ];
    let (mut worst_x, mut worst_eps): (f64, f64) = (0.0, 0.0);
    for distance in [Distance::Cosine, Distance::L2] {
        for kind in &kinds {
            for probe in 0..probes {
                let emb = EmbeddingModel::seeded(n, 100 + probe, distance, 0.3);
                let h = Heuristic::new(kind.clone(), emb);
                let a = random_vec(&mut rng, n, 1.0);
                let b = random_vec(&mut rng, n, 1.0);
                let x = random_vec(&mut rng, n, 1.0);
                let f = |p: &StatePoint| Ok(heuristic_eval(&h, p, &a, &b)?);
                let g = heuristic_grad_x(&h, &x, &a, &b)?;
                worst_x = worst_x.max(relative(&g, &central_difference(f, &x, 1e-6)?));

                let t = rng.random_range(0.05..0.95);
                let eps = random_vec(&mut rng, n, 1.0);
                let x_t = random_vec(&mut rng, n, 1.0);
                let x0 = x0_from_eps(&x_t, &eps, t, &sched)?;
                let g_eps = heuristic_grad_eps(&heuristic_grad_x(&h, &x0, &a, &b)?, t, &sched)?;
                let fe = |e: &StatePoint| {
                    Ok(heuristic_eval(
                        &h,
                        &x0_from_eps(&x_t, e, t, &sched)?,
                        &a,
                        &b,
                    )?)
                };
                worst_eps = worst_eps.max(relative(&g_eps, &central_difference(fe, &eps, 1e-6)?));
            }
        }
    }
    Ok((worst_x, worst_eps))
}

fn gradients(probes: u64) -> Outcome {
    let (x, eps) = gradient_errors(probes)?;
    Ok((
        x < 1e-5 && eps < 1e-5,
        format!("worst relative error grad_x {x:.3e}, grad_eps {eps:.3e} ({probes} probes per kind and distance)"),
    ))
}

/// Worst encode/decode error at 100 steps on the `s = 0.05` model over both solvers.
pub fn roundtrip_error() -> Result<f64> {
    let model = GaussianIdentityModel::new(0.05, 8)?;
    let ev = Evaluator::new(&model, NoiseSchedule::default());
    let up = linear_time_grid(101, 0.0, 1.0, Direction::Ascending)?;
    let down = linear_time_grid(101, 0.0, 1.0, Direction::Descending)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let x0 = random_vec(&mut rng, 8, 2.0);
        let z = encode_semantic(&x0);
        let (x_t, _) = encode_forward(&ev, &x0, &z, &up, ForwardKind::DiffaeForward)?;
        for solver in [SolverKind::Ddim, SolverKind::Dpmpp2m] {
            let (back, _) = solve_pf_ode(&ev, &x_t, &z, &down, solver)?;
            worst = worst.max((back - &x0).norm());
        }
    }
    Ok(worst)
}

fn roundtrip() -> Outcome {
    let e = roundtrip_error()?;
    Ok((e < 1e-3, format!("max roundtrip error {e:.3e} at N = 100")))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverFidelity {
    /// Largest DDIM / DPM++ 2M disagreement on the `s = 0` model.
    pub delta_gap: f64,
    /// Error ratios under step halving against the exact flow.
    pub ddim_ratio: f64,
    pub dpmpp_ratio: f64,
}

pub fn solver_fidelity() -> Result<SolverFidelity> {
    let sched = NoiseSchedule::default();
    let delta = GaussianIdentityModel::new(0.0, 8)?;
    let ev = Evaluator::new(&delta, sched);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut delta_gap: f64 = 0.0;
    for n in [20, 50, 100] {
        let grid = linear_time_grid(n + 1, 0.0, 1.0, Direction::Descending)?;
        let z = SemanticCode(random_vec(&mut rng, 8, 1.0));
        let x_t = random_vec(&mut rng, 8, 1.0);
        let (a, _) = solve_pf_ode(&ev, &x_t, &z, &grid, SolverKind::Ddim)?;
        let (b, _) = solve_pf_ode(&ev, &x_t, &z, &grid, SolverKind::Dpmpp2m)?;
        delta_gap = delta_gap.max((a - b).norm());
    }

    let model = GaussianIdentityModel::new(0.05, 8)?;
    let ev = Evaluator::new(&model, sched);
    let z = SemanticCode(DVector::from_fn(8, |i, _| (i as f64 * 0.7).sin()));
    let x_t = DVector::from_fn(8, |i, _| (i as f64 * 1.3).cos());
    let exact = model.exact_flow(&x_t, &z, 1.0, 0.1, &sched);
    let err = |kind: SolverKind, n: usize| -> Result<f64> {
        let grid = linear_time_grid(n + 1, 0.1, 1.0, Direction::Descending)?;
        let (x, _) = solve_pf_ode(&ev, &x_t, &z, &grid, kind)?;
        Ok((x - &exact).norm())
    };
    Ok(SolverFidelity {
        delta_gap,
        ddim_ratio: err(SolverKind::Ddim, 100)? / err(SolverKind::Ddim, 200)?,
        dpmpp_ratio: err(SolverKind::Dpmpp2m, 100)? / err(SolverKind::Dpmpp2m, 200)?,
    })
}

fn solvers() -> Outcome {
    let f = solver_fidelity()?;
    Ok((
        f.delta_gap < 1e-9 && f.dpmpp_ratio > 3.0 && f.dpmpp_ratio > f.ddim_ratio + 1.0,
        format!(
            "delta-model gap {:.3e}; halving ratios DDIM {:.2}, DPM++ 2M {:.2}",
            f.delta_gap, f.ddim_ratio, f.dpmpp_ratio
        ),
    ))
}

/// Scalar trace from `p = 1` under gradients `(1, −0.5, 2)` at the default settings.
pub const RADAM_FIXTURE: [f64; 3] = [0.99, 0.99, 0.978_571_428_571_428_6];

pub fn radam_trace() -> Result<Vec<f64>> {
    let mut state = RAdamState::new(RAdamConfig::default(), 1)?;
    let mut p = DVector::from_element(1, 1.0);
    [1.0, -0.5, 2.0]
        .into_iter()
        .map(|g| {
            state.step(&mut p, &DVector::from_element(1, g))?;
            Ok(p[0])
        })
        .collect()
}

fn radam() -> Outcome {
    let trace = radam_trace()?;
    let worst = trace
        .iter()
        .zip(RADAM_FIXTURE)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok((
        worst < 1e-12,
        format!("trace {trace:?}, max deviation {worst:.1e}"),
    ))
}

fn brute_accepts(row: &[f64], delta: f64) -> bool {
    row.iter().all(|&s| s > delta)
}

fn brute_threshold(scores: &[f64], fmr: f64) -> f64 {
    let allowed = (fmr * scores.len() as f64 + 1e-9).floor() as usize;
    scores
        .iter()
        .copied()
        .filter(|&d| scores.iter().filter(|&&s| s > d).count() <= allowed)
        .fold(f64::INFINITY, f64::min)
}

/// Number of probes on which a metric disagreed with its brute-force recomputation or an
/// invariant failed.
pub fn metric_mismatches(probes: usize) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut bad = 0;
    for _ in 0..probes {
        let systems = rng.random_range(1..5);
        let morphs = rng.random_range(1..30);
        let subjects = rng.random_range(1..4);
        // coarse scores so that ties occur
        let draw = |rng: &mut ChaCha8Rng| (rng.random_range(0..20) as f64) / 20.0;
        let raw: Vec<Vec<Vec<f64>>> = (0..systems)
            .map(|_| {
                (0..morphs)
                    .map(|_| (0..subjects).map(|_| draw(&mut rng)).collect())
                    .collect()
            })
            .collect();
        let deltas: Vec<f64> = (0..systems).map(|_| draw(&mut rng)).collect();
        let tables = raw
            .iter()
            .map(|r| SimilarityTable::new(r.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let mut ok = true;

        let flags: Vec<Vec<bool>> = raw
            .iter()
            .zip(&deltas)
            .map(|(r, &d)| r.iter().map(|row| brute_accepts(row, d)).collect())
            .collect();
        for (k, t) in tables.iter().enumerate() {
            let want = flags[k].iter().filter(|&&f| f).count() as f64 / morphs as f64;
            ok &= mmpmr(t, deltas[k])? == want;
            let lo = mmpmr(t, deltas[k] - 0.05)?;
            let hi = mmpmr(t, deltas[k] + 0.05)?;
            ok &= lo >= want && want >= hi;
        }
        let map = map_1c(&tables, &deltas)?;
        for (c, &m) in map.iter().enumerate() {
            let want = (0..morphs)
                .filter(|&i| flags.iter().filter(|f| f[i]).count() > c)
                .count() as f64
                / morphs as f64;
            ok &= m == want;
        }
        ok &= map.windows(2).all(|w| w[0] >= w[1]);

        let scores: Vec<f64> = (0..rng.random_range(1..60))
            .map(|_| draw(&mut rng))
            .collect();
        let fmr = rng.random_range(0.001..0.999);
        ok &= threshold_at_fmr(&scores, fmr)? == brute_threshold(&scores, fmr);

        if systems >= 2 {
            let (fa, fb) = (&flags[0], &flags[1]);
            let na = fa.iter().filter(|&&f| f).count();
            let nb = fb.iter().filter(|&&f| f).count();
            let both = fa.iter().zip(fb).filter(|(&a, &b)| a && b).count();
            match transferability(fa, fb) {
                Ok(t) => ok &= na > 0 && t == both as f64 / na as f64,
                Err(_) => ok &= na == 0,
            }
            match rsm(fa, fb) {
                Ok(r) => {
                    let want = ((both as f64 / na as f64) / (both as f64 / nb as f64)).ln();
                    ok &= both > 0 && (r - want).abs() < 1e-12;
                    ok &= (rsm(fb, fa)? + r).abs() < 1e-12;
                }
                Err(_) => ok &= na == 0 || nb == 0 || both == 0,
            }
        }
        if !ok {
            bad += 1;
        }
    }
    Ok(bad)
}

fn metrics(probes: usize) -> Outcome {
    let bad = metric_mismatches(probes)?;
    Ok((
        bad == 0,
        format!("{bad} of {probes} random tables disagree with brute force"),
    ))
}

/// Measured and reported NFE of each variant at the default settings on one toy pair.
pub fn measured_nfe() -> Result<Vec<(Variant, u64, u64)>> {
    let model = GaussianIdentityModel::new(0.05, 8)?;
    let pair = BonaFidePair::unlabeled(
        DVector::from_fn(8, |i, _| (i as f64 * 0.9).sin()),
        DVector::from_fn(8, |i, _| (i as f64 * 0.4 + 0.5).cos()),
    )?;
    let h = Heuristic::new(
        HeuristicKind::IdStar,
        EmbeddingModel::seeded(8, 7, Distance::Cosine, 0.3),
    );
    Variant::ALL
        .into_iter()
        .map(|v| {
            let sampler = SamplerConfig {
                sample_steps: if v == Variant::GreedyStar { 20 } else { 100 },
                ..SamplerConfig::default()
            };
            let pipe = MorphPipeline::new(&model, NoiseSchedule::default(), sampler)?;
            let r = match v {
                Variant::Dim => pipe.dim_morph(&pair, 0.5)?,
                Variant::MorphPipe => pipe.morph_pipe(&pair, &uniform_blends(21)?, &h)?,
                Variant::GreedyS => greedy_dim_s(&pipe, &pair, &h, &GreedyConfig::discrete())?,
                Variant::GreedyW => {
                    greedy_w_continuous(&pipe, &pair, &h, &GreedyConfig::continuous_w())?
                }
                Variant::GreedyStar => greedy_dim_star(&pipe, &pair, &h, &GreedyConfig::default())?,
            };
            Ok((v, r.nfe(), nfe_accounting(&r.nfe_report())?))
        })
        .collect()
}

/// Reported NFE from the accounting rule alone, for the default step counts.
pub fn table_nfe() -> Result<[(Variant, u64); 4]> {
    let report = |mode, sample_nfe, blends| NfeReport {
        encode_nfe: 250,
        sample_nfe,
        blends,
        mode,
    };
    Ok([
        (
            Variant::Dim,
            nfe_accounting(&report(NfeMode::Dim, 100, None))?,
        ),
        (
            Variant::MorphPipe,
            nfe_accounting(&report(NfeMode::MorphPipe, 100, Some(21)))?,
        ),
        (
            Variant::GreedyS,
            nfe_accounting(&report(NfeMode::GreedyS, 100, None))?,
        ),
        (
            Variant::GreedyStar,
            nfe_accounting(&report(NfeMode::GreedyStar, 20, None))?,
        ),
    ])
}

fn nfe() -> Outcome {
    let expected = |v: Variant| match v {
        Variant::Dim | Variant::GreedyS | Variant::GreedyW => 350,
        Variant::MorphPipe => 2350,
        Variant::GreedyStar => 270,
    };
    let mut ok = table_nfe()?.iter().all(|&(v, n)| n == expected(v));
    let mut parts = Vec::new();
    for (v, measured, reported) in measured_nfe()? {
        ok &= measured == reported && reported == expected(v);
        parts.push(format!("{v} {reported}"));
    }
    Ok((ok, parts.join(", ")))
}
