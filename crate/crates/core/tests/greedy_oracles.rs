use greedy_dim::greedy::{
    count_distinct_blend_paths, follow_blend_path, greedy_dim_s, greedy_dim_star,
    greedy_w_continuous, optimize_blend, GreedyConfig,
};
use greedy_dim::heuristics::{Distance, EmbeddingModel, Heuristic, HeuristicKind};
use greedy_dim::morph::{
    interpolate, uniform_blends, BonaFidePair, Interpolation, MorphPipeline, SamplerConfig,
};
use greedy_dim::schedule::NoiseSchedule;
use greedy_dim::solvers::x0_from_eps;
use greedy_dim::toymodel::{encode_semantic, GaussianIdentityModel};
use nalgebra::DVector;

fn pair() -> BonaFidePair {
    BonaFidePair::unlabeled(
        DVector::from_fn(8, |i, _| (i as f64 * 1.1).sin() + 0.2),
        DVector::from_fn(8, |i, _| (i as f64 * 0.6 - 0.3).cos()),
    )
    .unwrap()
}

fn heuristic() -> Heuristic {
    Heuristic::new(
        HeuristicKind::IdStar,
        EmbeddingModel::seeded(8, 5, Distance::Cosine, 0.3),
    )
}

fn pipe(model: &GaussianIdentityModel, steps: usize) -> MorphPipeline<'_, GaussianIdentityModel> {
    let sampler = SamplerConfig {
        sample_steps: steps,
        ..SamplerConfig::default()
    };
    MorphPipeline::new(model, NoiseSchedule::default(), sampler).unwrap()
}

#[test]
fn discrete_choice_is_per_step_argmin() {
    let model = GaussianIdentityModel::default();
    let p = pipe(&model, 25);
    let pr = pair();
    let h = heuristic();
    let r = greedy_dim_s(&p, &pr, &h, &GreedyConfig::discrete()).unwrap();
    let path: Vec<f64> = r.per_step.iter().map(|s| s.blend.unwrap()).collect();
    let states = follow_blend_path(&p, &pr, &path, Interpolation::Slerp).unwrap();
    assert_eq!(states.last().unwrap(), &r.x0_ab);

    let sched = NoiseSchedule::default();
    let (za, zb) = (encode_semantic(&pr.x0_a), encode_semantic(&pr.x0_b));
    let blends = uniform_blends(21).unwrap();
    for (i, step) in r.per_step.iter().enumerate() {
        let x = &states[i];
        let ea = model.analytic_epsilon(x, &za, step.t, &sched).unwrap();
        let eb = model.analytic_epsilon(x, &zb, step.t, &sched).unwrap();
        let scores: Vec<f64> = blends
            .iter()
            .map(|&w| {
                let eps = interpolate(&ea, &eb, w, Interpolation::Slerp).unwrap();
                let x0 = x0_from_eps(x, &eps, step.t, &sched).unwrap();
                h.bind(&pr.x0_a, &pr.x0_b).unwrap().eval(&x0).unwrap()
            })
            .collect();
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let first = scores.iter().position(|&s| s == min).unwrap();
        assert_eq!(step.blend.unwrap(), blends[first], "step {i}");
        assert_eq!(step.heuristic.unwrap(), min);
    }
}

#[test]
fn blend_paths_are_all_distinct() {
    let model = GaussianIdentityModel::default();
    let p = pipe(&model, 3);
    let blends = [0.0, 0.4, 1.0];
    let n = count_distinct_blend_paths(&p, &pair(), &blends, Interpolation::Slerp, 1e-12).unwrap();
    assert_eq!(n, 27);
    let n =
        count_distinct_blend_paths(&p, &pair(), &[0.2, 0.7], Interpolation::Lerp, 1e-12).unwrap();
    assert_eq!(n, 8);
}

#[test]
fn continuous_blend_matches_grid_scan() {
    let f = |w: f64| 3.0 * (w - 0.3711).powi(2) + (2.0 * w).exp() * 0.1;
    let df = |w: f64| 6.0 * (w - 0.3711) + 0.2 * (2.0 * w).exp();
    let (w, _) = optimize_blend(|w| Ok((f(w), df(w))), 50).unwrap();
    let w_star = (0..=100_000)
        .map(|i| i as f64 / 100_000.0)
        .min_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap();
    assert!((w - w_star).abs() < 1e-3, "{w} vs {w_star}");
}

#[test]
fn continuous_blend_on_real_step_matches_grid_scan() {
    let model = GaussianIdentityModel::default();
    let sched = NoiseSchedule::default();
    let pr = pair();
    let (za, zb) = (encode_semantic(&pr.x0_a), encode_semantic(&pr.x0_b));
    let t = 0.4;
    let x = (&pr.x0_a * 0.3 + &pr.x0_b * 0.7) * sched.alpha(t)
        + DVector::from_fn(8, |i, _| 0.2 * (i as f64).cos()) * sched.sigma(t);
    let ea = model.analytic_epsilon(&x, &za, t, &sched).unwrap();
    let eb = model.analytic_epsilon(&x, &zb, t, &sched).unwrap();
    let x0_at = |w: f64| {
        let eps = interpolate(&ea, &eb, w, Interpolation::Lerp).unwrap();
        x0_from_eps(&x, &eps, t, &sched).unwrap()
    };
    // convex in w under lerp: the target is the clean estimate at w = 0.62
    let h = Heuristic::target(x0_at(0.62));
    let bound = h.bind(&pr.x0_a, &pr.x0_b).unwrap();
    let (alpha, sigma) = sched.alpha_sigma(t);
    let (w, _) = optimize_blend(
        |w| {
            let (v, g) = bound.value_and_grad(&x0_at(w))?;
            Ok((v, -(sigma / alpha) * g.dot(&(&eb - &ea))))
        },
        50,
    )
    .unwrap();
    assert!((w - 0.62).abs() < 1e-3, "{w}");
}

#[test]
fn continuous_variant_stays_in_unit_interval() {
    let model = GaussianIdentityModel::default();
    let p = pipe(&model, 20);
    let r = greedy_w_continuous(&p, &pair(), &heuristic(), &GreedyConfig::continuous_w()).unwrap();
    assert_eq!(r.nfe(), 270);
    for s in &r.per_step {
        let w = s.blend.unwrap();
        assert!((0.0..=1.0).contains(&w));
        assert!(s.heuristic.unwrap() <= s.heuristic_initial.unwrap());
    }
}

#[test]
fn star_never_hurts_local_score() {
    let model = GaussianIdentityModel::default();
    let p = pipe(&model, 20);
    for kind in [
        HeuristicKind::IdStar,
        HeuristicKind::IdPart,
        HeuristicKind::WorstCaseL2,
        HeuristicKind::WorstCaseCos,
    ] {
        let h = Heuristic::new(kind, EmbeddingModel::seeded(8, 9, Distance::Cosine, 0.3));
        let r = greedy_dim_star(&p, &pair(), &h, &GreedyConfig::default()).unwrap();
        for s in &r.per_step {
            assert!(s.heuristic.unwrap() <= s.heuristic_initial.unwrap());
        }
    }
}

#[test]
fn star_improves_final_heuristic_over_dim() {
    let model = GaussianIdentityModel::default();
    let p = pipe(&model, 20);
    let pr = pair();
    let h = heuristic();
    let bound = h.bind(&pr.x0_a, &pr.x0_b).unwrap();
    let star = greedy_dim_star(&p, &pr, &h, &GreedyConfig::default()).unwrap();
    let dim = p.dim_morph(&pr, 0.5).unwrap();
    assert!(bound.eval(&star.x0_ab).unwrap() < bound.eval(&dim.x0_ab).unwrap());
}
