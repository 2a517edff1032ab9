//! One check per acceptance criterion. Each prints a `PASS` or `FAIL` line with the
//! measured quantities and the elapsed time, then asserts.

use std::fs;
use std::time::{Duration, Instant};

use greedy_dim::morph::Variant;
use greedy_dim_cli::config::ExperimentConfig;
use greedy_dim_cli::experiment::{run_experiment, write_outputs, ROWS_FILE, SUMMARY_FILE};
use greedy_dim_cli::verify::{
    gradient_errors, measured_nfe, metric_mismatches, off_trajectory_gaps, radam_trace,
    roundtrip_error, solver_fidelity, table_nfe, theorem1_deviation, RADAM_FIXTURE,
};

fn report(name: &str, start: Instant, budget: Duration, passed: bool, detail: String) {
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let tag = if passed && in_time { "PASS" } else { "FAIL" };
    println!("{tag} {name}: {detail} ({elapsed:.2?} of {budget:?})");
    assert!(passed, "{name}: {detail}");
    assert!(in_time, "{name}: took {elapsed:?}, budget {budget:?}");
}

#[test]
fn nfe_accounting() {
    let start = Instant::now();
    let expected = |v: Variant| match v {
        Variant::Dim | Variant::GreedyS | Variant::GreedyW => 350,
        Variant::MorphPipe => 2350,
        Variant::GreedyStar => 270,
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for (v, n) in table_nfe().unwrap() {
        ok &= n == expected(v);
        parts.push(format!("{v}={n}"));
    }
    for (v, measured, reported) in measured_nfe().unwrap() {
        ok &= measured == reported && reported == expected(v);
    }

    let cfg = ExperimentConfig::default();
    let steps = |v| cfg.variant(v).unwrap().sample_steps;
    let blends = cfg.variant(Variant::MorphPipe).unwrap().greedy.blend_count;
    let pipe_steps = blends * steps(Variant::MorphPipe);
    ok &= steps(Variant::Dim) == 100
        && pipe_steps == 2100
        && steps(Variant::GreedyStar) == 20
        && cfg.encode_steps == 250;
    parts.push(format!(
        "sampling steps {}/{}/{}",
        steps(Variant::GreedyStar),
        steps(Variant::Dim),
        pipe_steps
    ));
    report("nfe", start, Duration::from_secs(1), ok, parts.join(", "));
}

#[test]
fn theorem1_invariance() {
    let start = Instant::now();
    let worst = theorem1_deviation(1000).unwrap();
    report(
        "theorem1",
        start,
        Duration::from_secs(10),
        worst < 1e-9,
        format!("max |eps_s - eps_t| = {worst:.3e} over 1000 probes"),
    );
}

#[test]
fn theorem2_off_trajectory_optimum() {
    let start = Instant::now();
    let (discrete, optimized) = off_trajectory_gaps(0.05).unwrap();
    report(
        "theorem2",
        start,
        Duration::from_secs(60),
        optimized < 1e-2 && discrete > 10.0 * optimized,
        format!("optimized distance {optimized:.3e}, 21-blend discrete distance {discrete:.3e}"),
    );
}

#[test]
fn gradient_correctness() {
    let start = Instant::now();
    let (gx, geps) = gradient_errors(100).unwrap();
    report(
        "gradients",
        start,
        Duration::from_secs(30),
        gx < 1e-5 && geps < 1e-5,
        format!("worst relative error grad_x {gx:.3e}, grad_eps {geps:.3e}"),
    );
}

#[test]
fn solver_fidelity_checks() {
    let start = Instant::now();
    let roundtrip = roundtrip_error().unwrap();
    let f = solver_fidelity().unwrap();
    report(
        "solvers",
        start,
        Duration::from_secs(60),
        roundtrip < 1e-3 && f.delta_gap < 1e-9 && f.dpmpp_ratio > 3.0 && f.ddim_ratio < 2.5,
        format!(
            "roundtrip {roundtrip:.3e}, delta-model gap {:.3e}, halving ratio DDIM {:.2} vs DPM++ 2M {:.2}",
            f.delta_gap, f.ddim_ratio, f.dpmpp_ratio
        ),
    );
}

#[test]
fn radam_fixture() {
    let start = Instant::now();
    let trace = radam_trace().unwrap();
    let worst = trace
        .iter()
        .zip(RADAM_FIXTURE)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    report(
        "radam",
        start,
        Duration::from_secs(1),
        worst < 1e-12,
        format!("trace {trace:?}, max deviation {worst:.1e}"),
    );
}

#[test]
fn metric_oracles() {
    let start = Instant::now();
    let bad = metric_mismatches(1000).unwrap();
    report(
        "metrics",
        start,
        Duration::from_secs(30),
        bad == 0,
        format!("{bad} of 1000 random tables disagree with brute force"),
    );
}

#[test]
fn variant_ordering() {
    let start = Instant::now();
    let out = run_experiment(&ExperimentConfig::default()).unwrap();
    let rates = |v| out.summary.variant(v).unwrap().mmpmr.clone();
    let (star, s, dim) = (
        rates(Variant::GreedyStar),
        rates(Variant::GreedyS),
        rates(Variant::Dim),
    );
    let ok = (0..star.len()).all(|k| star[k] >= s[k] && s[k] >= dim[k]);
    report(
        "ordering",
        start,
        Duration::from_secs(300),
        ok,
        format!("MMPMR per verifier: greedy_star {star:?}, greedy_s {s:?}, dim {dim:?}"),
    );
}

#[test]
fn determinism() {
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for name in ["first", "second"] {
        let out_dir = dir.path().join(name);
        let out = run_experiment(&cfg).unwrap();
        write_outputs(&out, cfg.evaluation.seeds.len(), &out_dir).unwrap();
        files.push((
            fs::read(out_dir.join(ROWS_FILE)).unwrap(),
            fs::read(out_dir.join(SUMMARY_FILE)).unwrap(),
        ));
    }
    let same = files[0] == files[1];
    report(
        "determinism",
        start,
        Duration::from_secs(600),
        same,
        format!(
            "{} CSV bytes, {} JSON bytes, identical: {same}",
            files[0].0.len(),
            files[0].1.len()
        ),
    );
}
