use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use greedy_dim::metrics::{map_1c, mmpmr};
use greedy_dim::morph::Variant;
use greedy_dim::solvers::nfe_accounting;
use greedy_dim_cli::config::{ExperimentConfig, Overrides, OUT_DIR_ENV};
use greedy_dim_cli::experiment::{run_experiment, write_outputs, Setup, Summary};
use greedy_dim_cli::table::{read_rows, similarity_tables};
use greedy_dim_cli::verify::{verify_suite, Selector};
use greedy_dim_cli::{CliError, Result};
use serde::Serialize;

/// Identity-guided diffusion morphing on analytic toy models.
#[derive(Debug, Parser)]
#[command(name = "greedy-dim", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (also read from GREEDY_DIM_OUT_DIR).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Variants to run, comma separated or repeated.
    #[arg(long, global = true, value_delimiter = ',')]
    variant: Vec<String>,
    /// Target false-match rate for threshold calibration.
    #[arg(long, global = true)]
    fmr: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Morph one cohort pair with one variant and print the result as JSON.
    Morph {
        #[arg(long, default_value_t = 0)]
        pair: usize,
    },
    /// Run every configured variant on the full cohort and write morphs.csv and summary.json.
    Experiment,
    /// Print measured and reported NFE for each configured variant.
    Nfe,
    /// Run self-check suites: theorem1, theorem2, gradients, roundtrip, solvers, radam,
    /// metrics, nfe or all.
    Verify {
        #[arg(default_value = "all")]
        suite: String,
    },
    /// Recompute MMPMR and MAP from a morph table.
    Metrics {
        #[arg(long)]
        csv: PathBuf,
        /// Take per-verifier thresholds from an experiment summary.
        #[arg(
            long,
            conflicts_with = "threshold",
            required_unless_present = "threshold"
        )]
        summary: Option<PathBuf>,
        /// Per-verifier thresholds, comma separated.
        #[arg(long, value_delimiter = ',')]
        threshold: Vec<f64>,
    },
}

impl GlobalArgs {
    fn variants(&self) -> Result<Vec<Variant>> {
        self.variant
            .iter()
            .map(|v| {
                v.parse::<Variant>()
                    .map_err(|e| CliError::Config(e.to_string()))
            })
            .collect()
    }

    fn config(&self) -> Result<ExperimentConfig> {
        let overrides = Overrides {
            seed: self.seed,
            jobs: self.jobs,
            out_dir: self.out_dir.clone(),
            variants: self.variants()?,
            fmr: self.fmr,
        };
        let env_out_dir = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
        ExperimentConfig::resolve(self.config.as_deref(), env_out_dir, &overrides)
    }
}

#[derive(Serialize)]
struct MorphOutput {
    pair_id: usize,
    variant: Variant,
    subject_a: String,
    subject_b: String,
    x0_ab: Vec<f64>,
    heuristic: f64,
    nfe: u64,
    similarities: Vec<[f64; 2]>,
}

#[derive(Serialize)]
struct VariantMetrics {
    variant: Variant,
    morphs: usize,
    mmpmr: Vec<f64>,
    map_1c: Vec<f64>,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn morph(cfg: &ExperimentConfig, pair: usize) -> Result<()> {
    let [vcfg] = cfg.variants.as_slice() else {
        return Err(CliError::Config("morph needs exactly one --variant".into()));
    };
    let setup = Setup::new(cfg)?;
    let result = setup.morph(pair, vcfg)?;
    let row = setup.row(pair, &result)?;
    print_json(&MorphOutput {
        pair_id: pair,
        variant: row.variant,
        subject_a: row.subject_a,
        subject_b: row.subject_b,
        x0_ab: result.x0_ab.iter().copied().collect(),
        heuristic: row.heuristic,
        nfe: row.nfe,
        similarities: row.similarities,
    })
}

fn experiment(cfg: &ExperimentConfig) -> Result<()> {
    let out = run_experiment(cfg)?;
    for path in write_outputs(&out, cfg.evaluation.seeds.len(), &cfg.out_dir)? {
        eprintln!("wrote {}", path.display());
    }
    println!(
        "{:<12} {:>6} {:>28}",
        "variant", "nfe", "mmpmr per verifier"
    );
    for v in &out.summary.variants {
        let rates: Vec<String> = v.mmpmr.iter().map(|m| format!("{m:.3}")).collect();
        println!("{:<12} {:>6} {:>28}", v.variant, v.nfe, rates.join(" "));
    }
    Ok(())
}

fn nfe(cfg: &ExperimentConfig) -> Result<()> {
    let setup = Setup::new(cfg)?;
    println!(
        "{:<12} {:>7} {:>7} {:>7} {:>9} {:>9}",
        "variant", "encode", "sample", "blends", "reported", "measured"
    );
    for vcfg in &cfg.variants {
        let r = setup.morph(0, vcfg)?;
        let reported = nfe_accounting(&r.nfe_report())?;
        let blends = r.blends.map_or("-".to_string(), |b| b.to_string());
        println!(
            "{:<12} {:>7} {:>7} {:>7} {:>9} {:>9}",
            r.variant,
            r.encode_nfe,
            r.sample_nfe,
            blends,
            reported,
            r.nfe()
        );
    }
    Ok(())
}

fn metrics(csv: &Path, summary: Option<&Path>, threshold: &[f64], only: &[Variant]) -> Result<()> {
    let file = fs::File::open(csv).map_err(|e| CliError::io(csv, e))?;
    let rows = read_rows(file)?;
    let thresholds = match summary {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            serde_json::from_str::<Summary>(&text)?.thresholds
        }
        None => threshold.to_vec(),
    };
    let mut variants: Vec<Variant> = rows.iter().map(|r| r.variant).collect();
    variants.sort();
    variants.dedup();
    if !only.is_empty() {
        variants.retain(|v| only.contains(v));
    }
    let report = variants
        .into_iter()
        .map(|v| {
            let tables = similarity_tables(&rows, v)?;
            if tables.len() != thresholds.len() {
                return Err(CliError::Config(format!(
                    "{} verifiers in the table but {} thresholds",
                    tables.len(),
                    thresholds.len()
                )));
            }
            Ok(VariantMetrics {
                variant: v,
                morphs: tables.first().map_or(0, |t| t.len()),
                mmpmr: tables
                    .iter()
                    .zip(&thresholds)
                    .map(|(t, &d)| mmpmr(t, d))
                    .collect::<Result<_, _>>()?,
                map_1c: map_1c(&tables, &thresholds)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    print_json(&report)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let Cli { global, command } = cli;
    match command {
        Command::Verify { suite } => {
            let selector: Selector = suite.parse()?;
            let reports = verify_suite(selector);
            for r in &reports {
                println!("{r}");
            }
            let ok = reports.iter().all(|r| r.passed);
            return Ok(if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            });
        }
        Command::Metrics {
            csv,
            summary,
            threshold,
        } => {
            metrics(&csv, summary.as_deref(), &threshold, &global.variants()?)?;
        }
        Command::Morph { pair } => morph(&global.config()?, pair)?,
        Command::Experiment => experiment(&global.config()?)?,
        Command::Nfe => nfe(&global.config()?)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
