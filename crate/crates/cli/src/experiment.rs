//! Full-cohort morphing experiment.

use std::fs;
use std::path::{Path, PathBuf};

use greedy_dim::greedy::greedy_morph;
use greedy_dim::heuristics::{EmbeddingModel, Heuristic};
use greedy_dim::metrics::{map_1c, mmpmr, threshold_at_fmr};
use greedy_dim::morph::{
    uniform_blends, BonaFidePair, InitNoise, MorphPipeline, MorphResult, Variant,
};
use greedy_dim::solvers::{nfe_accounting, NfeReport};
use greedy_dim::toymodel::GaussianIdentityModel;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{subject_label, Cohort};
use crate::config::{ExperimentConfig, VariantConfig};
use crate::error::{CliError, Result};
use crate::table::{similarity_tables, write_rows, MorphRow};

pub const ROWS_FILE: &str = "morphs.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub encode_steps: usize,
    pub sample_steps: usize,
    pub nfe: u64,
    pub nfe_report: NfeReport,
    pub mmpmr: Vec<f64>,
    pub map_1c: Vec<f64>,
    pub mean_heuristic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub dim: usize,
    pub pairs: usize,
    pub fmr: f64,
    pub impostor_comparisons: usize,
    pub thresholds: Vec<f64>,
    /// Fraction of mated comparisons rejected at the calibrated threshold, per verifier.
    pub fnmr: Vec<f64>,
    pub variants: Vec<VariantSummary>,
}

impl Summary {
    pub fn variant(&self, v: Variant) -> Option<&VariantSummary> {
        self.variants.iter().find(|s| s.variant == v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<MorphRow>,
    pub summary: Summary,
}

/// Shared, immutable state for one experiment.
pub struct Setup {
    pub config: ExperimentConfig,
    pub model: GaussianIdentityModel,
    pub cohort: Cohort,
    pub heuristic: Heuristic,
    pub systems: Vec<EmbeddingModel>,
}

impl Setup {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let model = GaussianIdentityModel::new(config.data_std, config.dim)?;
        let heuristic = config.guidance_heuristic();
        let cohort = Cohort::generate(
            &config.cohort,
            config.dim,
            config.seed,
            &heuristic.embedding,
        )?;
        Ok(Self {
            config: config.clone(),
            model,
            cohort,
            heuristic,
            systems: config.evaluation_systems(),
        })
    }

    pub fn pair(&self, pair_id: usize) -> Result<BonaFidePair> {
        let &(i, j) = self
            .cohort
            .pairs
            .get(pair_id)
            .ok_or_else(|| CliError::Config(format!("no pair {pair_id} in the cohort")))?;
        Ok(BonaFidePair::new(
            self.cohort.bona_fide[i].clone(),
            self.cohort.bona_fide[j].clone(),
            (subject_label(i), subject_label(j)),
        )?)
    }

    /// Runs one variant on one pair.
    pub fn morph(&self, pair_id: usize, vcfg: &VariantConfig) -> Result<MorphResult> {
        let pair = self.pair(pair_id)?;
        let mut sampler = self.config.sampler(vcfg);
        if let InitNoise::Random { seed } = sampler.init_noise {
            sampler.init_noise = InitNoise::Random {
                seed: seed.wrapping_add(pair_id as u64),
            };
        }
        let pipe = MorphPipeline::new(&self.model, self.config.noise_schedule()?, sampler)?;
        let greedy = vcfg.greedy_config();
        let result = match vcfg.variant {
            Variant::Dim => pipe.dim_morph(&pair, 0.5)?,
            Variant::MorphPipe => {
                pipe.morph_pipe(&pair, &uniform_blends(greedy.blend_count)?, &self.heuristic)?
            }
            Variant::GreedyS | Variant::GreedyW | Variant::GreedyStar => {
                greedy_morph(&pipe, &pair, &self.heuristic, &greedy)?
            }
        };
        Ok(result)
    }

    pub fn row(&self, pair_id: usize, result: &MorphResult) -> Result<MorphRow> {
        let (i, j) = self.cohort.pairs[pair_id];
        let (pa, pb) = (&self.cohort.probes[i], &self.cohort.probes[j]);
        let similarities = self
            .systems
            .iter()
            .map(|s| {
                Ok([
                    s.similarity(&result.x0_ab, pa)?,
                    s.similarity(&result.x0_ab, pb)?,
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        let heuristic = self
            .heuristic
            .bind(&self.cohort.bona_fide[i], &self.cohort.bona_fide[j])?
            .eval(&result.x0_ab)?;
        Ok(MorphRow {
            pair_id,
            variant: result.variant,
            subject_a: subject_label(i),
            subject_b: subject_label(j),
            similarities,
            heuristic,
            nfe: nfe_accounting(&result.nfe_report())?,
        })
    }

    pub fn thresholds(&self) -> Result<(Vec<f64>, usize)> {
        let mut count = 0;
        let deltas = self
            .systems
            .iter()
            .map(|s| {
                let scores = self.cohort.impostor_scores(s)?;
                count = scores.len();
                Ok(threshold_at_fmr(&scores, self.config.evaluation.fmr)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((deltas, count))
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {jobs} workers: {e}")))
}

/// Runs every configured variant on every pair. Results are in variant-then-pair order
/// irrespective of the number of workers.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let setup = Setup::new(config)?;
    let pool = thread_pool(config.jobs)?;
    let (thresholds, impostor_comparisons) = setup.thresholds()?;
    let fnmr = setup
        .systems
        .iter()
        .zip(&thresholds)
        .map(|(s, &d)| {
            let mated = setup.cohort.mated_scores(s)?;
            Ok(mated.iter().filter(|&&m| m <= d).count() as f64 / mated.len() as f64)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut variants = Vec::new();
    for vcfg in &config.variants {
        let results: Vec<Result<(MorphResult, MorphRow)>> = pool.install(|| {
            (0..setup.cohort.pairs.len())
                .into_par_iter()
                .map(|p| {
                    let r = setup.morph(p, vcfg)?;
                    let row = setup.row(p, &r)?;
                    Ok((r, row))
                })
                .collect()
        });
        let results = results.into_iter().collect::<Result<Vec<_>>>()?;
        let report = results[0].0.nfe_report();
        if results.iter().any(|(r, _)| r.nfe_report() != report) {
            return Err(CliError::Table(format!(
                "{}: NFE differs across pairs",
                vcfg.variant
            )));
        }
        let variant_rows: Vec<MorphRow> = results.into_iter().map(|(_, row)| row).collect();
        let tables = similarity_tables(&variant_rows, vcfg.variant)?;
        let mmpmrs = tables
            .iter()
            .zip(&thresholds)
            .map(|(t, &d)| mmpmr(t, d))
            .collect::<Result<Vec<_>, _>>()?;
        let mean_heuristic =
            variant_rows.iter().map(|r| r.heuristic).sum::<f64>() / variant_rows.len() as f64;
        variants.push(VariantSummary {
            variant: vcfg.variant,
            encode_steps: config.encode_steps,
            sample_steps: vcfg.sample_steps,
            nfe: nfe_accounting(&report)?,
            nfe_report: report,
            mmpmr: mmpmrs,
            map_1c: map_1c(&tables, &thresholds)?,
            mean_heuristic,
        });
        rows.extend(variant_rows);
    }

    Ok(ExperimentOutput {
        rows,
        summary: Summary {
            seed: config.seed,
            dim: config.dim,
            pairs: setup.cohort.pairs.len(),
            fmr: config.evaluation.fmr,
            impostor_comparisons,
            thresholds,
            fnmr,
            variants,
        },
    })
}

pub fn summary_json(summary: &Summary) -> Result<String> {
    let mut s = serde_json::to_string_pretty(summary)?;
    s.push('\n');
    Ok(s)
}

/// Writes `morphs.csv` and `summary.json` into `dir`, creating it if needed.
pub fn write_outputs(out: &ExperimentOutput, systems: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let rows_path = dir.join(ROWS_FILE);
    let file = fs::File::create(&rows_path).map_err(|e| CliError::io(&rows_path, e))?;
    write_rows(std::io::BufWriter::new(file), systems, &out.rows)?;
    let summary_path = dir.join(SUMMARY_FILE);
    fs::write(&summary_path, summary_json(&out.summary)?)
        .map_err(|e| CliError::io(&summary_path, e))?;
    Ok(vec![rows_path, summary_path])
}
