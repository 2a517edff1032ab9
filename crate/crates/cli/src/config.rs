//! Experiment configuration.
//!
//! The file format is TOML. Every key is optional; missing keys take the defaults below.
//!
//! ```toml
//! seed = 2024
//! dim = 8
//! data_std = 0.05
//! encode_steps = 250
//! solver = "ddim"              # or "dpmpp2m"
//! forward = "diffae_forward"   # or "ddim_forward"
//! jobs = 0                     # 0 = one worker per core
//! out_dir = "out"
//!
//! [init_noise]
//! kind = "encoded"             # or kind = "random", seed = 7
//!
//! [schedule]
//! beta_min = 0.1
//! beta_max = 20.0
//!
//! [cohort]
//! identities = 200
//! pairs = 100
//! identity_std = 1.0
//! intra_std = 0.1
//!
//! [heuristic]
//! kind = "id_star"             # id_part, id_diff, worst_case_l2, worst_case_cos
//! distance = "cosine"          # or "l2"
//! seed = 7
//! bias_scale = 0.3
//!
//! [evaluation]
//! seeds = [101, 102, 103]
//! bias_scale = 0.3
//! fmr = 0.001
//!
//! [[variants]]
//! variant = "greedy_star"
//! sample_steps = 20
//! [variants.greedy]
//! n_opt = 50
//! lr = 0.01
//! ```
//!
//! Precedence: command-line flags, then the `GREEDY_DIM_OUT_DIR` environment variable
//! (output directory only), then the file, then defaults.

use std::path::{Path, PathBuf};

use greedy_dim::greedy::{GreedyConfig, SearchMode};
use greedy_dim::heuristics::{Distance, EmbeddingModel, Heuristic, HeuristicKind};
use greedy_dim::morph::{InitNoise, SamplerConfig, Variant};
use greedy_dim::schedule::{make_vp_schedule, NoiseSchedule, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN};
use greedy_dim::solvers::{ForwardKind, SolverKind};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const OUT_DIR_ENV: &str = "GREEDY_DIM_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dim: usize,
    pub data_std: f64,
    pub encode_steps: usize,
    pub solver: SolverKind,
    pub forward: ForwardKind,
    pub jobs: usize,
    pub out_dir: PathBuf,
    pub init_noise: InitNoise,
    pub schedule: ScheduleConfig,
    pub cohort: CohortConfig,
    pub heuristic: HeuristicConfig,
    pub evaluation: EvaluationConfig,
    pub variants: Vec<VariantConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub identities: usize,
    pub pairs: usize,
    /// Spread of identity centres.
    pub identity_std: f64,
    /// Spread of each image around its identity centre.
    pub intra_std: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            identities: 200,
            pairs: 100,
            identity_std: 1.0,
            intra_std: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeuristicName {
    IdStar,
    IdPart,
    IdDiff,
    WorstCaseL2,
    WorstCaseCos,
}

impl HeuristicName {
    pub fn kind(self) -> HeuristicKind {
        match self {
            HeuristicName::IdStar => HeuristicKind::IdStar,
            HeuristicName::IdPart => HeuristicKind::IdPart,
            HeuristicName::IdDiff => HeuristicKind::IdDiff,
            HeuristicName::WorstCaseL2 => HeuristicKind::WorstCaseL2,
            HeuristicName::WorstCaseCos => HeuristicKind::WorstCaseCos,
        }
    }
}

/// The attacker's guidance heuristic and its embedding network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicConfig {
    pub kind: HeuristicName,
    pub distance: Distance,
    pub seed: u64,
    pub bias_scale: f64,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            kind: HeuristicName::IdStar,
            distance: Distance::Cosine,
            seed: 7,
            bias_scale: 0.3,
        }
    }
}

/// The face recognition systems under attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub seeds: Vec<u64>,
    pub bias_scale: f64,
    pub fmr: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![101, 102, 103],
            bias_scale: 0.3,
            fmr: 0.001,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub variant: Variant,
    pub sample_steps: usize,
    /// Blend count, search and optimizer settings. `search_mode` follows the variant.
    #[serde(default)]
    pub greedy: GreedyConfig,
}

impl VariantConfig {
    pub fn default_for(variant: Variant) -> Self {
        let sample_steps = if variant == Variant::GreedyStar {
            20
        } else {
            100
        };
        let greedy = GreedyConfig {
            search_mode: search_mode(variant),
            ..GreedyConfig::default()
        };
        Self {
            variant,
            sample_steps,
            greedy,
        }
    }

    pub fn greedy_config(&self) -> GreedyConfig {
        GreedyConfig {
            search_mode: search_mode(self.variant),
            ..self.greedy
        }
    }
}

fn search_mode(variant: Variant) -> SearchMode {
    match variant {
        Variant::GreedyS => SearchMode::Discrete,
        Variant::GreedyW => SearchMode::ContinuousW,
        _ => SearchMode::EpsilonOpt,
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            dim: 8,
            data_std: 0.05,
            encode_steps: 250,
            solver: SolverKind::Ddim,
            forward: ForwardKind::DiffaeForward,
            jobs: 0,
            out_dir: PathBuf::from("out"),
            init_noise: InitNoise::Encoded,
            schedule: ScheduleConfig::default(),
            cohort: CohortConfig::default(),
            heuristic: HeuristicConfig::default(),
            evaluation: EvaluationConfig::default(),
            variants: Variant::ALL
                .into_iter()
                .map(VariantConfig::default_for)
                .collect(),
        }
    }
}

/// Values supplied on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub variants: Vec<Variant>,
    pub fmr: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|source| CliError::ConfigParse {
            path: origin.to_path_buf(),
            source,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text, path)
    }

    /// File (if any) plus environment and flag overrides, validated.
    pub fn resolve(
        path: Option<&Path>,
        env_out_dir: Option<PathBuf>,
        overrides: &Overrides,
    ) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(dir) = env_out_dir {
            cfg.out_dir = dir;
        }
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(jobs) = o.jobs {
            self.jobs = jobs;
        }
        if let Some(dir) = &o.out_dir {
            self.out_dir = dir.clone();
        }
        if let Some(fmr) = o.fmr {
            self.evaluation.fmr = fmr;
        }
        if !o.variants.is_empty() {
            let existing = std::mem::take(&mut self.variants);
            self.variants = o
                .variants
                .iter()
                .map(|&v| {
                    existing
                        .iter()
                        .find(|c| c.variant == v)
                        .cloned()
                        .unwrap_or_else(|| VariantConfig::default_for(v))
                })
                .collect();
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.dim == 0 {
            return bad("dim must be positive".into());
        }
        if !(self.data_std >= 0.0 && self.data_std.is_finite()) {
            return bad(format!(
                "data_std must be non-negative, got {}",
                self.data_std
            ));
        }
        let c = &self.cohort;
        if c.identities < 2 {
            return bad("cohort needs at least two identities".into());
        }
        if c.pairs == 0 || 2 * c.pairs > c.identities {
            return bad(format!(
                "{} disjoint pairs need at least {} identities, have {}",
                c.pairs,
                2 * c.pairs,
                c.identities
            ));
        }
        if !(c.identity_std > 0.0) || !(c.intra_std >= 0.0) {
            return bad("cohort spreads must be positive".into());
        }
        if self.evaluation.seeds.is_empty() {
            return bad("at least one evaluation system is required".into());
        }
        if !(self.evaluation.fmr > 0.0 && self.evaluation.fmr < 1.0) {
            return bad(format!(
                "fmr must lie in (0, 1), got {}",
                self.evaluation.fmr
            ));
        }
        if self.variants.is_empty() {
            return bad("no variants configured".into());
        }
        for (i, v) in self.variants.iter().enumerate() {
            if self.variants[..i].iter().any(|w| w.variant == v.variant) {
                return bad(format!("variant {} listed twice", v.variant));
            }
            self.sampler(v)
                .validate()
                .map_err(|e| CliError::Config(format!("{}: {e}", v.variant)))?;
            v.greedy_config()
                .validate()
                .map_err(|e| CliError::Config(format!("{}: {e}", v.variant)))?;
        }
        self.noise_schedule()?;
        Ok(())
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        make_vp_schedule(self.schedule.beta_min, self.schedule.beta_max)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn sampler(&self, v: &VariantConfig) -> SamplerConfig {
        SamplerConfig {
            encode_steps: self.encode_steps,
            sample_steps: v.sample_steps,
            solver: self.solver,
            forward: self.forward,
            init_noise: self.init_noise,
        }
    }

    pub fn guidance_embedding(&self) -> EmbeddingModel {
        let h = &self.heuristic;
        EmbeddingModel::seeded(self.dim, h.seed, h.distance, h.bias_scale)
    }

    pub fn guidance_heuristic(&self) -> Heuristic {
        Heuristic::new(self.heuristic.kind.kind(), self.guidance_embedding())
    }

    /// Cosine-similarity verifiers under attack.
    pub fn evaluation_systems(&self) -> Vec<EmbeddingModel> {
        self.evaluation
            .seeds
            .iter()
            .map(|&s| {
                EmbeddingModel::seeded(self.dim, s, Distance::Cosine, self.evaluation.bias_scale)
            })
            .collect()
    }

    pub fn variant(&self, v: Variant) -> Option<&VariantConfig> {
        self.variants.iter().find(|c| c.variant == v)
    }
}
