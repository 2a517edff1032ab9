//! Seeded toy identity cohorts.
//!
//! Each identity has a centre drawn from `N(0, identity_std² I)`. Its enrolment (bona fide)
//! image and its probe image are independent draws around that centre with spread
//! `intra_std`. Morph pairs are chosen greedily by guidance-embedding similarity among
//! identities not yet paired.

use greedy_dim::heuristics::EmbeddingModel;
use greedy_dim::toymodel::StatePoint;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::CohortConfig;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub bona_fide: Vec<StatePoint>,
    pub probes: Vec<StatePoint>,
    pub pairs: Vec<(usize, usize)>,
}

pub fn subject_label(index: usize) -> String {
    format!("id{index:04}")
}

impl Cohort {
    pub fn generate(
        cfg: &CohortConfig,
        dim: usize,
        seed: u64,
        guidance: &EmbeddingModel,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gauss = |scale: f64| -> StatePoint {
            DVector::from_fn(dim, |_, _| {
                let v: f64 = StandardNormal.sample(&mut rng);
                scale * v
            })
        };
        let mut bona_fide = Vec::with_capacity(cfg.identities);
        let mut probes = Vec::with_capacity(cfg.identities);
        for _ in 0..cfg.identities {
            let centre = gauss(cfg.identity_std);
            bona_fide.push(&centre + gauss(cfg.intra_std));
            probes.push(&centre + gauss(cfg.intra_std));
        }

        let embedded = bona_fide
            .iter()
            .map(|x| guidance.embed(x))
            .collect::<Result<Vec<_>, _>>()?;
        let mut candidates = Vec::new();
        for i in 0..cfg.identities {
            for j in i + 1..cfg.identities {
                let s = guidance.distance().similarity(&embedded[i], &embedded[j])?;
                candidates.push((s, i, j));
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let mut used = vec![false; cfg.identities];
        let mut pairs = Vec::with_capacity(cfg.pairs);
        for (_, i, j) in candidates {
            if pairs.len() == cfg.pairs {
                break;
            }
            if !used[i] && !used[j] {
                used[i] = true;
                used[j] = true;
                pairs.push((i, j));
            }
        }
        Ok(Self {
            bona_fide,
            probes,
            pairs,
        })
    }

    /// Non-mated comparisons (enrolment of `i` against probe of `j ≠ i`) for one verifier.
    pub fn impostor_scores(&self, system: &EmbeddingModel) -> Result<Vec<f64>> {
        let enrolled = self
            .bona_fide
            .iter()
            .map(|x| system.embed(x))
            .collect::<Result<Vec<_>, _>>()?;
        let probes = self
            .probes
            .iter()
            .map(|x| system.embed(x))
            .collect::<Result<Vec<_>, _>>()?;
        let mut scores = Vec::with_capacity(enrolled.len() * (enrolled.len() - 1));
        for (i, e) in enrolled.iter().enumerate() {
            for (j, p) in probes.iter().enumerate() {
                if i != j {
                    scores.push(system.distance().similarity(e, p)?);
                }
            }
        }
        Ok(scores)
    }

    /// Mated comparisons (enrolment against own probe) for one verifier.
    pub fn mated_scores(&self, system: &EmbeddingModel) -> Result<Vec<f64>> {
        self.bona_fide
            .iter()
            .zip(&self.probes)
            .map(|(e, p)| system.similarity(e, p))
            .collect::<Result<Vec<_>, _>>()
            .map_err(Into::into)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use greedy_dim::heuristics::Distance;

    fn cohort(seed: u64) -> Cohort {
        let cfg = CohortConfig {
            identities: 20,
            pairs: 8,
            ..CohortConfig::default()
        };
        Cohort::generate(
            &cfg,
            8,
            seed,
            &EmbeddingModel::seeded(8, 1, Distance::Cosine, 0.3),
        )
        .unwrap()
    }

    #[test]
    fn pairs_are_disjoint_and_deterministic() {
        let c = cohort(3);
        assert_eq!(c, cohort(3));
        assert_ne!(c.bona_fide, cohort(4).bona_fide);
        assert_eq!(c.pairs.len(), 8);
        let mut seen = std::collections::HashSet::new();
        for &(i, j) in &c.pairs {
            assert!(i < j);
            assert!(seen.insert(i) && seen.insert(j));
        }
    }

    #[test]
    fn impostor_count() {
        let c = cohort(3);
        let sys = EmbeddingModel::seeded(8, 2, Distance::Cosine, 0.3);
        assert_eq!(c.impostor_scores(&sys).unwrap().len(), 20 * 19);
        assert_eq!(c.mated_scores(&sys).unwrap().len(), 20);
    }
}
