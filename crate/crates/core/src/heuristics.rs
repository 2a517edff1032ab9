//! Identity-based heuristics over a fixed linear face-embedding surrogate, with exact
//! gradients.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, param, Result};
use crate::schedule::NoiseSchedule;
use crate::toymodel::StatePoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    /// `1 − cos(u, v)`.
    #[default]
    Cosine,
    /// Euclidean norm of the difference.
    L2,
}

impl Distance {
    pub fn eval(self, p: &DVector<f64>, q: &DVector<f64>) -> Result<f64> {
        match self {
            Distance::Cosine => {
                let (np, nq) = (p.norm(), q.norm());
                if np == 0.0 || nq == 0.0 {
                    return Err(domain("cosine distance of a zero vector"));
                }
                Ok(1.0 - p.dot(q) / (np * nq))
            }
            Distance::L2 => Ok((p - q).norm()),
        }
    }

    /// Gradient with respect to the first argument. The L2 kink at `p = q` maps to 0.
    pub fn grad_first(self, p: &DVector<f64>, q: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Distance::Cosine => {
                let (np, nq) = (p.norm(), q.norm());
                if np == 0.0 || nq == 0.0 {
                    return Err(domain("cosine distance of a zero vector"));
                }
                let c = p.dot(q);
                Ok(-(q / (np * nq) - p * (c / (np * np * np * nq))))
            }
            Distance::L2 => {
                let diff = p - q;
                let n = diff.norm();
                if n == 0.0 {
                    Ok(DVector::zeros(p.len()))
                } else {
                    Ok(diff / n)
                }
            }
        }
    }

    /// Similarity score for verification (higher means more alike).
    pub fn similarity(self, p: &DVector<f64>, q: &DVector<f64>) -> Result<f64> {
        let d = self.eval(p, q)?;
        Ok(match self {
            Distance::Cosine => 1.0 - d,
            Distance::L2 => -d,
        })
    }
}

/// Fixed affine embedding `F(x) = W x + b`, optionally projected to the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    weight: DMatrix<f64>,
    bias: DVector<f64>,
    normalize_output: bool,
    distance: Distance,
}

impl EmbeddingModel {
    pub fn new(
        weight: DMatrix<f64>,
        bias: DVector<f64>,
        normalize_output: bool,
        distance: Distance,
    ) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(param(format!(
                "bias length {} does not match {} embedding rows",
                bias.len(),
                weight.nrows()
            )));
        }
        if weight.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(param("embedding parameters must be finite"));
        }
        Ok(Self {
            weight,
            bias,
            normalize_output,
            distance,
        })
    }

    /// `F(x) = x` with no normalization.
    pub fn identity(dim: usize, distance: Distance) -> Self {
        Self {
            weight: DMatrix::identity(dim, dim),
            bias: DVector::zeros(dim),
            normalize_output: false,
            distance,
        }
    }

    /// Seeded random embedding with orthonormal columns and Gaussian bias of scale
    /// `bias_scale`. Outputs are normalized in cosine mode.
    pub fn seeded(dim: usize, seed: u64, distance: Distance, bias_scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        let gauss = DMatrix::from_fn(dim, dim, |_, _| draw());
        let bias = DVector::from_fn(dim, |_, _| bias_scale * draw());
        let weight = gauss.qr().q();
        Self {
            weight,
            bias,
            normalize_output: distance == Distance::Cosine,
            distance,
        }
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn bias(&self) -> &DVector<f64> {
        &self.bias
    }

    pub fn normalize_output(&self) -> bool {
        self.normalize_output
    }

    pub fn distance(&self) -> Distance {
        self.distance
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn embed(&self, x: &StatePoint) -> Result<DVector<f64>> {
        self.embed_with_jacobian(x).map(|(v, _)| v)
    }

    /// Embedding together with its Jacobian `∂F/∂x`.
    pub fn embed_with_jacobian(&self, x: &StatePoint) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if x.len() != self.weight.ncols() {
            return Err(param(format!(
                "embedding expects dimension {}, got {}",
                self.weight.ncols(),
                x.len()
            )));
        }
        let u = &self.weight * x + &self.bias;
        if !self.normalize_output {
            return Ok((u, self.weight.clone()));
        }
        let n = u.norm();
        if n == 0.0 {
            return Err(domain("cannot normalize a zero embedding"));
        }
        let v = u / n;
        let m = v.len();
        let proj = (DMatrix::identity(m, m) - &v * v.transpose()) / n;
        Ok((v, proj * &self.weight))
    }

    pub fn similarity(&self, x: &StatePoint, y: &StatePoint) -> Result<f64> {
        self.distance.similarity(&self.embed(x)?, &self.embed(y)?)
    }
}

/// Heuristic families. `Target` is the surrogate `‖x − c‖²` in data space.
#[derive(Debug, Clone, PartialEq)]
pub enum HeuristicKind {
    /// `L_ID + L_diff`.
    IdStar,
    /// `d(v_ab, v_a) + d(v_ab, v_b)`.
    IdPart,
    /// `|d(v_ab, v_a) − d(v_ab, v_b)|`.
    IdDiff,
    /// Distance to the arithmetic embedding midpoint.
    WorstCaseL2,
    /// Distance to the normalized embedding midpoint.
    WorstCaseCos,
    Target(StatePoint),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Heuristic {
    pub kind: HeuristicKind,
    pub embedding: EmbeddingModel,
}

impl Heuristic {
    pub fn new(kind: HeuristicKind, embedding: EmbeddingModel) -> Self {
        Self { kind, embedding }
    }

    /// Surrogate `‖x − target‖²`.
    pub fn target(target: StatePoint) -> Self {
        let dim = target.len();
        Self {
            kind: HeuristicKind::Target(target),
            embedding: EmbeddingModel::identity(dim, Distance::L2),
        }
    }

    /// Precomputes the bona fide embeddings for repeated evaluation.
    pub fn bind(&self, x0_a: &StatePoint, x0_b: &StatePoint) -> Result<BoundHeuristic<'_>> {
        if x0_a.len() != x0_b.len() {
            return Err(param("bona fide dimensions differ"));
        }
        let reference = match &self.kind {
            HeuristicKind::Target(c) => {
                if c.len() != x0_a.len() {
                    return Err(param("target dimension mismatch"));
                }
                Reference::Target
            }
            HeuristicKind::IdStar | HeuristicKind::IdPart | HeuristicKind::IdDiff => {
                Reference::Pair(self.embedding.embed(x0_a)?, self.embedding.embed(x0_b)?)
            }
            HeuristicKind::WorstCaseL2 => {
                let mid = (self.embedding.embed(x0_a)? + self.embedding.embed(x0_b)?) * 0.5;
                Reference::Point(mid)
            }
            HeuristicKind::WorstCaseCos => {
                let sum = self.embedding.embed(x0_a)? + self.embedding.embed(x0_b)?;
                let n = sum.norm();
                if n <= 1e-12 {
                    return Err(domain("degenerate midpoint: embeddings are antipodal"));
                }
                Reference::Point(sum / n)
            }
        };
        Ok(BoundHeuristic {
            heuristic: self,
            reference,
            dim: x0_a.len(),
        })
    }
}

#[derive(Debug, Clone)]
enum Reference {
    Pair(DVector<f64>, DVector<f64>),
    Point(DVector<f64>),
    Target,
}

/// A heuristic with its bona fide references fixed.
#[derive(Debug, Clone)]
pub struct BoundHeuristic<'h> {
    heuristic: &'h Heuristic,
    reference: Reference,
    dim: usize,
}

impl BoundHeuristic<'_> {
    fn check(&self, x: &StatePoint) -> Result<()> {
        if x.len() != self.dim {
            return Err(param(format!(
                "expected dimension {}, got {}",
                self.dim,
                x.len()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &StatePoint) -> Result<f64> {
        self.check(x)?;
        let emb = &self.heuristic.embedding;
        let d = emb.distance();
        match (&self.heuristic.kind, &self.reference) {
            (HeuristicKind::Target(c), _) => Ok((x - c).norm_squared()),
            (kind, Reference::Pair(va, vb)) => {
                let v = emb.embed(x)?;
                let (da, db) = (d.eval(&v, va)?, d.eval(&v, vb)?);
                Ok(match kind {
                    HeuristicKind::IdPart => da + db,
                    HeuristicKind::IdDiff => (da - db).abs(),
                    _ => da + db + (da - db).abs(),
                })
            }
            (_, Reference::Point(p)) => d.eval(&emb.embed(x)?, p),
            _ => unreachable!("reference built by bind"),
        }
    }

    /// Gradient with respect to `x`; at the `|·|` kink the difference term contributes 0.
    pub fn grad_x(&self, x: &StatePoint) -> Result<DVector<f64>> {
        self.value_and_grad(x).map(|(_, g)| g)
    }

    pub fn value_and_grad(&self, x: &StatePoint) -> Result<(f64, DVector<f64>)> {
        self.check(x)?;
        let emb = &self.heuristic.embedding;
        let d = emb.distance();
        if let HeuristicKind::Target(c) = &self.heuristic.kind {
            let diff = x - c;
            return Ok((diff.norm_squared(), diff * 2.0));
        }
        let (v, jac) = emb.embed_with_jacobian(x)?;
        let (value, grad_v) = match &self.reference {
            Reference::Pair(va, vb) => {
                let (da, db) = (d.eval(&v, va)?, d.eval(&v, vb)?);
                let (ga, gb) = (d.grad_first(&v, va)?, d.grad_first(&v, vb)?);
                let part = &ga + &gb;
                let diff_sign = if da > db {
                    1.0
                } else if da < db {
                    -1.0
                } else {
                    0.0
                };
                let diff = (ga - gb) * diff_sign;
                match self.heuristic.kind {
                    HeuristicKind::IdPart => (da + db, part),
                    HeuristicKind::IdDiff => ((da - db).abs(), diff),
                    _ => (da + db + (da - db).abs(), part + diff),
                }
            }
            Reference::Point(p) => (d.eval(&v, p)?, d.grad_first(&v, p)?),
            Reference::Target => unreachable!("handled above"),
        };
        Ok((value, jac.transpose() * grad_v))
    }
}

/// `H(x_ab; x0_a, x0_b)`.
pub fn heuristic_eval(
    h: &Heuristic,
    x_ab: &StatePoint,
    x0_a: &StatePoint,
    x0_b: &StatePoint,
) -> Result<f64> {
    h.bind(x0_a, x0_b)?.eval(x_ab)
}

/// `∇_x H(x_ab; x0_a, x0_b)`.
pub fn heuristic_grad_x(
    h: &Heuristic,
    x_ab: &StatePoint,
    x0_a: &StatePoint,
    x0_b: &StatePoint,
) -> Result<DVector<f64>> {
    h.bind(x0_a, x0_b)?.grad_x(x_ab)
}

/// Chain rule through the clean-sample estimate only: `∇_ε H = −(σ_t/α_t) ∇_x H`.
pub fn heuristic_grad_eps(
    grad_x: &DVector<f64>,
    t: f64,
    schedule: &NoiseSchedule,
) -> Result<DVector<f64>> {
    schedule.check_time(t)?;
    let (alpha, sigma) = schedule.alpha_sigma(t);
    if alpha <= 0.0 {
        return Err(domain(format!("alpha vanishes at t = {t}")));
    }
    Ok(grad_x * (-sigma / alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use proptest::prelude::*;

    fn kinds() -> Vec<HeuristicKind> {
        vec![
            HeuristicKind::IdStar,
            HeuristicKind::IdPart,
            HeuristicKind::IdDiff,
            HeuristicKind::WorstCaseL2,
            HeuristicKind::WorstCaseCos,
        ]
    }

    #[test]
    fn identity_embedding() {
        let e = EmbeddingModel::identity(3, Distance::L2);
        let x = dvector![1.0, -2.0, 0.5];
        assert_eq!(e.embed(&x).unwrap(), x);
    }

    #[test]
    fn normalized_embedding_unit_norm() {
        let e = EmbeddingModel::seeded(6, 3, Distance::Cosine, 0.3);
        let x = DVector::from_fn(6, |i, _| i as f64 - 2.5);
        assert!((e.embed(&x).unwrap().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seeded_is_reproducible_and_orthogonal() {
        let a = EmbeddingModel::seeded(5, 11, Distance::Cosine, 0.1);
        let b = EmbeddingModel::seeded(5, 11, Distance::Cosine, 0.1);
        assert_eq!(a, b);
        let qtq = a.weight().transpose() * a.weight();
        assert!((qtq - DMatrix::identity(5, 5)).amax() < 1e-12);
        assert_ne!(a, EmbeddingModel::seeded(5, 12, Distance::Cosine, 0.1));
    }

    #[test]
    fn embed_matches_matmul_oracle() {
        let e = EmbeddingModel::seeded(4, 5, Distance::L2, 0.5);
        let x = dvector![0.3, -1.0, 2.0, 0.7];
        let w = e.weight();
        let b = e.bias();
        let oracle: Vec<f64> = (0..4)
            .map(|r| (0..4).map(|c| w[(r, c)] * x[c]).sum::<f64>() + b[r])
            .collect();
        let got = e.embed(&x).unwrap();
        for r in 0..4 {
            assert!((got[r] - oracle[r]).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_embedding_rejected_under_normalization() {
        let e = EmbeddingModel::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            true,
            Distance::Cosine,
        )
        .unwrap();
        assert!(matches!(
            e.embed(&DVector::zeros(2)),
            Err(crate::Error::Domain(_))
        ));
    }

    #[test]
    fn one_sided_collapse() {
        let h = Heuristic::new(
            HeuristicKind::IdStar,
            EmbeddingModel::seeded(4, 1, Distance::Cosine, 0.2),
        );
        let a = dvector![1.0, 0.2, -0.5, 0.3];
        let b = dvector![-0.4, 0.9, 0.1, 0.8];
        let e = &h.embedding;
        let dab = e
            .distance()
            .eval(&e.embed(&a).unwrap(), &e.embed(&b).unwrap())
            .unwrap();
        let v = heuristic_eval(&h, &a, &a, &b).unwrap();
        assert!((v - 2.0 * dab).abs() < 1e-12);
    }

    #[test]
    fn worst_case_l2_zero_at_midpoint() {
        let h = Heuristic::new(
            HeuristicKind::WorstCaseL2,
            EmbeddingModel::identity(3, Distance::L2),
        );
        let a = dvector![1.0, 0.0, 2.0];
        let b = dvector![3.0, -2.0, 0.0];
        let mid = (&a + &b) * 0.5;
        assert!(heuristic_eval(&h, &mid, &a, &b).unwrap().abs() < 1e-15);
    }

    #[test]
    fn worst_case_cos_antipodal_error() {
        let h = Heuristic::new(
            HeuristicKind::WorstCaseCos,
            EmbeddingModel::identity(2, Distance::Cosine),
        );
        let a = dvector![1.0, 0.0];
        let b = dvector![-1.0, 0.0];
        assert!(matches!(h.bind(&a, &b), Err(crate::Error::Domain(_))));
    }

    #[test]
    fn target_surrogate_gradient() {
        let c = dvector![1.0, 2.0];
        let h = Heuristic::target(c.clone());
        let x = dvector![0.5, -1.0];
        let g = heuristic_grad_x(&h, &x, &c, &c).unwrap();
        assert_eq!(g, (&x - &c) * 2.0);
    }

    #[test]
    fn kink_uses_part_gradient() {
        // Equidistant point: identity embedding, L2, symmetric bona fides.
        let emb = EmbeddingModel::identity(2, Distance::L2);
        let star = Heuristic::new(HeuristicKind::IdStar, emb.clone());
        let part = Heuristic::new(HeuristicKind::IdPart, emb);
        let a = dvector![1.0, 0.0];
        let b = dvector![-1.0, 0.0];
        let x = dvector![0.0, 0.7];
        let gs = heuristic_grad_x(&star, &x, &a, &b).unwrap();
        let gp = heuristic_grad_x(&part, &x, &a, &b).unwrap();
        assert_eq!(gs, gp);
    }

    #[test]
    fn grad_eps_cases() {
        let s = NoiseSchedule::default();
        let g = dvector![1.0, -3.0];
        assert!(heuristic_grad_eps(&g, 0.0, &s).unwrap().norm() == 0.0);
        // find t with σ = α
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if s.alpha(mid) > s.sigma(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let ge = heuristic_grad_eps(&g, lo, &s).unwrap();
        assert!((ge + &g).norm() < 1e-9);
    }

    #[test]
    fn grad_x_matches_finite_differences() {
        for (k, kind) in kinds().into_iter().enumerate() {
            for distance in [Distance::Cosine, Distance::L2] {
                let emb = EmbeddingModel::seeded(5, 40 + k as u64, distance, 0.4);
                let h = Heuristic::new(kind.clone(), emb);
                let a = DVector::from_fn(5, |i, _| (i as f64 * 1.3).sin());
                let b = DVector::from_fn(5, |i, _| (i as f64 * 0.7 + 1.0).cos());
                let x = DVector::from_fn(5, |i, _| 0.3 - 0.2 * i as f64);
                let bound = h.bind(&a, &b).unwrap();
                let g = bound.grad_x(&x).unwrap();
                let step = 1e-6;
                for i in 0..5 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += step;
                    xm[i] -= step;
                    let fd = (bound.eval(&xp).unwrap() - bound.eval(&xm).unwrap()) / (2.0 * step);
                    assert!(
                        (fd - g[i]).abs() <= 1e-5 * g.amax().max(1e-3),
                        "{kind:?} {distance:?} coord {i}: fd {fd} vs {}",
                        g[i]
                    );
                }
            }
        }
    }

    proptest! {
        #[test]
        fn decomposition_and_symmetry(
            xs in prop::collection::vec(-2.0f64..2.0, 4),
            as_ in prop::collection::vec(-2.0f64..2.0, 4),
            bs in prop::collection::vec(-2.0f64..2.0, 4),
            seed in 0u64..50,
        ) {
            let emb = EmbeddingModel::seeded(4, seed, Distance::Cosine, 0.5);
            let (x, a, b) = (DVector::from_vec(xs), DVector::from_vec(as_), DVector::from_vec(bs));
            let ev = |k: HeuristicKind, p: &DVector<f64>, q: &DVector<f64>| {
                heuristic_eval(&Heuristic::new(k, emb.clone()), &x, p, q)
            };
            let star = ev(HeuristicKind::IdStar, &a, &b);
            prop_assume!(star.is_ok());
            let star = star.unwrap();
            let part = ev(HeuristicKind::IdPart, &a, &b).unwrap();
            let diff = ev(HeuristicKind::IdDiff, &a, &b).unwrap();
            prop_assert!((star - (part + diff)).abs() < 1e-12);
            prop_assert!(star >= part - 1e-12 && part >= -1e-12);
            prop_assert!(star >= diff - 1e-12 && diff >= 0.0);
            for k in kinds() {
                if let (Ok(u), Ok(v)) = (ev(k.clone(), &a, &b), ev(k.clone(), &b, &a)) {
                    prop_assert!((u - v).abs() < 1e-12, "{:?}", k);
                }
            }
        }
    }
}
