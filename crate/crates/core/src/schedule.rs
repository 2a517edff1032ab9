//! Variance-preserving noise schedules and time grids.
//!
//! The schedule is the linear-β VP family on the unit horizon:
//! `β(t) = β_min + t (β_max − β_min)`, `α_t = exp(−∫₀ᵗ β/2)`, `σ_t = sqrt(1 − α_t²)`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, param, Result};

/// Terminal diffusion time.
pub const HORIZON: f64 = 1.0;

pub const DEFAULT_BETA_MIN: f64 = 0.1;
pub const DEFAULT_BETA_MAX: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleFamily {
    VpLinearBeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    family: ScheduleFamily,
    beta_min: f64,
    beta_max: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            family: ScheduleFamily::VpLinearBeta,
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
        }
    }
}

/// Builds the linear-β VP schedule. Requires `0 < beta_min < beta_max`.
pub fn make_vp_schedule(beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if !(beta_min.is_finite() && beta_max.is_finite()) || beta_min <= 0.0 || beta_min >= beta_max {
        return Err(param(format!(
            "need 0 < beta_min < beta_max, got ({beta_min}, {beta_max})"
        )));
    }
    Ok(NoiseSchedule {
        family: ScheduleFamily::VpLinearBeta,
        beta_min,
        beta_max,
    })
}

impl NoiseSchedule {
    pub fn family(&self) -> ScheduleFamily {
        self.family
    }

    pub fn beta_min(&self) -> f64 {
        self.beta_min
    }

    pub fn beta_max(&self) -> f64 {
        self.beta_max
    }

    pub fn horizon(&self) -> f64 {
        HORIZON
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if t.is_finite() && (0.0..=HORIZON).contains(&t) {
            Ok(())
        } else {
            Err(domain(format!("time {t} outside [0, {HORIZON}]")))
        }
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + t * (self.beta_max - self.beta_min)
    }

    pub fn log_alpha(&self, t: f64) -> f64 {
        -0.25 * t * t * (self.beta_max - self.beta_min) - 0.5 * t * self.beta_min
    }

    pub fn alpha(&self, t: f64) -> f64 {
        self.log_alpha(t).exp()
    }

    pub fn sigma(&self, t: f64) -> f64 {
        // 1 − α² = −expm1(2 log α), accurate near t = 0
        (-(2.0 * self.log_alpha(t)).exp_m1()).max(0.0).sqrt()
    }

    pub fn alpha_sigma(&self, t: f64) -> (f64, f64) {
        (self.alpha(t), self.sigma(t))
    }

    /// Signal-to-noise ratio `α_t² / σ_t²`; infinite at `t = 0`.
    pub fn snr(&self, t: f64) -> f64 {
        let (a, s) = self.alpha_sigma(t);
        (a * a) / (s * s)
    }

    /// Half log-SNR, `λ_t = log(α_t / σ_t)`.
    pub fn lambda(&self, t: f64) -> f64 {
        self.log_alpha(t) - self.sigma(t).ln()
    }

    /// Drift `f(t) = d log α_t / dt` and squared diffusion `g²(t) = dσ_t²/dt − 2 f σ_t²`.
    pub fn drift_diffusion(&self, t: f64) -> Result<(f64, f64)> {
        self.check_time(t)?;
        let f = -0.5 * t * (self.beta_max - self.beta_min) - 0.5 * self.beta_min;
        let alpha2 = (2.0 * self.log_alpha(t)).exp();
        let sigma2 = -(2.0 * self.log_alpha(t)).exp_m1();
        let dsigma2 = -2.0 * f * alpha2;
        Ok((f, dsigma2 - 2.0 * f * sigma2))
    }
}

/// Traversal direction of a [`TimeGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Sampling, `T → t_min`.
    Descending,
    /// Encoding, `t_min → T`.
    Ascending,
}

/// Strictly monotone nodes stored in traversal order.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    direction: Direction,
}

/// `n_nodes` uniformly spaced nodes between `t_min` and `t_max`, ordered per direction.
pub fn linear_time_grid(
    n_nodes: usize,
    t_min: f64,
    t_max: f64,
    direction: Direction,
) -> Result<TimeGrid> {
    if n_nodes < 2 {
        return Err(param(format!(
            "time grid needs at least 2 nodes, got {n_nodes}"
        )));
    }
    if !(t_min >= 0.0 && t_min < t_max && t_max <= HORIZON) {
        return Err(param(format!(
            "need 0 <= t_min < t_max <= {HORIZON}, got ({t_min}, {t_max})"
        )));
    }
    let last = (n_nodes - 1) as f64;
    let ascending = (0..n_nodes).map(|i| {
        if i == n_nodes - 1 {
            t_max
        } else {
            t_min + (t_max - t_min) * (i as f64 / last)
        }
    });
    let nodes = match direction {
        Direction::Ascending => ascending.collect(),
        Direction::Descending => {
            let mut v: Vec<f64> = ascending.collect();
            v.reverse();
            v
        }
    };
    Ok(TimeGrid { nodes, direction })
}

impl TimeGrid {
    /// Nodes in traversal order.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of solver steps when traversing the grid.
    pub fn steps(&self) -> usize {
        self.nodes.len().saturating_sub(1)
    }

    /// Consecutive `(from, to)` pairs in traversal order.
    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn start(&self) -> f64 {
        self.nodes[0]
    }

    pub fn end(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Drops the leading `floor((1 − noise_level) · len)` nodes of a descending grid so
    /// sampling starts below the horizon. At least one step is always kept.
    pub fn truncate_noise_level(&self, noise_level: f64) -> Result<TimeGrid> {
        if !(noise_level > 0.0 && noise_level <= 1.0) {
            return Err(param(format!(
                "noise_level must be in (0, 1], got {noise_level}"
            )));
        }
        if self.direction != Direction::Descending {
            return Err(param("noise_level truncation applies to descending grids"));
        }
        let skip = ((1.0 - noise_level) * self.nodes.len() as f64) as usize;
        let skip = skip.min(self.nodes.len() - 2);
        Ok(TimeGrid {
            nodes: self.nodes[skip..].to_vec(),
            direction: self.direction,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn clean_endpoint() {
        let s = make_vp_schedule(0.1, 20.0).unwrap();
        assert_eq!(s.alpha(0.0), 1.0);
        assert_eq!(s.sigma(0.0), 0.0);
    }

    #[test]
    fn terminal_alpha_closed_form() {
        let s = make_vp_schedule(0.1, 20.0).unwrap();
        let expected = (-(0.25 * 19.9 + 0.05f64)).exp();
        assert_relative_eq!(s.alpha(1.0), expected, max_relative = 1e-14);
        assert_relative_eq!(s.alpha(1.0), 6.56e-3, max_relative = 2e-3);
    }

    #[test]
    fn rejects_bad_betas() {
        assert!(matches!(
            make_vp_schedule(0.0, 20.0),
            Err(crate::Error::Parameter(_))
        ));
        assert!(make_vp_schedule(5.0, 1.0).is_err());
        assert!(make_vp_schedule(1.0, 1.0).is_err());
    }

    #[test]
    fn snr_strictly_decreasing_on_grid() {
        let s = NoiseSchedule::default();
        let snrs: Vec<f64> = (1..=9).map(|i| s.snr(i as f64 / 10.0)).collect();
        assert!(snrs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn vp_identity_dense() {
        let s = NoiseSchedule::default();
        for i in 0..=10_000 {
            let t = i as f64 / 10_000.0;
            let (a, sg) = s.alpha_sigma(t);
            assert!((a * a + sg * sg - 1.0).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn drift_matches_beta() {
        let s = NoiseSchedule::default();
        let (f0, g0) = s.drift_diffusion(0.0).unwrap();
        assert_relative_eq!(f0, -0.05, max_relative = 1e-15);
        assert_relative_eq!(g0, 0.1, max_relative = 1e-12);
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            let (f, g2) = s.drift_diffusion(t).unwrap();
            assert_relative_eq!(f, -0.5 * s.beta(t), max_relative = 1e-12);
            assert_relative_eq!(g2, s.beta(t), max_relative = 1e-12);
        }
    }

    #[test]
    fn drift_matches_finite_difference() {
        let s = make_vp_schedule(0.3, 12.0).unwrap();
        let h = 1e-5;
        for i in 1..100 {
            let t = i as f64 / 100.0;
            let fd = (s.log_alpha(t + h) - s.log_alpha(t - h)) / (2.0 * h);
            let (f, _) = s.drift_diffusion(t).unwrap();
            assert_relative_eq!(fd, f, max_relative = 1e-6);
        }
    }

    #[test]
    fn drift_domain_error() {
        let s = NoiseSchedule::default();
        assert!(matches!(
            s.drift_diffusion(1.5),
            Err(crate::Error::Domain(_))
        ));
        assert!(s.drift_diffusion(-0.1).is_err());
    }

    #[test]
    fn grids() {
        let g = linear_time_grid(2, 0.0, 1.0, Direction::Descending).unwrap();
        assert_eq!(g.nodes(), &[1.0, 0.0]);
        let g = linear_time_grid(5, 0.0, 1.0, Direction::Ascending).unwrap();
        assert_eq!(g.nodes(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        assert!(linear_time_grid(1, 0.0, 1.0, Direction::Ascending).is_err());
        assert!(linear_time_grid(4, 0.5, 0.2, Direction::Ascending).is_err());
    }

    #[test]
    fn noise_level_truncation() {
        let g = linear_time_grid(20, 0.0, 1.0, Direction::Descending).unwrap();
        let spacing = 1.0 / 19.0;
        let tg = g.truncate_noise_level(0.5).unwrap();
        assert_eq!(tg.len(), 10);
        assert!((tg.start() - 0.5).abs() <= 0.5 * spacing + 1e-12);
        assert_eq!(tg.end(), 0.0);
        assert_eq!(g.truncate_noise_level(1.0).unwrap(), g);
        assert!(g.truncate_noise_level(0.0).is_err());
    }
}
