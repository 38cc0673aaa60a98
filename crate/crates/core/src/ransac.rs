//! Frame-by-frame RANSAC baseline for rigid registration.

use rand::{seq::index::sample, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registration::{procrustes_points, residuals};
use crate::types::{restrict_columns, FrameObservation, RigidMotion, SupportSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    /// Features per hypothesis.
    pub min_set: usize,
    /// Residual bound (meters) for a feature to join the consensus.
    pub inlier_thresh: f64,
    /// Target probability of drawing at least one all-inlier sample.
    pub confidence: f64,
    /// Hard cap on counted hypotheses.
    pub max_iters: usize,
    pub seed: u64,
    /// When set, fixes the hypothesis budget from this known inlier ratio
    /// instead of adapting it to the running best consensus.
    pub oracle_inlier_ratio: Option<f64>,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            min_set: 4,
            inlier_thresh: 0.02,
            confidence: 0.99,
            max_iters: 10_000,
            seed: 0,
            oracle_inlier_ratio: None,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("ransac: {msg}")));
        if self.min_set < 3 {
            return bad("min_set must be at least 3");
        }
        if !(self.inlier_thresh > 0.0) {
            return bad("inlier_thresh must be positive");
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad("confidence must lie in (0, 1)");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if let Some(w) = self.oracle_inlier_ratio {
            if !(w > 0.0 && w <= 1.0) {
                return bad("oracle_inlier_ratio must lie in (0, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacOutcome {
    pub motion: RigidMotion,
    pub consensus: SupportSet,
    /// Hypotheses evaluated (degenerate samples excluded).
    pub iterations: usize,
}

/// Hypotheses needed to draw an all-inlier sample of size `k` with
/// probability `confidence` when the inlier ratio is `w`.
pub fn required_iterations(confidence: f64, w: f64, k: usize) -> f64 {
    let good = w.powi(k as i32);
    if good >= 1.0 {
        return 1.0;
    }
    if good <= 0.0 {
        return f64::INFINITY;
    }
    ((1.0 - confidence).ln() / (1.0 - good).ln())
        .ceil()
        .max(1.0)
}

/// Hypothesize-and-verify registration of `wi` against `w1`.
pub fn ransac_register(
    w1: &FrameObservation,
    wi: &FrameObservation,
    cfg: &RansacConfig,
) -> Result<RansacOutcome> {
    cfg.validate()?;
    let m = w1.features();
    if wi.features() != m {
        return Err(Error::DimensionMismatch(format!(
            "ransac: {} reference features vs {} target features",
            m,
            wi.features()
        )));
    }
    if m < cfg.min_set {
        return Err(Error::NoConsensus {
            best: 0,
            required: cfg.min_set,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let consensus_of = |g: &RigidMotion| -> SupportSet {
        let idx = residuals(&w1.data, &wi.data, g)
            .into_iter()
            .enumerate()
            .filter(|&(_, r)| r <= cfg.inlier_thresh)
            .map(|(j, _)| j)
            .collect();
        SupportSet::new(idx).expect("enumeration is increasing")
    };

    let mut budget = match cfg.oracle_inlier_ratio {
        Some(w) => required_iterations(cfg.confidence, w, cfg.min_set).min(cfg.max_iters as f64),
        None => cfg.max_iters as f64,
    };
    let mut best: Option<SupportSet> = None;
    let mut iterations = 0usize;
    let mut draws = 0usize;
    let max_draws = cfg.max_iters.saturating_mul(10);

    while (iterations as f64) < budget && draws < max_draws {
        draws += 1;
        let mut picked = sample(&mut rng, m, cfg.min_set).into_vec();
        picked.sort_unstable();
        let set = SupportSet::new(picked).expect("sampled without replacement");
        let hypothesis = match procrustes_points(
            &restrict_columns(&w1.data, &set)?,
            &restrict_columns(&wi.data, &set)?,
        ) {
            Ok(g) => g,
            Err(Error::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        };
        iterations += 1;
        let consensus = consensus_of(&hypothesis);
        if best.as_ref().is_none_or(|b| consensus.len() > b.len()) {
            if cfg.oracle_inlier_ratio.is_none() {
                let w = consensus.len() as f64 / m as f64;
                budget =
                    required_iterations(cfg.confidence, w, cfg.min_set).min(cfg.max_iters as f64);
            }
            best = Some(consensus);
        }
    }

    let best = best.unwrap_or_default();
    if best.len() < cfg.min_set {
        return Err(Error::NoConsensus {
            best: best.len(),
            required: cfg.min_set,
        });
    }
    let motion = procrustes_points(
        &restrict_columns(&w1.data, &best)?,
        &restrict_columns(&wi.data, &best)?,
    )?;
    Ok(RansacOutcome {
        motion,
        consensus: best,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::motion_error;
    use crate::simgen::random_rotation;
    use nalgebra::{Matrix3xX, Vector3};
    use rand::Rng;

    fn pair(
        m: usize,
        corrupt: usize,
        seed: u64,
    ) -> (FrameObservation, FrameObservation, RigidMotion) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w1 = Matrix3xX::from_fn(m, |_, _| rng.random_range(-0.5..0.5));
        let g = RigidMotion::new(
            random_rotation(0.3, &mut rng),
            Vector3::new(0.05, 0.02, -0.1),
        )
        .unwrap();
        let mut wi = g.apply(&w1);
        for j in 0..corrupt {
            for r in 0..3 {
                wi[(r, j)] += rng.random_range(0.5..1.0);
            }
        }
        (
            FrameObservation::new(w1, 1),
            FrameObservation::new(wi, 2),
            g,
        )
    }

    #[test]
    fn budget_formula() {
        assert_eq!(required_iterations(0.99, 1.0, 4), 1.0);
        // log(0.01) / log(1 - 0.5^4) = 71.1
        assert_eq!(required_iterations(0.99, 0.5, 4), 72.0);
        assert!(required_iterations(0.99, 0.0, 4).is_infinite());
    }

    #[test]
    fn clean_pair_full_consensus() {
        let (w1, wi, g) = pair(50, 0, 1);
        let out = ransac_register(&w1, &wi, &RansacConfig::default()).unwrap();
        assert_eq!(out.consensus, SupportSet::all(50));
        assert!(motion_error(&out.motion, &g) < 1e-10);
        assert!(out.iterations <= 2);
    }

    #[test]
    fn corrupted_pair() {
        let (w1, wi, g) = pair(60, 18, 2);
        let out = ransac_register(&w1, &wi, &RansacConfig::default()).unwrap();
        assert_eq!(out.consensus, SupportSet::new((18..60).collect()).unwrap());
        assert!(motion_error(&out.motion, &g) < 1e-10);
    }

    #[test]
    fn deterministic_given_seed() {
        let (w1, wi, _) = pair(60, 25, 3);
        let cfg = RansacConfig {
            seed: 17,
            ..Default::default()
        };
        let a = ransac_register(&w1, &wi, &cfg).unwrap();
        let b = ransac_register(&w1, &wi, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unrelated_clouds_have_no_consensus() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w1 = Matrix3xX::from_fn(60, |_, _| rng.random_range(-0.5..0.5));
        let wi = Matrix3xX::from_fn(60, |_, _| rng.random_range(-0.5..0.5));
        let cfg = RansacConfig {
            max_iters: 500,
            ..Default::default()
        };
        let out = ransac_register(
            &FrameObservation::new(w1, 1),
            &FrameObservation::new(wi, 2),
            &cfg,
        );
        assert!(matches!(out, Err(Error::NoConsensus { .. })), "{out:?}");
    }

    #[test]
    fn oracle_budget_is_fixed() {
        let (w1, wi, _) = pair(40, 10, 5);
        let cfg = RansacConfig {
            oracle_inlier_ratio: Some(0.75),
            ..Default::default()
        };
        let out = ransac_register(&w1, &wi, &cfg).unwrap();
        assert_eq!(out.iterations as f64, required_iterations(0.99, 0.75, 4));
    }

    #[test]
    fn invalid_config() {
        let (w1, wi, _) = pair(10, 0, 6);
        for cfg in [
            RansacConfig {
                min_set: 2,
                ..Default::default()
            },
            RansacConfig {
                confidence: 1.0,
                ..Default::default()
            },
            RansacConfig {
                inlier_thresh: 0.0,
                ..Default::default()
            },
        ] {
            assert!(matches!(
                ransac_register(&w1, &wi, &cfg),
                Err(Error::InvalidConfig(_))
            ));
        }
    }
}
