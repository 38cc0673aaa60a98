use nalgebra::Matrix3xX;

use crate::error::{Error, Result};
use crate::registration::procrustes::procrustes_points;
use crate::types::{restrict_columns, FrameObservation, RigidMotion, SupportSet};

/// Outcome of [`refine_motion`].
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub motion: RigidMotion,
    pub consensus: SupportSet,
    /// Re-estimation rounds performed.
    pub rounds: usize,
    /// Whether the consensus set reached a fixed point within `max_rounds`.
    pub converged: bool,
    pub threshold: f64,
}

/// `‖R - R0‖_F + ‖T - T0‖_2`.
pub fn motion_error(est: &RigidMotion, gt: &RigidMotion) -> f64 {
    (est.rotation - gt.rotation).norm() + (est.translation - gt.translation).norm()
}

/// Per-feature residual `‖wi_j - (R w1_j + T)‖_2`.
pub fn residuals(w1: &Matrix3xX<f64>, wi: &Matrix3xX<f64>, g: &RigidMotion) -> Vec<f64> {
    let mapped = g.apply(w1);
    (0..w1.ncols())
        .map(|j| (wi.column(j) - mapped.column(j)).norm())
        .collect()
}

/// `3 ·` median residual of `g`, floored at `1e-9 ·` the reference scale so
/// exact data keeps every feature despite rounding.
pub fn default_refine_threshold(w1: &Matrix3xX<f64>, wi: &Matrix3xX<f64>, g: &RigidMotion) -> f64 {
    let mut r = residuals(w1, wi, g);
    if r.is_empty() {
        return 0.0;
    }
    r.sort_by(f64::total_cmp);
    let n = r.len();
    let median = if n % 2 == 1 {
        r[n / 2]
    } else {
        0.5 * (r[n / 2 - 1] + r[n / 2])
    };
    (3.0 * median).max(1e-9 * w1.amax().max(wi.amax()).max(1.0))
}

/// Consensus refinement of an initial motion: select the features whose
/// residual is within `residual_thresh`, re-fit by Procrustes on them, and
/// repeat until the selection stops changing.
///
/// `residual_thresh = None` uses [`default_refine_threshold`] on `motion0`.
pub fn refine_motion(
    w1: &FrameObservation,
    wi: &FrameObservation,
    motion0: &RigidMotion,
    residual_thresh: Option<f64>,
    max_rounds: usize,
) -> Result<Refinement> {
    if max_rounds == 0 {
        return Err(Error::InvalidConfig(
            "refine: max_rounds must be at least 1".into(),
        ));
    }
    if w1.features() != wi.features() {
        return Err(Error::DimensionMismatch(format!(
            "refine: {} reference features vs {} target features",
            w1.features(),
            wi.features()
        )));
    }
    let thresh =
        residual_thresh.unwrap_or_else(|| default_refine_threshold(&w1.data, &wi.data, motion0));
    if !(thresh >= 0.0) {
        return Err(Error::InvalidConfig(
            "refine: residual threshold must be non-negative".into(),
        ));
    }
    let select = |g: &RigidMotion| -> SupportSet {
        let idx = residuals(&w1.data, &wi.data, g)
            .into_iter()
            .enumerate()
            .filter(|&(_, r)| r <= thresh)
            .map(|(j, _)| j)
            .collect();
        SupportSet::new(idx).expect("enumeration is increasing")
    };

    let mut consensus = select(motion0);
    let mut motion = *motion0;
    for round in 1..=max_rounds {
        if consensus.len() < 3 {
            return Err(Error::InsufficientInliers {
                found: consensus.len(),
                required: 3,
            });
        }
        motion = procrustes_points(
            &restrict_columns(&w1.data, &consensus)?,
            &restrict_columns(&wi.data, &consensus)?,
        )?;
        let next = select(&motion);
        if next == consensus {
            return Ok(Refinement {
                motion,
                consensus,
                rounds: round,
                converged: true,
                threshold: thresh,
            });
        }
        consensus = next;
    }
    Ok(Refinement {
        motion,
        consensus,
        rounds: max_rounds,
        converged: false,
        threshold: thresh,
    })
}
