//! Two-stage online registration: a robust PCA initialization that learns the
//! shape subspace and the inlier features, then a per-frame update that
//! sparsely projects each new frame onto the subspace and registers it
//! against the reference frame with Procrustes on the uncorrupted features.

use nalgebra::{DMatrix, Matrix3xX};

use crate::error::{Error, Result};
use crate::projection::{sparse_project, uncorrupted_set, ProjectionConfig, ProjectionResult};
use crate::registration::outliers::{
    basis_residual, reject_outliers, shape_basis, OutlierConfig, OutlierSettings,
};
use crate::registration::procrustes::procrustes_points;
use crate::rpca::{pcp, pcp_completion, DecompositionResult, PcpConfig};
use crate::types::{
    restrict_columns, FrameObservation, RigidMotion, ShapeBasis, SupportSet, TrajectoryMatrix,
};

/// Minimum number of inlier features an initialization must keep.
pub const MIN_INLIERS: usize = 5;

/// The reference frame (frame 1) every motion is expressed against.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFrame {
    /// Coordinates of all `m` features. Entries of features that were not
    /// observed hold the low-rank estimate instead.
    pub frame: FrameObservation,
    /// Features observed in the reference frame.
    pub observed: SupportSet,
    /// Features whose reference coordinates are trusted (observed and not
    /// flagged by the sparse term).
    pub uncorrupted: SupportSet,
}

/// State carried between frames. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SoloState {
    basis: ShapeBasis,
    inliers: SupportSet,
    reference: FrameObservation,
    reference_uncorrupted: SupportSet,
    total_features: usize,
}

impl SoloState {
    /// Assembles a state from a basis over `inliers` and a full-width reference.
    pub fn new(basis: ShapeBasis, inliers: SupportSet, reference: &ReferenceFrame) -> Result<Self> {
        let total_features = reference.frame.features();
        inliers.check_bounds(total_features)?;
        if basis.features() != inliers.len() {
            return Err(Error::DimensionMismatch(format!(
                "shape basis covers {} features but the inlier set has {}",
                basis.features(),
                inliers.len()
            )));
        }
        Ok(Self {
            reference: reference.frame.select(&inliers)?,
            reference_uncorrupted: reference.uncorrupted.intersection(&inliers),
            basis,
            inliers,
            total_features,
        })
    }

    pub fn basis(&self) -> &ShapeBasis {
        &self.basis
    }

    /// Inlier features `I` (0-based, global indices).
    pub fn inliers(&self) -> &SupportSet {
        &self.inliers
    }

    /// Reference frame restricted to `I`.
    pub fn reference(&self) -> &FrameObservation {
        &self.reference
    }

    /// `I₁`: trusted reference features, a subset of `I` (global indices).
    pub fn reference_uncorrupted(&self) -> &SupportSet {
        &self.reference_uncorrupted
    }

    pub fn total_features(&self) -> usize {
        self.total_features
    }

    /// Copy with a different `I₁`, for testing alternative policies.
    pub fn with_reference_uncorrupted(&self, set: SupportSet) -> Self {
        Self {
            reference_uncorrupted: set.intersection(&self.inliers),
            ..self.clone()
        }
    }
}

/// Everything produced by an initialization.
#[derive(Debug, Clone)]
pub struct Initialization {
    pub state: SoloState,
    pub decomposition: DecompositionResult,
    pub outlier_config: OutlierConfig,
    /// Features that took part in the decomposition (observed at least once).
    pub candidates: SupportSet,
    /// Features rejected as outlying tracks or never observed.
    pub rejected: SupportSet,
    /// `‖L̂ - L̂ V Vᵀ‖_F / ‖L̂‖_F` for the cleaned low-rank matrix.
    pub basis_residual: f64,
    pub reference: ReferenceFrame,
}

impl Initialization {
    /// Frame `i` (1-based within the initialization window) of the low-rank
    /// estimate, scattered back to all `m` features. Features outside the
    /// candidate set are zero.
    pub fn low_rank_frame(&self, i: usize) -> Result<FrameObservation> {
        let l = &self.decomposition.low_rank;
        if i == 0 || 3 * i > l.nrows() {
            return Err(Error::FrameOutOfRange {
                index: i,
                frames: l.nrows() / 3,
            });
        }
        let mut out = Matrix3xX::zeros(self.state.total_features);
        for (k, j) in self.candidates.iter().enumerate() {
            for r in 0..3 {
                out[(r, j)] = l[(3 * (i - 1) + r, k)];
            }
        }
        Ok(FrameObservation::new(out, i))
    }

    /// Inlier features observed in window frame `i` whose sparse entries in
    /// that frame are all within `hard_eps` (global indices).
    pub fn uncorrupted_in_frame(&self, i: usize, x: &TrajectoryMatrix) -> Result<SupportSet> {
        let e = &self.decomposition.sparse;
        if i == 0 || 3 * i > e.nrows() {
            return Err(Error::FrameOutOfRange {
                index: i,
                frames: e.nrows() / 3,
            });
        }
        let eps = self.outlier_config.hard_eps;
        let clean = self
            .candidates
            .iter()
            .enumerate()
            .filter(|&(k, j)| {
                self.state.inliers.contains(j)
                    && x.is_observed(i, j)
                    && (0..3).all(|r| e[(3 * (i - 1) + r, k)].abs() <= eps)
            })
            .map(|(_, j)| j)
            .collect();
        SupportSet::new(clean)
    }
}

/// Learns the shape subspace from the initial window `x`. Frame 1 of `x` is
/// the reference frame. Masked input is decomposed by matrix completion.
pub fn solo_init(
    x: &TrajectoryMatrix,
    pcp_cfg: &PcpConfig,
    outliers: &OutlierSettings,
) -> Result<Initialization> {
    initialize(x, None, pcp_cfg, outliers)
}

/// Re-learns the subspace on a new window while keeping an existing reference
/// frame, e.g. after new tracks appear or data goes missing.
pub fn solo_reinit(
    window: &TrajectoryMatrix,
    reference: &ReferenceFrame,
    pcp_cfg: &PcpConfig,
    outliers: &OutlierSettings,
) -> Result<Initialization> {
    if reference.frame.features() != window.features() {
        return Err(Error::DimensionMismatch(format!(
            "reference frame has {} features, window has {}",
            reference.frame.features(),
            window.features()
        )));
    }
    initialize(window, Some(reference), pcp_cfg, outliers)
}

fn initialize(
    x: &TrajectoryMatrix,
    reference: Option<&ReferenceFrame>,
    pcp_cfg: &PcpConfig,
    outliers: &OutlierSettings,
) -> Result<Initialization> {
    let (frames, m) = (x.frames(), x.features());
    if frames < 2 {
        return Err(Error::InvalidConfig(format!(
            "initialization needs at least 2 frames, got {frames}"
        )));
    }
    if m < MIN_INLIERS {
        return Err(Error::InitializationFailed {
            inliers: m,
            required: MIN_INLIERS,
        });
    }

    let candidates = SupportSet::new(
        (0..m)
            .filter(|&j| (1..=frames).any(|i| x.is_observed(i, j)))
            .collect(),
    )?;
    let sub = x.select_features(&candidates)?;
    let decomposition = if sub.is_complete() {
        pcp(&sub, pcp_cfg)?
    } else {
        pcp_completion(&sub, pcp_cfg)?
    };

    let outlier_config = outliers.resolve(sub.data().nrows(), sub.data().amax())?;
    let kept_local = reject_outliers(&decomposition.sparse, &outlier_config);
    let inliers = candidates.compose(&kept_local)?;
    if inliers.len() < MIN_INLIERS {
        return Err(Error::InitializationFailed {
            inliers: inliers.len(),
            required: MIN_INLIERS,
        });
    }

    let l_hat: DMatrix<f64> = restrict_columns(&decomposition.low_rank, &kept_local)?;
    let basis = shape_basis(&l_hat)?;
    let residual = basis_residual(&l_hat, &basis);

    let reference = match reference {
        Some(r) => r.clone(),
        None => reference_from_window(x, &candidates, &decomposition, outlier_config.hard_eps),
    };
    let state = SoloState::new(basis, inliers.clone(), &reference)?;

    Ok(Initialization {
        state,
        rejected: inliers.complement(m),
        decomposition,
        outlier_config,
        candidates,
        basis_residual: residual,
        reference,
    })
}

fn reference_from_window(
    x: &TrajectoryMatrix,
    candidates: &SupportSet,
    dec: &DecompositionResult,
    hard_eps: f64,
) -> ReferenceFrame {
    let m = x.features();
    let mut data: Matrix3xX<f64> = x.data().fixed_rows::<3>(0).into_owned();
    let mut trusted = Vec::new();
    for (k, j) in candidates.iter().enumerate() {
        if x.is_observed(1, j) {
            if (0..3).all(|r| dec.sparse[(r, k)].abs() <= hard_eps) {
                trusted.push(j);
            }
        } else {
            for r in 0..3 {
                data[(r, j)] = dec.low_rank[(r, k)];
            }
        }
    }
    debug_assert_eq!(data.ncols(), m);
    ReferenceFrame {
        frame: FrameObservation::new(data, 1),
        observed: SupportSet::new((0..m).filter(|&j| x.is_observed(1, j)).collect())
            .expect("increasing"),
        uncorrupted: SupportSet::new(trusted).expect("candidates are increasing"),
    }
}

/// Result of registering one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameUpdate {
    pub motion: RigidMotion,
    /// `I_i`: features of the frame found uncorrupted (global indices, ⊆ `I`).
    pub uncorrupted: SupportSet,
    /// `I₁ ∩ I_i`: the features the motion was estimated from.
    pub used: SupportSet,
    pub projection: ProjectionResult,
}

/// Registers frame `wi` (all `m` features) against the reference.
pub fn solo_update(
    state: &SoloState,
    wi: &FrameObservation,
    cfg: &ProjectionConfig,
) -> Result<FrameUpdate> {
    solo_update_with_missing(state, wi, &SupportSet::empty(), cfg)
}

/// [`solo_update`] for a frame in which the features in `missing` were not
/// observed. Their entries in `wi` must hold finite placeholder values (for
/// example a low-rank completion); they are projected but never used for the
/// motion estimate.
pub fn solo_update_with_missing(
    state: &SoloState,
    wi: &FrameObservation,
    missing: &SupportSet,
    cfg: &ProjectionConfig,
) -> Result<FrameUpdate> {
    if wi.features() != state.total_features {
        return Err(Error::DimensionMismatch(format!(
            "frame {} has {} features, the state expects {}",
            wi.frame_index,
            wi.features(),
            state.total_features
        )));
    }
    let w = wi.select(&state.inliers)?;
    let projection = sparse_project(&w, &state.basis, cfg)?;
    let eps = cfg.corruption_eps(w.data.amax());
    let local = uncorrupted_set(&projection.sparse, eps);
    let uncorrupted = state.inliers.compose(&local)?.difference(missing);
    let used = state.reference_uncorrupted.intersection(&uncorrupted);
    if used.len() < 3 {
        return Err(Error::InsufficientInliers {
            found: used.len(),
            required: 3,
        });
    }

    let pos = state.inliers.positions_of(&used);
    let motion = procrustes_points(
        &restrict_columns(&state.reference.data, &pos)?,
        &restrict_columns(&w.data, &pos)?,
    )?;
    Ok(FrameUpdate {
        motion,
        uncorrupted,
        used,
        projection,
    })
}
