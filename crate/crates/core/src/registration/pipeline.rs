//! Sequence driver: initialize on the first frames, register every later
//! frame against frame 1, and re-initialize on a sliding window whenever a
//! frame arrives with unobserved features.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::ProjectionConfig;
use crate::registration::outliers::OutlierSettings;
use crate::registration::refine::{default_refine_threshold, refine_motion};
use crate::registration::solo::{
    solo_init, solo_reinit, solo_update_with_missing, Initialization, ReferenceFrame,
};
use crate::rpca::PcpConfig;
use crate::types::{extract_frame, FrameObservation, RigidMotion, SupportSet, TrajectoryMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineSettings {
    /// `None` uses three times the median residual of the unrefined motion.
    pub residual_thresh: Option<f64>,
    pub max_rounds: usize,
}

impl Default for RefineSettings {
    fn default() -> Self {
        Self {
            residual_thresh: None,
            max_rounds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Frames used by the first initialization.
    pub init_frames: usize,
    /// Length of the re-initialization window. `None` reuses `init_frames`.
    pub window: Option<usize>,
    pub pcp: PcpConfig,
    pub outliers: OutlierSettings,
    pub projection: ProjectionConfig,
    pub refine: Option<RefineSettings>,
    /// Record a frame that fails to register and continue with the next one
    /// instead of aborting the run.
    pub skip_failed_frames: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            init_frames: 15,
            window: None,
            pcp: PcpConfig::default(),
            outliers: OutlierSettings::default(),
            projection: ProjectionConfig::default(),
            refine: None,
            skip_failed_frames: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitRecord {
    /// Last frame of the window the initialization ran on (1-based).
    pub frame_index: usize,
    pub window: (usize, usize),
    pub pcp_iterations: usize,
    pub pcp_converged: bool,
    pub pcp_residual: f64,
    pub inliers: SupportSet,
    pub rejected: SupportSet,
    pub basis_rank_residual: f64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedRecord {
    pub motion: RigidMotion,
    pub rounds: usize,
    pub converged: bool,
    pub consensus_count: usize,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_index: usize,
    /// Motion from the sparse projection update.
    pub motion: RigidMotion,
    /// `|I₁ ∩ I_i|`.
    pub inlier_count: usize,
    pub projection_iterations: usize,
    pub wall_time_ms: f64,
    pub reinitialized: bool,
    pub in_init_window: bool,
    pub refined: Option<RefinedRecord>,
}

impl FrameRecord {
    /// The refined motion when refinement ran, the projection motion otherwise.
    pub fn final_motion(&self) -> &RigidMotion {
        self.refined
            .as_ref()
            .map(|r| &r.motion)
            .unwrap_or(&self.motion)
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub init: InitRecord,
    pub reinits: Vec<InitRecord>,
    /// Records for frames `2..=F`, minus any in `failed`.
    pub frames: Vec<FrameRecord>,
    /// Frames that could not be registered (only with `skip_failed_frames`).
    pub failed: Vec<(usize, Error)>,
    pub initialization: Initialization,
}

fn millis(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn init_record(init: &Initialization, window: (usize, usize), wall_time_ms: f64) -> InitRecord {
    InitRecord {
        frame_index: window.1,
        window,
        pcp_iterations: init.decomposition.iterations,
        pcp_converged: init.decomposition.converged,
        pcp_residual: init.decomposition.residual,
        inliers: init.state.inliers().clone(),
        rejected: init.rejected.clone(),
        basis_rank_residual: init.basis_residual,
        wall_time_ms,
    }
}

/// Registers every frame of `x` against frame 1.
pub fn run_pipeline(x: &TrajectoryMatrix, cfg: &PipelineConfig) -> Result<PipelineRun> {
    let frames = x.frames();
    let k = cfg.init_frames.min(frames);
    if k < 2 {
        return Err(Error::InvalidConfig(format!(
            "the initialization window needs at least 2 frames, got {k}"
        )));
    }
    let window_len = cfg.window.unwrap_or(k).max(2);

    let t = Instant::now();
    let first =
        solo_init(&x.frame_window(1, k)?, &cfg.pcp, &cfg.outliers).map_err(|e| e.at_frame(1))?;
    let init = init_record(&first, (1, k), millis(t));
    let reference = first.reference.clone();

    let mut current = first.clone();
    let mut current_window = (1, k);
    let mut reinits = Vec::new();
    let mut records = Vec::with_capacity(frames.saturating_sub(1));

    let mut failed = Vec::new();

    for i in 2..=frames {
        let t = Instant::now();
        let missing = x.missing_in_frame(i);
        let mut reinitialized = false;
        if !missing.is_empty() && !(current_window.0..=current_window.1).contains(&i) {
            let lo = (i + 1).saturating_sub(window_len).max(1);
            let t_re = Instant::now();
            match solo_reinit(&x.frame_window(lo, i)?, &reference, &cfg.pcp, &cfg.outliers) {
                Ok(next) => {
                    current = next;
                    current_window = (lo, i);
                    reinits.push(init_record(&current, current_window, millis(t_re)));
                    reinitialized = true;
                }
                Err(e) if cfg.skip_failed_frames => {
                    failed.push((i, e.at_frame(i)));
                    continue;
                }
                Err(e) => return Err(e.at_frame(i)),
            }
        }

        let frame = FrameContext {
            x,
            index: i,
            missing: &missing,
            current: &current,
            window_start: current_window.0,
            reference: &reference,
        };
        match frame.register(cfg, t) {
            Ok(mut rec) => {
                rec.reinitialized = reinitialized;
                rec.in_init_window = i <= k;
                records.push(rec);
            }
            Err(e) if cfg.skip_failed_frames => failed.push((i, e.at_frame(i))),
            Err(e) => return Err(e.at_frame(i)),
        }
    }

    Ok(PipelineRun {
        init,
        reinits,
        frames: records,
        failed,
        initialization: first,
    })
}

struct FrameContext<'a> {
    x: &'a TrajectoryMatrix,
    index: usize,
    missing: &'a SupportSet,
    current: &'a Initialization,
    window_start: usize,
    reference: &'a ReferenceFrame,
}

impl FrameContext<'_> {
    fn register(&self, cfg: &PipelineConfig, t: Instant) -> Result<FrameRecord> {
        let (i, missing) = (self.index, self.missing);
        let observed = extract_frame(self.x, i)?;
        let wi = if missing.is_empty() {
            observed
        } else {
            let estimate = self.current.low_rank_frame(i + 1 - self.window_start)?;
            fill_missing(&observed, missing, &estimate)
        };
        let update = solo_update_with_missing(&self.current.state, &wi, missing, &cfg.projection)?;
        let solo_ms = millis(t);

        let refined = match &cfg.refine {
            None => None,
            Some(rs) => {
                let t_ref = Instant::now();
                let usable = self
                    .current
                    .state
                    .inliers()
                    .intersection(&self.reference.observed)
                    .difference(missing);
                let w1 = self.reference.frame.select(&usable)?;
                let w = wi.select(&usable)?;
                // residual scale from the features the update trusted
                let thresh = match rs.residual_thresh {
                    Some(v) => v,
                    None => {
                        let pos = usable.positions_of(&update.used);
                        default_refine_threshold(
                            &w1.select(&pos)?.data,
                            &w.select(&pos)?.data,
                            &update.motion,
                        )
                    }
                };
                let r = refine_motion(&w1, &w, &update.motion, Some(thresh), rs.max_rounds)?;
                Some(RefinedRecord {
                    motion: r.motion,
                    rounds: r.rounds,
                    converged: r.converged,
                    consensus_count: r.consensus.len(),
                    wall_time_ms: millis(t_ref),
                })
            }
        };

        Ok(FrameRecord {
            frame_index: i,
            motion: update.motion,
            inlier_count: update.used.len(),
            projection_iterations: update.projection.iterations,
            wall_time_ms: solo_ms,
            reinitialized: false,
            in_init_window: false,
            refined,
        })
    }
}

fn fill_missing(
    observed: &FrameObservation,
    missing: &SupportSet,
    estimate: &FrameObservation,
) -> FrameObservation {
    let mut out = observed.clone();
    for j in missing.iter() {
        out.data.set_column(j, &estimate.data.column(j));
    }
    out
}
