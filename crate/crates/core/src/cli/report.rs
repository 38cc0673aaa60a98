//! Serialized outputs of `register` and `simulate`.

use serde::{Deserialize, Serialize};

use super::{CliError, Method, RegisterConfig};
use crate::registration::{InitRecord, PipelineRun};
use crate::simgen::{GroundTruth, ScenarioConfig};
use crate::types::{RigidMotion, TrajectoryMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionJson {
    /// Rows of `R`.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<&RigidMotion> for MotionJson {
    fn from(g: &RigidMotion) -> Self {
        let r = &g.rotation;
        Self {
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: [g.translation.x, g.translation.y, g.translation.z],
        }
    }
}

impl MotionJson {
    pub fn to_motion(&self) -> Result<RigidMotion, CliError> {
        let mut v = [0.0; 12];
        for i in 0..3 {
            v[3 * i..3 * i + 3].copy_from_slice(&self.rotation[i]);
        }
        v[9..].copy_from_slice(&self.translation);
        RigidMotion::from_row_major(&v).map_err(CliError::from)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitJson {
    /// First and last frame of the window (1-based, inclusive).
    pub window: [usize; 2],
    pub pcp_iterations: usize,
    pub pcp_converged: bool,
    pub pcp_residual: f64,
    pub inlier_count: usize,
    /// Rejected feature ids (1-based).
    pub rejected_outliers: Vec<usize>,
    pub basis_rank_residual: f64,
    pub wall_time_ms: f64,
}

impl From<&InitRecord> for InitJson {
    fn from(r: &InitRecord) -> Self {
        Self {
            window: [r.window.0, r.window.1],
            pcp_iterations: r.pcp_iterations,
            pcp_converged: r.pcp_converged,
            pcp_residual: r.pcp_residual,
            inlier_count: r.inliers.len(),
            rejected_outliers: r.rejected.to_one_based(),
            basis_rank_residual: r.basis_rank_residual,
            wall_time_ms: r.wall_time_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedJson {
    pub motion: MotionJson,
    pub rounds: usize,
    pub converged: bool,
    pub consensus_count: usize,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameJson {
    pub frame_index: usize,
    /// Motion before refinement.
    pub motion: MotionJson,
    pub inlier_count: usize,
    /// Sparse projection iterations (online pipeline only).
    pub projection_iterations: Option<usize>,
    /// Hypotheses evaluated (RANSAC only).
    pub ransac_iterations: Option<usize>,
    pub wall_time_ms: f64,
    pub reinitialized: bool,
    pub refined: Option<RefinedJson>,
}

impl FrameJson {
    pub fn final_motion(&self) -> &MotionJson {
        self.refined
            .as_ref()
            .map(|r| &r.motion)
            .unwrap_or(&self.motion)
    }

    pub fn total_time_ms(&self) -> f64 {
        self.wall_time_ms + self.refined.as_ref().map_or(0.0, |r| r.wall_time_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    pub frames: usize,
    pub features: usize,
    pub init_frames: usize,
    pub refine: bool,
    pub init: Option<InitJson>,
    pub reinits: Vec<InitJson>,
    /// One record per frame `2..=F`, in order.
    pub records: Vec<FrameJson>,
}

impl RunReport {
    pub(super) fn from_pipeline(
        x: &TrajectoryMatrix,
        cfg: &RegisterConfig,
        run: &PipelineRun,
    ) -> Self {
        let records = run
            .frames
            .iter()
            .map(|f| FrameJson {
                frame_index: f.frame_index,
                motion: MotionJson::from(&f.motion),
                inlier_count: f.inlier_count,
                projection_iterations: Some(f.projection_iterations),
                ransac_iterations: None,
                wall_time_ms: f.wall_time_ms,
                reinitialized: f.reinitialized,
                refined: f.refined.as_ref().map(|r| RefinedJson {
                    motion: MotionJson::from(&r.motion),
                    rounds: r.rounds,
                    converged: r.converged,
                    consensus_count: r.consensus_count,
                    wall_time_ms: r.wall_time_ms,
                }),
            })
            .collect();
        Self {
            method: Method::Solo,
            frames: x.frames(),
            features: x.features(),
            init_frames: run.init.window.1,
            refine: cfg.refine.is_some(),
            init: Some(InitJson::from(&run.init)),
            reinits: run.reinits.iter().map(InitJson::from).collect(),
            records,
        }
    }

    pub fn zero_timing(&mut self) {
        for i in self.init.iter_mut().chain(self.reinits.iter_mut()) {
            i.wall_time_ms = 0.0;
        }
        for r in &mut self.records {
            r.wall_time_ms = 0.0;
            if let Some(f) = r.refined.as_mut() {
                f.wall_time_ms = 0.0;
            }
        }
    }

    /// Final motion of every frame, frame 1 as the identity.
    pub fn final_motions(&self) -> Vec<RigidMotion> {
        let mut out = vec![RigidMotion::identity()];
        for r in &self.records {
            let m = r.final_motion();
            out.push(RigidMotion::from_parts_unchecked(
                nalgebra::Matrix3::from_fn(|i, j| m.rotation[i][j]),
                nalgebra::Vector3::from(m.translation),
            ));
        }
        out
    }
}

/// Ground-truth bundle written next to a simulated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub config: ScenarioConfig,
    /// Motion of every frame relative to frame 1.
    pub motions: Vec<MotionJson>,
    /// Feature ids of the outlier tracks (1-based).
    pub outlier_features: Vec<usize>,
    /// `[frame, feature]` pairs left unobserved (both 1-based).
    pub missing_cells: Vec<[usize; 2]>,
}

impl GroundTruthFile {
    pub fn from_truth(gt: &GroundTruth) -> Self {
        Self {
            config: gt.config.clone(),
            motions: gt.motions.iter().map(MotionJson::from).collect(),
            outlier_features: gt.outliers.to_one_based(),
            missing_cells: gt
                .missing_cells()
                .into_iter()
                .map(|(i, j)| [i, j + 1])
                .collect(),
        }
    }

    pub fn motions(&self) -> Result<Vec<RigidMotion>, CliError> {
        self.motions.iter().map(MotionJson::to_motion).collect()
    }
}
