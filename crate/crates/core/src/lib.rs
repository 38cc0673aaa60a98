//! Online rigid-body motion registration from 3-D feature tracks.
//!
//! A window of frames is split by principal component pursuit into a rank-4
//! trajectory and a sparse corruption term. The low-rank part yields a shape
//! basis and the set of reliable features. Each later frame is sparsely
//! projected onto that basis, and its motion relative to frame 1 is recovered
//! by Procrustes alignment on the features the projection found clean.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod projection;
pub mod ransac;
pub mod registration;
pub mod rpca;
pub mod simgen;
pub mod types;

pub use error::{Error, Result};
pub use projection::{sparse_project, uncorrupted_set, ProjectionConfig, ProjectionResult};
pub use ransac::{ransac_register, RansacConfig, RansacOutcome};
pub use registration::{
    motion_error, procrustes, refine_motion, reject_outliers, run_pipeline, shape_basis, solo_init,
    solo_reinit, solo_update, OutlierConfig, OutlierSettings, PipelineConfig, SoloState,
};
pub use rpca::{pcp, pcp_completion, shrink, svt, DecompositionResult, PcpConfig};
pub use types::{
    center, extract_frame, restrict_columns, stack_frames, FrameObservation, RigidMotion,
    ShapeBasis, SupportSet, TrajectoryMatrix,
};
