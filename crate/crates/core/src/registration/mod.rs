//! Motion recovery: Procrustes alignment, outlier rejection from the PCP
//! sparse term, shape-basis extraction, consensus refinement, and the online
//! registration pipeline that ties them together.

mod outliers;
mod pipeline;
mod procrustes;
mod refine;
mod solo;

pub use outliers::{
    basis_residual, column_support_counts, reject_outliers, shape_basis, OutlierConfig,
    OutlierSettings,
};
pub use pipeline::{
    run_pipeline, FrameRecord, InitRecord, PipelineConfig, PipelineRun, RefineSettings,
    RefinedRecord,
};
pub use procrustes::procrustes;
pub use refine::{default_refine_threshold, motion_error, refine_motion, residuals, Refinement};
pub use solo::{
    solo_init, solo_reinit, solo_update, solo_update_with_missing, FrameUpdate, Initialization,
    ReferenceFrame, SoloState, MIN_INLIERS,
};

pub(crate) use procrustes::procrustes_points;
