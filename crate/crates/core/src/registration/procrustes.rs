use nalgebra::{Matrix3, Matrix3xX, Vector3, SVD};

use crate::error::{Error, Result};
use crate::types::{center_points, FrameObservation, RigidMotion};

/// Relative size of the second singular value of the cross-covariance below
/// which the point configuration is treated as degenerate.
const DEGENERACY_RATIO: f64 = 1e-10;

/// Rigid motion `(R, T)` with `Wi ≈ R W1 + T 1ᵀ` in the least-squares sense.
pub fn procrustes(w1: &FrameObservation, wi: &FrameObservation) -> Result<RigidMotion> {
    procrustes_points(&w1.data, &wi.data)
}

pub(crate) fn procrustes_points(w1: &Matrix3xX<f64>, wi: &Matrix3xX<f64>) -> Result<RigidMotion> {
    let m = w1.ncols();
    if wi.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "procrustes: {} reference features vs {} target features",
            m,
            wi.ncols()
        )));
    }
    if m < 3 {
        return Err(Error::Degenerate(format!(
            "procrustes needs at least 3 features, got {m}"
        )));
    }
    if w1.iter().chain(wi.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("procrustes input"));
    }
    let (c1, mu1) = center_points(w1)?;
    let (ci, mui) = center_points(wi)?;
    let cross: Matrix3<f64> = &ci * c1.transpose();

    let svd = SVD::new(cross, true, true);
    let s = svd.singular_values;
    if !(s[0] > 0.0) || s[1] <= DEGENERACY_RATIO * s[0] {
        return Err(Error::Degenerate(
            "rank of the cross-covariance is below 2".into(),
        ));
    }
    let u = svd.u.ok_or(Error::SvdFailed)?;
    let v_t = svd.v_t.ok_or(Error::SvdFailed)?;
    // flip the weakest direction when U Vᵀ is a reflection
    let d = (u * v_t).determinant().signum();
    let rotation = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
    let translation = mui - rotation * mu1;
    Ok(RigidMotion::from_parts_unchecked(rotation, translation))
}
