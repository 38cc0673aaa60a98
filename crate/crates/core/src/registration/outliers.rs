use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rpca::thin_svd;
use crate::types::{ShapeBasis, SupportSet};

/// Column-`ℓ0` outlier test applied to the sparse term of a PCP solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierConfig {
    /// A feature whose column holds more than `tau` nonzero entries is an outlier.
    pub tau: usize,
    /// Entries with magnitude at most `hard_eps` count as zero.
    pub hard_eps: f64,
}

impl OutlierConfig {
    /// `tau = ⌊0.3 · rows⌋`, `hard_eps = 1e-6 · ‖X‖_∞`.
    pub fn default_for(rows: usize, x_inf: f64) -> Self {
        Self {
            tau: (0.3 * rows as f64).floor() as usize,
            hard_eps: 1e-6 * x_inf,
        }
    }
}

/// Optional overrides; unset fields fall back to [`OutlierConfig::default_for`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutlierSettings {
    pub tau: Option<usize>,
    pub hard_eps: Option<f64>,
}

impl OutlierSettings {
    pub fn resolve(&self, rows: usize, x_inf: f64) -> Result<OutlierConfig> {
        let d = OutlierConfig::default_for(rows, x_inf);
        let cfg = OutlierConfig {
            tau: self.tau.unwrap_or(d.tau),
            hard_eps: self.hard_eps.unwrap_or(d.hard_eps),
        };
        if !(cfg.hard_eps >= 0.0) {
            return Err(Error::InvalidConfig(
                "outliers: hard_eps must be non-negative".into(),
            ));
        }
        Ok(cfg)
    }
}

/// Number of entries in each column of `e` exceeding `hard_eps` in magnitude.
pub fn column_support_counts(e: &DMatrix<f64>, hard_eps: f64) -> Vec<usize> {
    e.column_iter()
        .map(|c| c.iter().filter(|v| v.abs() > hard_eps).count())
        .collect()
}

/// Features whose hard-thresholded sparse column has at most `tau` nonzeros.
pub fn reject_outliers(e: &DMatrix<f64>, cfg: &OutlierConfig) -> SupportSet {
    let keep = column_support_counts(e, cfg.hard_eps)
        .into_iter()
        .enumerate()
        .filter(|&(_, n)| n <= cfg.tau)
        .map(|(j, _)| j)
        .collect();
    SupportSet::new(keep).expect("enumeration is increasing")
}

/// Top-4 right singular subspace of the cleaned low-rank matrix.
pub fn shape_basis(l_hat: &DMatrix<f64>) -> Result<ShapeBasis> {
    let (rows, cols) = l_hat.shape();
    if rows < 4 || cols < 4 {
        return Err(Error::DimensionMismatch(format!(
            "shape basis needs at least 4 rows and 4 features, got {rows} x {cols}"
        )));
    }
    if l_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("low-rank matrix"));
    }
    let (_, sigma, v_t) = thin_svd(l_hat, 0.0)?;
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    ShapeBasis::new(v_t.select_rows(&order[..4]))
}

/// `‖L - L V Vᵀ‖_F / ‖L‖_F`: energy of `l` outside the basis' row space.
pub fn basis_residual(l: &DMatrix<f64>, basis: &ShapeBasis) -> f64 {
    let v = basis.basis();
    let norm = l.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (l - l * v.transpose() * v).norm() / norm
}
