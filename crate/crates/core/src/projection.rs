//! Sparse projection of one frame onto the learned shape subspace.
//!
//! Solves `min ‖E‖_1  s.t.  W = A Vᵀ + E` by the inexact augmented Lagrangian
//! method. Because `Vᵀ` has orthonormal rows the `A` step is the closed form
//! `(W - E + Y/μ) V`, so an iteration costs two small matrix products and one
//! soft-thresholding pass. No singular values are computed.

use nalgebra::{DMatrix, Matrix3x4, Matrix3xX};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rpca::shrink;
use crate::types::{FrameObservation, ShapeBasis, SupportSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectionConfig {
    /// Relative feasibility tolerance on `‖W - AVᵀ - E‖_F / ‖W‖_F`.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial penalty. `None` selects `1.25 / ‖W‖_2`.
    pub mu0: Option<f64>,
    pub rho: f64,
    /// Entries of `E` at most `max(eps_rel · ‖W‖_∞, eps_abs)` in magnitude count
    /// as uncorrupted.
    pub eps_rel: f64,
    pub eps_abs: f64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iter: 200,
            mu0: None,
            rho: 1.6,
            eps_rel: 1e-6,
            eps_abs: 0.0,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("projection: {msg}")));
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad("tol must lie in (0, 1)");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive");
        }
        if let Some(mu) = self.mu0 {
            if !(mu > 0.0 && mu.is_finite()) {
                return bad("mu0 must be positive");
            }
        }
        if !(self.rho > 1.0 && self.rho.is_finite()) {
            return bad("rho must exceed 1");
        }
        if !(self.eps_rel >= 0.0 && self.eps_abs >= 0.0) {
            return bad("corruption thresholds must be non-negative");
        }
        Ok(())
    }

    /// Corruption threshold for a frame whose largest magnitude is `w_inf`.
    pub fn corruption_eps(&self, w_inf: f64) -> f64 {
        (self.eps_rel * w_inf).max(self.eps_abs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    /// Subspace coefficients, `3 x 4`.
    pub coefficients: Matrix3x4<f64>,
    /// Sparse error, `3 x m`.
    pub sparse: Matrix3xX<f64>,
    /// Lagrange multipliers at termination.
    pub multipliers: Matrix3xX<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

impl ProjectionResult {
    /// `A Vᵀ`.
    pub fn projected(&self, basis: &ShapeBasis) -> Matrix3xX<f64> {
        multiply_basis(&self.coefficients, basis.basis())
    }
}

fn multiply_basis(a: &Matrix3x4<f64>, basis: &DMatrix<f64>) -> Matrix3xX<f64> {
    let m = basis.ncols();
    let mut out = Matrix3xX::zeros(m);
    for j in 0..m {
        let col = basis.column(j);
        for r in 0..3 {
            out[(r, j)] =
                a[(r, 0)] * col[0] + a[(r, 1)] * col[1] + a[(r, 2)] * col[2] + a[(r, 3)] * col[3];
        }
    }
    out
}

fn multiply_basis_t(w: &Matrix3xX<f64>, basis: &DMatrix<f64>) -> Matrix3x4<f64> {
    let mut out = Matrix3x4::zeros();
    for j in 0..w.ncols() {
        let col = basis.column(j);
        for r in 0..3 {
            let v = w[(r, j)];
            for k in 0..4 {
                out[(r, k)] += v * col[k];
            }
        }
    }
    out
}

/// Projects `w` onto the row space of `basis` while absorbing gross sparse
/// corruption into `E`.
pub fn sparse_project(
    w: &FrameObservation,
    basis: &ShapeBasis,
    cfg: &ProjectionConfig,
) -> Result<ProjectionResult> {
    cfg.validate()?;
    let v = basis.basis();
    let m = w.features();
    if v.ncols() != m {
        return Err(Error::DimensionMismatch(format!(
            "frame has {m} features but the shape basis has {}",
            v.ncols()
        )));
    }
    let w = &w.data;
    if w.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("projected frame"));
    }

    let w_fro = w.norm();
    if w_fro == 0.0 {
        return Ok(ProjectionResult {
            coefficients: Matrix3x4::zeros(),
            sparse: Matrix3xX::zeros(m),
            multipliers: Matrix3xX::zeros(m),
            iterations: 0,
            residual: 0.0,
            converged: true,
        });
    }

    let w_two = nalgebra::SVD::new_unordered(w.clone(), false, false)
        .singular_values
        .max();
    let mut mu = cfg.mu0.unwrap_or(1.25 / w_two);
    let mu_max = mu * 1e10;

    let mut a = Matrix3x4::zeros();
    let mut e = Matrix3xX::zeros(m);
    let mut y = Matrix3xX::zeros(m);
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let inv_mu = 1.0 / mu;

        let target = w - &e + &y * inv_mu;
        a = multiply_basis_t(&target, v);
        let av = multiply_basis(&a, v);

        for j in 0..m {
            for r in 0..3 {
                e[(r, j)] = shrink(w[(r, j)] - av[(r, j)] + y[(r, j)] * inv_mu, inv_mu);
            }
        }
        let gap = w - &av - &e;
        y += &gap * mu;
        mu = (mu * cfg.rho).min(mu_max);

        residual = gap.norm() / w_fro;
        if residual <= cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(ProjectionResult {
        coefficients: a,
        sparse: e,
        multipliers: y,
        iterations,
        residual,
        converged,
    })
}

/// Features whose three entries of `e` all have magnitude at most `eps`.
pub fn uncorrupted_set(e: &Matrix3xX<f64>, eps: f64) -> SupportSet {
    let idx = e
        .column_iter()
        .enumerate()
        .filter(|(_, c)| c.iter().all(|v| v.abs() <= eps))
        .map(|(j, _)| j)
        .collect();
    SupportSet::new(idx).expect("enumeration is increasing")
}
