//! Principal component pursuit by the inexact augmented Lagrangian method.
//!
//! Splits an observation matrix `X` into a low-rank part `L` and a sparse part
//! `E` by minimizing `‖L‖_* + λ‖E‖_1` subject to `L + E = X`. The masked
//! variant only enforces the constraint on observed entries and fills the
//! unobserved entries of `L` (low-rank matrix completion).
//!
//! Dense Gaussian noise is not modelled as a separate block; whatever remains
//! of it after the solve lives in the residual `X - L - E`, which the solver
//! drives below `tol` relative to `‖X‖_F`.

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::TrajectoryMatrix;

/// Solver settings for [`pcp`] and [`pcp_completion`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcpConfig {
    /// Weight of the `ℓ1` term. `None` selects [`choose_lambda`].
    pub lambda: Option<f64>,
    /// Relative stopping tolerance on `‖X - L - E‖_F / ‖X‖_F`.
    pub tol: f64,
    pub max_iter: usize,
    /// Initial penalty. `None` selects `1.25 / ‖X‖_2`.
    pub mu0: Option<f64>,
    /// Penalty growth factor, `> 1`.
    pub rho: f64,
}

impl Default for PcpConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            tol: 1e-7,
            max_iter: 500,
            mu0: None,
            rho: 1.5,
        }
    }
}

impl PcpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("pcp: {msg}")));
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return bad("lambda must be positive");
            }
        }
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
        Ok(())
    }
}

/// Output of a PCP solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionResult {
    pub low_rank: DMatrix<f64>,
    pub sparse: DMatrix<f64>,
    pub iterations: usize,
    /// Final `‖P(X - L - E)‖_F / ‖P(X)‖_F` over the observed entries.
    pub residual: f64,
    pub converged: bool,
    /// Relative residual after each iteration.
    pub residual_history: Vec<f64>,
}

/// Soft thresholding: `sign(x) · max(|x| - tau, 0)`.
#[inline]
pub fn shrink(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

/// Elementwise [`shrink`].
pub fn shrink_matrix(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    m.map(|v| shrink(v, tau))
}

/// Singular value thresholding: `U · shrink(Σ, tau) · Vᵀ`.
pub fn svt(m: &DMatrix<f64>, tau: f64) -> Result<DMatrix<f64>> {
    svt_with_rank(m, tau).map(|(out, _)| out)
}

/// [`svt`] that also reports how many singular values survived.
pub fn svt_with_rank(m: &DMatrix<f64>, tau: f64) -> Result<(DMatrix<f64>, usize)> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Ok((m.clone(), 0));
    }
    let (u, sigma, v_t) = thin_svd(m, tau)?;
    let keep: Vec<usize> = (0..sigma.len()).filter(|&k| sigma[k] > tau).collect();
    let mut left = DMatrix::zeros(r, keep.len());
    let mut right = DMatrix::zeros(keep.len(), c);
    for (dst, &k) in keep.iter().enumerate() {
        left.set_column(dst, &(u.column(k) * (sigma[k] - tau)));
        right.set_row(dst, &v_t.row(k));
    }
    Ok((left * right, keep.len()))
}

/// Thin SVD `(U, σ, Vᵀ)` in no particular order. Every triplet with
/// `σ > check_above` is verified (`‖M v - σ u‖` small). nalgebra's bidiagonal
/// iteration occasionally returns a wrong leading triplet on matrices with a
/// cluster of zero singular values; those inputs fall back to one-sided Jacobi.
pub(crate) fn thin_svd(
    m: &DMatrix<f64>,
    check_above: f64,
) -> Result<(DMatrix<f64>, DVector<f64>, DMatrix<f64>)> {
    let direct = SVD::try_new_unordered(m.clone(), true, true, f64::EPSILON, 0)
        .and_then(|svd| Some((svd.u?, svd.singular_values, svd.v_t?)));
    if let Some(out) = direct.filter(|out| triplets_ok(m, out, check_above)) {
        return Ok(out);
    }
    let out = if m.nrows() >= m.ncols() {
        jacobi_svd(m)
    } else {
        let (u, s, v_t) = jacobi_svd(&m.transpose());
        (v_t.transpose(), s, u.transpose())
    };
    Some(out)
        .filter(|out| triplets_ok(m, out, check_above))
        .ok_or(Error::SvdFailed)
}

/// One-sided (Hestenes) Jacobi SVD of a matrix with at least as many rows as
/// columns.
fn jacobi_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let n = m.ncols();
    let mut a = m.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dot(&a.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut a, &mut v] {
                    for r in 0..mat.nrows() {
                        let (xp, xq) = (mat[(r, p)], mat[(r, q)]);
                        mat[(r, p)] = c * xp - s * xq;
                        mat[(r, q)] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma = DVector::from_fn(n, |k, _| a.column(k).norm());
    for k in 0..n {
        if sigma[k] > 0.0 {
            a.column_mut(k).unscale_mut(sigma[k]);
        }
    }
    (a, sigma, v.transpose())
}

fn triplets_ok(
    m: &DMatrix<f64>,
    (u, sigma, v_t): &(DMatrix<f64>, DVector<f64>, DMatrix<f64>),
    above: f64,
) -> bool {
    let scale = sigma.amax();
    if !scale.is_finite() {
        return false;
    }
    let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
    (0..sigma.len())
        .filter(|&k| sigma[k] > above)
        .all(|k| (m * v_t.row(k).transpose() - u.column(k) * sigma[k]).norm() <= tol)
}

/// Default `ℓ1` weight, `1 / √max(n, m)`.
pub fn choose_lambda(n: usize, m: usize) -> f64 {
    1.0 / (n.max(m).max(1) as f64).sqrt()
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values_unordered().max()
}

/// Robust PCA of a complete matrix.
pub fn pcp(x: &TrajectoryMatrix, cfg: &PcpConfig) -> Result<DecompositionResult> {
    if x.mask().is_some() {
        return Err(Error::InvalidConfig(
            "pcp requires complete data; use pcp_completion for masked matrices".into(),
        ));
    }
    pcp_matrix(x.data(), cfg)
}

/// Robust PCA with missing entries. `x` must carry a mask; a complete matrix
/// is accepted and solved as plain PCP.
pub fn pcp_completion(x: &TrajectoryMatrix, cfg: &PcpConfig) -> Result<DecompositionResult> {
    match x.mask() {
        Some(mask) => pcp_masked(x.data(), mask, cfg),
        None => pcp_matrix(x.data(), cfg),
    }
}

/// [`pcp`] on a bare matrix.
pub fn pcp_matrix(x: &DMatrix<f64>, cfg: &PcpConfig) -> Result<DecompositionResult> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pcp input"));
    }
    inexact_alm(x, None, cfg)
}

/// [`pcp_completion`] on a bare matrix and an observation mask of the same shape.
pub fn pcp_masked(
    x: &DMatrix<f64>,
    mask: &DMatrix<bool>,
    cfg: &PcpConfig,
) -> Result<DecompositionResult> {
    if mask.shape() != x.shape() {
        return Err(Error::InvalidMask(format!(
            "mask shape {:?} differs from data shape {:?}",
            mask.shape(),
            x.shape()
        )));
    }
    for (i, row) in mask.row_iter().enumerate() {
        if !row.iter().any(|&b| b) {
            return Err(Error::IllPosedCompletion(format!(
                "row {} has no observed entry",
                i + 1
            )));
        }
    }
    for (j, col) in mask.column_iter().enumerate() {
        if !col.iter().any(|&b| b) {
            return Err(Error::IllPosedCompletion(format!(
                "column {} has no observed entry",
                j + 1
            )));
        }
    }
    if x.iter().zip(mask.iter()).any(|(v, &o)| o && !v.is_finite()) {
        return Err(Error::NonFinite("pcp input"));
    }
    let observed = x.zip_map(mask, |v, o| if o { v } else { 0.0 });
    inexact_alm(&observed, Some(mask), cfg)
}

fn inexact_alm(
    x: &DMatrix<f64>,
    mask: Option<&DMatrix<bool>>,
    cfg: &PcpConfig,
) -> Result<DecompositionResult> {
    cfg.validate()?;
    let (n, m) = x.shape();
    if n == 0 || m == 0 {
        return Err(Error::EmptyInput("pcp input"));
    }
    let x_fro = x.norm();
    if x_fro == 0.0 {
        return Ok(DecompositionResult {
            low_rank: DMatrix::zeros(n, m),
            sparse: DMatrix::zeros(n, m),
            iterations: 0,
            residual: 0.0,
            converged: true,
            residual_history: Vec::new(),
        });
    }

    let lambda = cfg.lambda.unwrap_or_else(|| choose_lambda(n, m));
    let x_two = spectral_norm(x);
    let x_inf = x.amax();
    let mut y = x / x_two.max(x_inf / lambda);
    let mu0 = cfg.mu0.unwrap_or(1.25 / x_two);
    let mu_max = mu0 * 1e10;
    let mut mu = mu0;

    let mut low_rank = DMatrix::zeros(n, m);
    let mut sparse = DMatrix::zeros(n, m);
    let mut history = Vec::new();
    let mut residual = f64::INFINITY;
    let mut converged = false;

    for _ in 0..cfg.max_iter {
        let inv_mu = 1.0 / mu;

        // L-step; unobserved entries carry the previous low-rank estimate.
        let mut target = x - &sparse + &y * inv_mu;
        if let Some(mask) = mask {
            for ((t, &o), &l) in target.iter_mut().zip(mask.iter()).zip(low_rank.iter()) {
                if !o {
                    *t = l;
                }
            }
        }
        low_rank = svt(&target, inv_mu)?;

        // E-step, supported on the observed entries only.
        let thresh = lambda * inv_mu;
        sparse = x - &low_rank + &y * inv_mu;
        sparse.apply(|v| *v = shrink(*v, thresh));
        let mut gap = x - &low_rank - &sparse;
        if let Some(mask) = mask {
            for ((e, g), &o) in sparse.iter_mut().zip(gap.iter_mut()).zip(mask.iter()) {
                if !o {
                    *e = 0.0;
                    *g = 0.0;
                }
            }
        }

        y += &gap * mu;
        mu = (mu * cfg.rho).min(mu_max);

        residual = gap.norm() / x_fro;
        history.push(residual);
        if residual <= cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(DecompositionResult {
        low_rank,
        sparse,
        iterations: history.len(),
        residual,
        converged,
        residual_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_low_rank(n: usize, m: usize, r: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, r, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(r, m, |_, _| rng.random_range(-1.0..1.0));
        a * b
    }

    #[test]
    fn shrink_examples() {
        assert_eq!(shrink(3.0, 1.0), 2.0);
        assert_eq!(shrink(-0.5, 1.0), 0.0);
        assert_eq!(shrink(-3.0, 1.0), -2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x: f64 = rng.random_range(-100.0..100.0);
            assert_eq!(shrink(x, 0.0), x);
        }
    }

    #[test]
    fn svt_zero_threshold_is_identity() {
        let m = DMatrix::from_fn(7, 5, |r, c| ((r * 5 + c) as f64).sin());
        assert!((svt(&m, 0.0).unwrap() - &m).amax() < 1e-10);
    }

    fn reconstruct((u, s, v_t): &(DMatrix<f64>, DVector<f64>, DMatrix<f64>)) -> DMatrix<f64> {
        u * DMatrix::from_diagonal(s) * v_t
    }

    #[test]
    fn thin_svd_handles_zero_cluster() {
        for (n, m) in [(7, 5), (5, 7)] {
            let a = DMatrix::from_fn(n, m, |r, c| ((r * m + c) as f64).sin());
            let out = thin_svd(&a, 0.0).unwrap();
            assert!((reconstruct(&out) - &a).amax() < 1e-12);
            assert_eq!(out.1.iter().filter(|&&s| s > 1e-10).count(), 2);
        }
    }

    #[test]
    fn jacobi_matches_reference_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (n, m) in [(9, 4), (20, 20), (30, 6)] {
            let a = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
            let out = jacobi_svd(&a);
            assert!((reconstruct(&out) - &a).amax() < 1e-12);
            let v_t = &out.2;
            assert!((v_t * v_t.transpose() - DMatrix::identity(m, m)).amax() < 1e-12);
            let mut got: Vec<f64> = out.1.iter().copied().collect();
            got.sort_by(|x, y| y.total_cmp(x));
            let want = a.singular_values();
            for (g, w) in got.iter().zip(want.iter()) {
                assert!((g - w).abs() < 1e-12 * want[0]);
            }
        }
    }

    #[test]
    fn svt_diagonal() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0]));
        let out = svt(&m, 2.0).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!((out - expected).amax() < 1e-12);
    }

    #[test]
    fn svt_rank_two_to_best_rank_one() {
        let m = random_low_rank(12, 9, 2, 7);
        let svd = SVD::new(m.clone(), true, true);
        let s = &svd.singular_values;
        let tau = 0.5 * (s[0] + s[1]);
        // truncated-SVD oracle: keep the top triplet, shrink it by tau
        let u = svd.u.as_ref().unwrap();
        let vt = svd.v_t.as_ref().unwrap();
        let oracle = u.column(0) * vt.row(0) * (s[0] - tau);
        let (out, rank) = svt_with_rank(&m, tau).unwrap();
        assert_eq!(rank, 1);
        assert!((&out - &oracle).norm() / oracle.norm() < 1e-10);
    }

    #[test]
    fn lambda_choice() {
        assert!((choose_lambda(100, 100) - 0.1).abs() < 1e-15);
        assert!((choose_lambda(300, 100) - 0.057735026918962574).abs() < 1e-12);
        assert_eq!(choose_lambda(1, 1), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(PcpConfig::default().validate().is_ok());
        let bad = [
            PcpConfig {
                rho: 1.0,
                ..Default::default()
            },
            PcpConfig {
                tol: 1.0,
                ..Default::default()
            },
            PcpConfig {
                max_iter: 0,
                ..Default::default()
            },
            PcpConfig {
                lambda: Some(-1.0),
                ..Default::default()
            },
            PcpConfig {
                mu0: Some(0.0),
                ..Default::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn pcp_rejects_nan_and_masked_input() {
        let mut d = DMatrix::from_element(6, 5, 1.0);
        d[(2, 2)] = f64::NAN;
        assert_eq!(
            pcp_matrix(&d, &PcpConfig::default()),
            Err(Error::NonFinite("pcp input"))
        );
        let x = TrajectoryMatrix::from_nan_marked(d).unwrap();
        assert!(pcp(&x, &PcpConfig::default()).is_err());
    }

    #[test]
    fn pcp_low_rank_input_has_no_sparse_part() {
        let l0 = random_low_rank(60, 40, 4, 3);
        let out = pcp_matrix(&l0, &PcpConfig::default()).unwrap();
        assert!(out.converged);
        assert!((&out.low_rank - &l0).norm() / l0.norm() < 1e-6);
        assert!(out.sparse.norm() / l0.norm() < 1e-6);
    }

    #[test]
    fn pcp_zero_matrix() {
        let out = pcp_matrix(&DMatrix::zeros(6, 5), &PcpConfig::default()).unwrap();
        assert!(out.converged);
        assert_eq!(out.iterations, 0);
        assert_eq!(out.low_rank, DMatrix::zeros(6, 5));
    }

    #[test]
    fn pcp_stops_at_max_iter_without_error() {
        let mut l0 = random_low_rank(30, 20, 3, 11);
        l0[(0, 0)] += 50.0;
        let cfg = PcpConfig {
            max_iter: 3,
            ..Default::default()
        };
        let out = pcp_matrix(&l0, &cfg).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 3);
    }

    #[test]
    fn completion_rejects_empty_column() {
        let d = DMatrix::from_element(6, 4, 1.0);
        let mut mask = DMatrix::from_element(6, 4, true);
        for r in 0..6 {
            mask[(r, 2)] = false;
        }
        assert!(matches!(
            pcp_masked(&d, &mask, &PcpConfig::default()),
            Err(Error::IllPosedCompletion(_))
        ));
    }

    #[test]
    fn completion_with_full_mask_matches_pcp() {
        let mut x = random_low_rank(45, 30, 4, 5);
        x[(3, 4)] += 5.0;
        x[(20, 7)] -= 4.0;
        let full = DMatrix::from_element(45, 30, true);
        let a = pcp_matrix(&x, &PcpConfig::default()).unwrap();
        let b = pcp_masked(&x, &full, &PcpConfig::default()).unwrap();
        assert!((&a.low_rank - &b.low_rank).norm() / a.low_rank.norm() < 1e-10);
        assert_eq!(a.iterations, b.iterations);
    }

    proptest! {
        // grid-search oracle for the proximal operator of tau·|z|
        #[test]
        fn shrink_is_l1_prox(x in -5.0f64..5.0, tau in 0.0f64..3.0) {
            let objective = |z: f64| tau * z.abs() + 0.5 * (z - x).powi(2);
            let steps = 40_000;
            let (lo, hi) = (-8.0, 8.0);
            let mut best = (f64::INFINITY, 0.0);
            for k in 0..=steps {
                let z = lo + (hi - lo) * k as f64 / steps as f64;
                let f = objective(z);
                if f < best.0 {
                    best = (f, z);
                }
            }
            let grid = (hi - lo) / steps as f64;
            prop_assert!((shrink(x, tau) - best.1).abs() <= grid);
            prop_assert!(objective(shrink(x, tau)) <= best.0 + 1e-12);
        }

        #[test]
        fn svt_never_increases_singular_values(seed in 0u64..1000, tau in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = DMatrix::from_fn(8, 6, |_, _| rng.random_range(-1.0..1.0));
            let before = m.singular_values();
            let (out, rank) = svt_with_rank(&m, tau).unwrap();
            let after = out.singular_values();
            for k in 0..before.len() {
                prop_assert!(after[k] <= before[k] + 1e-10);
                prop_assert!((after[k] - (before[k] - tau).max(0.0)).abs() < 1e-10);
            }
            prop_assert!(rank <= before.iter().filter(|&&s| s > 1e-12).count());
        }
    }
}
