//! Synthetic rigid-body sequences with ground truth.
//!
//! A random point cloud is carried through a random walk of small rigid
//! motions, then dense Gaussian noise, sparse gross corruption, outlying
//! feature tracks and missing cells are layered on top. All randomness comes
//! from the scenario seed.

mod bench;

pub use bench::{
    benchmark_sweep, derive_seed, summarize, BenchMethod, BenchOptions, BenchRecord, SummaryRow,
    SweepAxis,
};

use nalgebra::{DMatrix, Matrix3, Matrix3xX, Rotation3, Unit, Vector3};
use rand::{seq::index::sample, seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{RigidMotion, SupportSet, TrajectoryMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub frames: usize,
    pub features: usize,
    /// Edge length of the cube the points are drawn from (meters).
    pub shape_scale: f64,
    /// Largest per-frame rotation angle (radians).
    pub rotation_step: f64,
    /// Largest per-frame translation (meters). Defaults to `0.05 · shape_scale`.
    pub translation_step: Option<f64>,
    pub noise_sigma: f64,
    /// Fraction of entries hit by sparse gross corruption.
    pub corrupt_frac: f64,
    /// Corruption magnitude scale. Defaults to `2 · shape_scale`.
    pub corrupt_mag: Option<f64>,
    /// Number of feature tracks replaced by dense corruption.
    pub outlier_tracks: usize,
    /// Fraction of (frame, feature) cells left unobserved.
    pub missing_frac: f64,
    pub seed: u64,
    /// Leading frames that use `init_corrupt_frac` instead of `corrupt_frac`.
    pub init_frames: usize,
    pub init_corrupt_frac: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            frames: 50,
            features: 100,
            shape_scale: 1.0,
            rotation_step: 0.05,
            translation_step: None,
            noise_sigma: 0.0,
            corrupt_frac: 0.0,
            corrupt_mag: None,
            outlier_tracks: 0,
            missing_frac: 0.0,
            seed: 0,
            init_frames: 0,
            init_corrupt_frac: None,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(format!("scenario: {msg}")));
        if self.frames < 2 {
            return bad(format!("frames must be at least 2, got {}", self.frames));
        }
        if self.features < 5 {
            return bad(format!(
                "features must be at least 5, got {}",
                self.features
            ));
        }
        if !(self.shape_scale > 0.0 && self.shape_scale.is_finite()) {
            return bad("shape_scale must be positive".into());
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.rotation_step) {
            return bad("rotation_step must lie in [0, π]".into());
        }
        if !(self.translation_step() >= 0.0) {
            return bad("translation_step must be non-negative".into());
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative".into());
        }
        if !(self.corrupt_mag() >= 0.0) {
            return bad("corrupt_mag must be non-negative".into());
        }
        for (name, f) in [
            ("corrupt_frac", Some(self.corrupt_frac)),
            ("missing_frac", Some(self.missing_frac)),
            ("init_corrupt_frac", self.init_corrupt_frac),
        ] {
            if let Some(f) = f {
                if !(0.0..=1.0).contains(&f) {
                    return bad(format!("{name} must lie in [0, 1], got {f}"));
                }
            }
        }
        if self.outlier_tracks > self.features {
            return bad("more outlier tracks than features".into());
        }
        if self.init_frames > self.frames {
            return bad("init_frames exceeds frames".into());
        }
        Ok(())
    }

    pub fn translation_step(&self) -> f64 {
        self.translation_step.unwrap_or(0.05 * self.shape_scale)
    }

    pub fn corrupt_mag(&self) -> f64 {
        self.corrupt_mag.unwrap_or(2.0 * self.shape_scale)
    }
}

/// A generated sequence and everything needed to score an estimate of it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Motion of frame `i` relative to frame 1; `motions[0]` is the identity.
    pub motions: Vec<RigidMotion>,
    /// Reference-frame point cloud, `3 x m`.
    pub points: Matrix3xX<f64>,
    /// Noise-free rank-4 trajectory matrix.
    pub low_rank: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    /// Sparse corruption plus the dense corruption of outlier tracks.
    pub sparse: DMatrix<f64>,
    pub clean: TrajectoryMatrix,
    pub observed: TrajectoryMatrix,
    pub outliers: SupportSet,
    pub config: ScenarioConfig,
}

impl GroundTruth {
    /// Number of sparse-corruption entries outside the outlier tracks.
    pub fn sparse_support_count(&self) -> usize {
        self.sparse
            .column_iter()
            .enumerate()
            .filter(|(j, _)| !self.outliers.contains(*j))
            .map(|(_, c)| c.iter().filter(|&&v| v != 0.0).count())
            .sum()
    }

    /// Missing `(frame, feature)` cells, frames 1-based and features 0-based.
    pub fn missing_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 1..=self.observed.frames() {
            for j in self.observed.missing_in_frame(i).iter() {
                out.push((i, j));
            }
        }
        out
    }
}

/// Rotation about a uniformly random axis by an angle uniform in `[0, max_angle]`.
pub fn random_rotation<R: Rng + ?Sized>(max_angle: f64, rng: &mut R) -> Matrix3<f64> {
    let axis = random_direction(rng);
    let angle = if max_angle > 0.0 {
        rng.random_range(0.0..=max_angle)
    } else {
        0.0
    };
    Rotation3::from_axis_angle(&axis, angle).into_inner()
}

fn random_direction<R: Rng + ?Sized>(rng: &mut R) -> Unit<Vector3<f64>> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if let Some(u) = Unit::try_new(v, 1e-12) {
            return u;
        }
    }
}

fn gross_value<R: Rng + ?Sized>(mag: f64, rng: &mut R) -> f64 {
    let v = mag * rng.random_range(0.5..=1.0);
    if rng.random_bool(0.5) {
        v
    } else {
        -v
    }
}

/// Builds a scenario from its configuration.
pub fn generate(cfg: &ScenarioConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (f, m) = (cfg.frames, cfg.features);
    let half = 0.5 * cfg.shape_scale;

    let points = Matrix3xX::from_fn(m, |_, _| rng.random_range(-half..half));

    let mut motions = Vec::with_capacity(f);
    motions.push(RigidMotion::identity());
    for _ in 1..f {
        let r = random_rotation(cfg.rotation_step, &mut rng);
        let dir = random_direction(&mut rng);
        let len = if cfg.translation_step() > 0.0 {
            rng.random_range(0.0..=cfg.translation_step())
        } else {
            0.0
        };
        let step = RigidMotion::new(r, dir.into_inner() * len)?;
        let next = step.compose(motions.last().expect("nonempty"));
        motions.push(next);
    }

    let mut low_rank = DMatrix::zeros(3 * f, m);
    for (i, g) in motions.iter().enumerate() {
        low_rank.rows_mut(3 * i, 3).copy_from(&g.apply(&points));
    }

    let noise = if cfg.noise_sigma > 0.0 {
        let normal =
            Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        DMatrix::from_fn(3 * f, m, |_, _| normal.sample(&mut rng))
    } else {
        DMatrix::zeros(3 * f, m)
    };

    let mag = cfg.corrupt_mag();
    let mut sparse = DMatrix::zeros(3 * f, m);
    let mut outliers = sample(&mut rng, m, cfg.outlier_tracks).into_vec();
    outliers.sort_unstable();
    let outliers = SupportSet::new(outliers)?;
    for j in outliers.iter() {
        for r in 0..3 * f {
            sparse[(r, j)] = gross_value(mag, &mut rng);
        }
    }

    let inlier_cols: Vec<usize> = outliers.complement(m).iter().collect();
    let blocks: Vec<(usize, usize, f64)> = match cfg.init_corrupt_frac {
        Some(init_frac) if cfg.init_frames > 0 => {
            vec![
                (0, cfg.init_frames, init_frac),
                (cfg.init_frames, f, cfg.corrupt_frac),
            ]
        }
        _ => vec![(0, f, cfg.corrupt_frac)],
    };
    for (first, last, frac) in blocks {
        let rows = 3 * (last - first);
        let count = ((frac * (rows * m) as f64).round() as usize).min(rows * inlier_cols.len());
        if count == 0 {
            continue;
        }
        for idx in sample(&mut rng, rows * inlier_cols.len(), count).iter() {
            let (r, c) = (3 * first + idx % rows, inlier_cols[idx / rows]);
            sparse[(r, c)] = gross_value(mag, &mut rng);
        }
    }

    let data = &low_rank + &noise + &sparse;
    let clean = TrajectoryMatrix::new(low_rank.clone())?;

    let missing_target = (cfg.missing_frac * (f * m) as f64).round() as usize;
    let observed = if missing_target == 0 {
        TrajectoryMatrix::new(data)?
    } else {
        let mut cells: Vec<(usize, usize)> =
            (0..f).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
        cells.shuffle(&mut rng);
        let mut per_frame = vec![m; f];
        let mut per_feature = vec![f; m];
        let mut mask = DMatrix::from_element(3 * f, m, true);
        let mut hidden = 0;
        for (i, j) in cells {
            if hidden == missing_target {
                break;
            }
            // keep every frame and every feature observed at least once
            if per_frame[i] > 1 && per_feature[j] > 1 {
                per_frame[i] -= 1;
                per_feature[j] -= 1;
                for r in 0..3 {
                    mask[(3 * i + r, j)] = false;
                }
                hidden += 1;
            }
        }
        TrajectoryMatrix::with_mask(data, mask)?
    };

    Ok(GroundTruth {
        motions,
        points,
        low_rank,
        noise,
        sparse,
        clean,
        observed,
        outliers,
        config: cfg.clone(),
    })
}
