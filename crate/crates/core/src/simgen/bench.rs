//! Benchmark sweeps comparing batch PCP registration, the online pipeline and
//! per-frame RANSAC on generated scenarios.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::ProjectionConfig;
use crate::ransac::{ransac_register, RansacConfig};
use crate::registration::{
    default_refine_threshold, motion_error, procrustes_points, refine_motion, run_pipeline,
    solo_init, OutlierSettings, PipelineConfig, RefineSettings,
};
use crate::rpca::PcpConfig;
use crate::simgen::{generate, GroundTruth, ScenarioConfig};
use crate::types::{extract_frame, RigidMotion, SupportSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    CorruptFrac,
    Features,
    Frames,
    NoiseSigma,
}

impl SweepAxis {
    /// Copy of `base` with this axis set to `value`.
    pub fn apply(self, base: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v.is_finite() {
                Ok(v as usize)
            } else {
                Err(Error::InvalidConfig(format!(
                    "sweep value {v} is not a count"
                )))
            }
        };
        let mut cfg = base.clone();
        match self {
            SweepAxis::CorruptFrac => cfg.corrupt_frac = value,
            SweepAxis::Features => cfg.features = count(value)?,
            SweepAxis::Frames => cfg.frames = count(value)?,
            SweepAxis::NoiseSigma => cfg.noise_sigma = value,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BenchMethod {
    /// PCP over the whole sequence, Procrustes between low-rank frames.
    #[serde(rename = "pcp")]
    Pcp,
    /// `Pcp` followed by consensus refinement on the observed frames.
    #[serde(rename = "pcp-r")]
    PcpR,
    /// Initialization on the leading frames, sparse projection afterwards.
    #[serde(rename = "solo")]
    Solo,
    #[serde(rename = "solo-r")]
    SoloR,
    #[serde(rename = "ransac")]
    Ransac,
}

impl BenchMethod {
    pub const ALL: [BenchMethod; 5] = [
        BenchMethod::Pcp,
        BenchMethod::PcpR,
        BenchMethod::Solo,
        BenchMethod::SoloR,
        BenchMethod::Ransac,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::Pcp => "pcp",
            BenchMethod::PcpR => "pcp-r",
            BenchMethod::Solo => "solo",
            BenchMethod::SoloR => "solo-r",
            BenchMethod::Ransac => "ransac",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchOptions {
    pub methods: Vec<BenchMethod>,
    /// Initialization window of the online methods. Frames after it are the
    /// ones scored; when it covers the whole sequence frames `2..=F` are.
    pub init_frames: usize,
    pub pcp: PcpConfig,
    pub outliers: OutlierSettings,
    pub projection: ProjectionConfig,
    pub ransac: RansacConfig,
    pub refine_rounds: usize,
    /// Scale the corruption and consensus thresholds to the scenario's noise
    /// level when it is positive.
    pub noise_aware: bool,
    /// Worker threads; 1 runs the cells sequentially.
    pub jobs: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            methods: BenchMethod::ALL.to_vec(),
            init_frames: 15,
            pcp: PcpConfig::default(),
            outliers: OutlierSettings::default(),
            projection: ProjectionConfig::default(),
            ransac: RansacConfig::default(),
            refine_rounds: 10,
            noise_aware: true,
            jobs: 1,
        }
    }
}

impl BenchOptions {
    /// Thresholds adjusted for Gaussian noise of standard deviation `sigma`.
    fn tuned(&self, sigma: f64) -> BenchOptions {
        let mut o = self.clone();
        if self.noise_aware && sigma > 0.0 {
            o.projection.eps_abs = o.projection.eps_abs.max(5.0 * sigma);
            o.outliers.hard_eps = Some(o.outliers.hard_eps.unwrap_or(0.0).max(5.0 * sigma));
            o.ransac.inlier_thresh = o.ransac.inlier_thresh.max(6.0 * sigma);
        }
        o
    }
}

/// One (axis value, trial, method) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub axis_value: f64,
    pub trial: usize,
    pub method: BenchMethod,
    /// Mean motion error over the scored frames; NaN on failure.
    pub motion_error: f64,
    /// Mean wall time per scored frame. Batch PCP spreads its solve over the
    /// frames it registers.
    pub wall_time_ms: f64,
    /// PCP iterations for the batch methods, mean solver iterations per frame
    /// for the others.
    pub iterations: f64,
    /// Mean number of features the motions were estimated from.
    pub inlier_count: f64,
    /// Scored frames that could not be registered; the means above cover the rest.
    pub failed_frames: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub axis_value: f64,
    pub method: BenchMethod,
    pub trials: usize,
    pub failures: usize,
    pub mean_error: f64,
    pub max_error: f64,
    pub mean_wall_time_ms: f64,
    pub mean_iterations: f64,
    pub mean_inlier_count: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one sweep cell, independent of execution order.
pub fn derive_seed(base: u64, axis_value: f64, trial: usize) -> u64 {
    splitmix(splitmix(splitmix(base) ^ axis_value.to_bits()) ^ trial as u64)
}

#[derive(Default)]
struct Tally {
    error: f64,
    time_ms: f64,
    iterations: f64,
    inliers: f64,
    frames: usize,
    failed: Vec<String>,
}

impl Tally {
    fn add(
        &mut self,
        est: &RigidMotion,
        gt: &RigidMotion,
        time_ms: f64,
        iterations: f64,
        inliers: usize,
    ) {
        self.error += motion_error(est, gt);
        self.time_ms += time_ms;
        self.iterations += iterations;
        self.inliers += inliers as f64;
        self.frames += 1;
    }

    fn record(&self, axis_value: f64, trial: usize, method: BenchMethod) -> BenchRecord {
        if self.frames == 0 {
            let msg = match self.failed.first() {
                Some(first) => format!("all {} frames failed, first: {first}", self.failed.len()),
                None => "no frames to score".to_string(),
            };
            return BenchRecord {
                failed_frames: self.failed.len(),
                error: Some(msg),
                ..failure(
                    axis_value,
                    trial,
                    method,
                    &Error::EmptyInput("scored frames"),
                )
            };
        }
        let n = self.frames as f64;
        BenchRecord {
            axis_value,
            trial,
            method,
            motion_error: self.error / n,
            wall_time_ms: self.time_ms / n,
            iterations: self.iterations / n,
            inlier_count: self.inliers / n,
            failed_frames: self.failed.len(),
            error: None,
        }
    }
}

fn failure(axis_value: f64, trial: usize, method: BenchMethod, e: &Error) -> BenchRecord {
    BenchRecord {
        axis_value,
        trial,
        method,
        motion_error: f64::NAN,
        wall_time_ms: f64::NAN,
        iterations: f64::NAN,
        inlier_count: f64::NAN,
        failed_frames: 0,
        error: Some(e.to_string()),
    }
}

fn millis(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn batch_pcp(
    gt: &GroundTruth,
    opts: &BenchOptions,
    refine: bool,
) -> Result<(Tally, Option<Tally>)> {
    let x = &gt.observed;
    let t = Instant::now();
    let init = solo_init(x, &opts.pcp, &opts.outliers)?;
    let inliers = init.state.inliers().clone();
    let l1 = init.low_rank_frame(1)?.select(&inliers)?;
    let mut motions = Vec::with_capacity(x.frames());
    for i in 2..=x.frames() {
        let li = init.low_rank_frame(i)?.select(&inliers)?;
        motions.push(procrustes_points(&l1.data, &li.data)?);
    }
    let per_frame = millis(t) / motions.len() as f64;
    let iterations = init.decomposition.iterations as f64;

    let mut plain = Tally::default();
    for (k, g) in motions.iter().enumerate() {
        plain.add(g, &gt.motions[k + 1], per_frame, iterations, inliers.len());
    }
    if !refine {
        return Ok((plain, None));
    }

    let mut refined = Tally::default();
    let w1 = extract_frame(x, 1)?;
    let clean1 = init.uncorrupted_in_frame(1, x)?;
    for (k, g) in motions.iter().enumerate() {
        let i = k + 2;
        let t = Instant::now();
        let usable = inliers
            .difference(&x.missing_in_frame(1))
            .difference(&x.missing_in_frame(i));
        let wi = extract_frame(x, i)?;
        // threshold scaled on features the decomposition found clean in both
        // frames; without three of them the unrefined motion is kept
        let trusted = clean1.intersection(&init.uncorrupted_in_frame(i, x)?);
        if trusted.len() < 3 {
            refined.add(g, &gt.motions[i - 1], per_frame, iterations, inliers.len());
            continue;
        }
        let thresh =
            default_refine_threshold(&w1.select(&trusted)?.data, &wi.select(&trusted)?.data, g);
        match refine_motion(
            &w1.select(&usable)?,
            &wi.select(&usable)?,
            g,
            Some(thresh),
            opts.refine_rounds,
        ) {
            Ok(r) => refined.add(
                &r.motion,
                &gt.motions[i - 1],
                per_frame + millis(t),
                iterations,
                r.consensus.len(),
            ),
            Err(e) => refined.failed.push(e.at_frame(i).to_string()),
        }
    }
    Ok((plain, Some(refined)))
}

fn scored_frames(frames: usize, init_frames: usize) -> std::ops::RangeInclusive<usize> {
    if init_frames < frames {
        init_frames + 1..=frames
    } else {
        2..=frames
    }
}

fn online(gt: &GroundTruth, opts: &BenchOptions, refine: bool) -> Result<(Tally, Option<Tally>)> {
    let x = &gt.observed;
    let cfg = PipelineConfig {
        init_frames: opts.init_frames,
        window: None,
        pcp: opts.pcp.clone(),
        outliers: opts.outliers,
        projection: opts.projection.clone(),
        refine: refine.then_some(RefineSettings {
            residual_thresh: None,
            max_rounds: opts.refine_rounds,
        }),
        skip_failed_frames: true,
    };
    let run = run_pipeline(x, &cfg)?;
    let scored = scored_frames(x.frames(), opts.init_frames);
    let mut plain = Tally::default();
    let mut refined = refine.then(Tally::default);
    for (_, e) in run.failed.iter().filter(|(i, _)| scored.contains(i)) {
        plain.failed.push(e.to_string());
        if let Some(t) = refined.as_mut() {
            t.failed.push(e.to_string());
        }
    }
    for rec in run
        .frames
        .iter()
        .filter(|r| scored.contains(&r.frame_index))
    {
        let truth = &gt.motions[rec.frame_index - 1];
        let iterations = rec.projection_iterations as f64;
        plain.add(
            &rec.motion,
            truth,
            rec.wall_time_ms,
            iterations,
            rec.inlier_count,
        );
        if let (Some(tally), Some(r)) = (refined.as_mut(), rec.refined.as_ref()) {
            tally.add(
                &r.motion,
                truth,
                rec.wall_time_ms + r.wall_time_ms,
                iterations,
                r.consensus_count,
            );
        }
    }
    Ok((plain, refined))
}

fn ransac(gt: &GroundTruth, opts: &BenchOptions, seed: u64) -> Result<Tally> {
    let x = &gt.observed;
    let w1 = extract_frame(x, 1)?;
    let mut tally = Tally::default();
    for i in scored_frames(x.frames(), opts.init_frames) {
        let t = Instant::now();
        let usable = SupportSet::all(x.features())
            .difference(&x.missing_in_frame(1))
            .difference(&x.missing_in_frame(i));
        let wi = extract_frame(x, i)?;
        let cfg = RansacConfig {
            seed: splitmix(seed ^ i as u64),
            ..opts.ransac.clone()
        };
        let a = w1.select(&usable)?;
        let b = wi.select(&usable)?;
        match ransac_register(&a, &b, &cfg) {
            Ok(out) => tally.add(
                &out.motion,
                &gt.motions[i - 1],
                millis(t),
                out.iterations as f64,
                out.consensus.len(),
            ),
            Err(e) => tally.failed.push(e.at_frame(i).to_string()),
        }
    }
    Ok(tally)
}

fn run_cell(
    axis: SweepAxis,
    value: f64,
    trial: usize,
    base: &ScenarioConfig,
    opts: &BenchOptions,
) -> Vec<BenchRecord> {
    let seed = derive_seed(base.seed, value, trial);
    let methods = &opts.methods;
    let fail_all = |e: &Error| {
        methods
            .iter()
            .map(|&m| failure(value, trial, m, e))
            .collect::<Vec<_>>()
    };
    let gt = match axis
        .apply(base, value)
        .and_then(|cfg| generate(&ScenarioConfig { seed, ..cfg }))
    {
        Ok(gt) => gt,
        Err(e) => return fail_all(&e),
    };
    let opts = opts.tuned(gt.config.noise_sigma);
    let has = |m: BenchMethod| methods.contains(&m);

    let mut out = Vec::new();
    let mut push_pair =
        |res: Result<(Tally, Option<Tally>)>, plain: BenchMethod, refined: BenchMethod| match res {
            Ok((p, r)) => {
                if has(plain) {
                    out.push(p.record(value, trial, plain));
                }
                if let Some(r) = r {
                    out.push(r.record(value, trial, refined));
                }
            }
            Err(e) => {
                for m in [plain, refined].into_iter().filter(|&m| has(m)) {
                    out.push(failure(value, trial, m, &e));
                }
            }
        };
    if has(BenchMethod::Pcp) || has(BenchMethod::PcpR) {
        push_pair(
            batch_pcp(&gt, &opts, has(BenchMethod::PcpR)),
            BenchMethod::Pcp,
            BenchMethod::PcpR,
        );
    }
    if has(BenchMethod::Solo) || has(BenchMethod::SoloR) {
        push_pair(
            online(&gt, &opts, has(BenchMethod::SoloR)),
            BenchMethod::Solo,
            BenchMethod::SoloR,
        );
    }
    if has(BenchMethod::Ransac) {
        out.push(match ransac(&gt, &opts, seed) {
            Ok(t) => t.record(value, trial, BenchMethod::Ransac),
            Err(e) => failure(value, trial, BenchMethod::Ransac, &e),
        });
    }
    out.sort_by_key(|r| r.method);
    out
}

/// Runs every method on `trials` scenarios per axis value. Solver failures
/// are recorded in the `error` field of the affected cells.
pub fn benchmark_sweep(
    axis: SweepAxis,
    values: &[f64],
    base: &ScenarioConfig,
    trials: usize,
    opts: &BenchOptions,
) -> Result<Vec<BenchRecord>> {
    if values.is_empty() {
        return Err(Error::InvalidConfig("sweep: no axis values given".into()));
    }
    if trials == 0 {
        return Err(Error::InvalidConfig(
            "sweep: trials must be positive".into(),
        ));
    }
    if opts.methods.is_empty() {
        return Err(Error::InvalidConfig("sweep: no methods selected".into()));
    }
    if opts.jobs == 0 {
        return Err(Error::InvalidConfig("sweep: jobs must be positive".into()));
    }
    for &v in values {
        axis.apply(base, v)?;
    }
    opts.pcp.validate()?;
    opts.projection.validate()?;
    opts.ransac.validate()?;

    let cells: Vec<(f64, usize)> = values
        .iter()
        .flat_map(|&v| (0..trials).map(move |t| (v, t)))
        .collect();
    let run = |&(v, t): &(f64, usize)| run_cell(axis, v, t, base, opts);
    let nested: Vec<Vec<BenchRecord>> = if opts.jobs == 1 {
        cells.iter().map(run).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(opts.jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("sweep: {e}")))?
            .install(|| cells.par_iter().map(run).collect())
    };
    Ok(nested.into_iter().flatten().collect())
}

/// Per (axis value, method) aggregates, in first-appearance order of the
/// values and method order within a value.
pub fn summarize(records: &[BenchRecord]) -> Vec<SummaryRow> {
    let mut keys: Vec<(f64, BenchMethod)> = Vec::new();
    for r in records {
        if !keys
            .iter()
            .any(|&(v, m)| v.to_bits() == r.axis_value.to_bits() && m == r.method)
        {
            keys.push((r.axis_value, r.method));
        }
    }
    let mut values: Vec<u64> = Vec::new();
    for &(v, _) in &keys {
        if !values.contains(&v.to_bits()) {
            values.push(v.to_bits());
        }
    }
    keys.sort_by_key(|&(v, m)| (values.iter().position(|&b| b == v.to_bits()), m));

    keys.into_iter()
        .map(|(v, m)| {
            let group: Vec<&BenchRecord> = records
                .iter()
                .filter(|r| r.axis_value.to_bits() == v.to_bits() && r.method == m)
                .collect();
            let ok: Vec<&&BenchRecord> = group.iter().filter(|r| r.error.is_none()).collect();
            let mean = |f: fn(&BenchRecord) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            SummaryRow {
                axis_value: v,
                method: m,
                trials: group.len(),
                failures: group.len() - ok.len(),
                mean_error: mean(|r| r.motion_error),
                max_error: ok.iter().map(|r| r.motion_error).fold(f64::NAN, f64::max),
                mean_wall_time_ms: mean(|r| r.wall_time_ms),
                mean_iterations: mean(|r| r.iterations),
                mean_inlier_count: mean(|r| r.inlier_count),
            }
        })
        .collect()
}
