//! Command-line front end: `simulate`, `register`, `bench` and `compare`.
//!
//! Exit codes: 0 on success, 2 for unusable input (bad files, configs or
//! flags), 3 when a solver fails on valid input.

pub mod io;
mod report;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::projection::ProjectionConfig;
use crate::ransac::{ransac_register, RansacConfig};
use crate::registration::{
    motion_error, refine_motion, run_pipeline, OutlierSettings, PipelineConfig, RefineSettings,
};
use crate::rpca::PcpConfig;
use crate::simgen::{
    benchmark_sweep, generate, summarize, BenchOptions, ScenarioConfig, SweepAxis,
};
use crate::types::{extract_frame, RigidMotion, SupportSet, TrajectoryMatrix};

pub use report::{FrameJson, GroundTruthFile, InitJson, MotionJson, RefinedJson, RunReport};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("input: {0}")]
    Input(String),
    #[error("solver: {0}")]
    Solver(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Input(_) => 2,
            CliError::Solver(_) => 3,
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Input(format!("{}: {e}", path.display()))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e.root() {
            Error::EmptyInput(_)
            | Error::FrameDimensionMismatch { .. }
            | Error::DimensionMismatch(_)
            | Error::FrameOutOfRange { .. }
            | Error::ColumnOutOfRange { .. }
            | Error::InvalidMask(_)
            | Error::NonFinite(_)
            | Error::InvalidConfig(_) => CliError::Input(e.to_string()),
            _ => CliError::Solver(e),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "solo",
    version,
    about = "Robust online rigid-body motion registration"
)]
pub struct Cli {
    /// Overrides every seed in the loaded configs.
    #[arg(long, global = true, env = "SOLO_SEED")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Solo,
    Ransac,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sequence: trajectory.csv and ground_truth.json.
    Simulate {
        /// Scenario config (TOML, or JSON by extension).
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Register every frame of a trajectory CSV against frame 1.
    Register {
        trajectory: PathBuf,
        /// Solver config (TOML, or JSON by extension).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Frames used by the initialization.
        #[arg(long)]
        init_frames: Option<usize>,
        /// Enable consensus refinement of every motion.
        #[arg(long)]
        refine: bool,
        #[arg(long, value_enum, default_value_t = Method::Solo)]
        method: Method,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Write zero for every wall time so outputs are byte-reproducible.
        #[arg(long)]
        omit_timing: bool,
    },
    /// Run benchmark sweeps: one CSV and one summary CSV per sweep.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Worker threads (overrides the config).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        omit_timing: bool,
    },
    /// Run the online pipeline and RANSAC on the same file and compare them.
    Compare {
        trajectory: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        init_frames: Option<usize>,
        #[arg(long)]
        refine: bool,
        /// Ground truth written by `simulate`; adds per-method errors.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long)]
        omit_timing: bool,
    },
}

/// Solver settings for `register` and `compare`. Every field is optional in
/// the file; a `[refine]` table turns refinement on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegisterConfig {
    pub init_frames: usize,
    /// Re-initialization window length; defaults to `init_frames`.
    pub window: Option<usize>,
    pub pcp: PcpConfig,
    pub outliers: OutlierSettings,
    pub projection: ProjectionConfig,
    pub refine: Option<RefineSettings>,
    pub ransac: RansacConfig,
}

impl Default for RegisterConfig {
    fn default() -> Self {
        Self {
            init_frames: 15,
            window: None,
            pcp: PcpConfig::default(),
            outliers: OutlierSettings::default(),
            projection: ProjectionConfig::default(),
            refine: None,
            ransac: RansacConfig::default(),
        }
    }
}

impl RegisterConfig {
    fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            init_frames: self.init_frames,
            window: self.window,
            pcp: self.pcp.clone(),
            outliers: self.outliers,
            projection: self.projection.clone(),
            refine: self.refine.clone(),
            skip_failed_frames: false,
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.init_frames < 2 {
            return Err(CliError::Usage(format!(
                "the initialization window needs at least 2 frames, got {}",
                self.init_frames
            )));
        }
        self.pcp.validate()?;
        self.projection.validate()?;
        self.ransac.validate()?;
        Ok(())
    }
}

/// Benchmark config: a base scenario, shared options and a list of sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct BenchFile {
    pub scenario: ScenarioConfig,
    pub options: BenchOptions,
    pub sweep: Vec<SweepSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Output file stem.
    pub name: String,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn default_trials() -> usize {
    10
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate { config, out_dir } => simulate(config, out_dir, cli.seed),
        Command::Register {
            trajectory,
            config,
            init_frames,
            refine,
            method,
            out_dir,
            omit_timing,
        } => {
            let cfg = register_config(config.as_deref(), *init_frames, *refine, cli.seed)?;
            let x = io::read_trajectory(trajectory)?;
            let mut report = register(&x, &cfg, *method)?;
            if *omit_timing {
                report.zero_timing();
            }
            ensure_dir(out_dir)?;
            io::write_json(&out_dir.join("report.json"), &report)?;
            io::write_motions(&out_dir.join("motions.csv"), &report.final_motions())?;
            println!("registered {} frames with {:?}", report.frames, method);
            Ok(())
        }
        Command::Bench {
            config,
            out_dir,
            jobs,
            omit_timing,
        } => bench(config, out_dir, *jobs, *omit_timing, cli.seed),
        Command::Compare {
            trajectory,
            config,
            init_frames,
            refine,
            ground_truth,
            out_dir,
            omit_timing,
        } => {
            let cfg = register_config(config.as_deref(), *init_frames, *refine, cli.seed)?;
            let x = io::read_trajectory(trajectory)?;
            let truth = match ground_truth {
                Some(p) => Some(io::read_config::<GroundTruthFile>(p)?.motions()?),
                None => None,
            };
            compare(&x, &cfg, truth.as_deref(), out_dir, *omit_timing)
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn simulate(config: &Path, out_dir: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let mut cfg: ScenarioConfig = io::read_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let gt = generate(&cfg)?;
    ensure_dir(out_dir)?;
    io::write_trajectory(&out_dir.join("trajectory.csv"), &gt.observed)?;
    io::write_json(
        &out_dir.join("ground_truth.json"),
        &GroundTruthFile::from_truth(&gt),
    )?;
    println!(
        "wrote {} frames x {} features to {}",
        cfg.frames,
        cfg.features,
        out_dir.display()
    );
    Ok(())
}

pub fn register_config(
    path: Option<&Path>,
    init_frames: Option<usize>,
    refine: bool,
    seed: Option<u64>,
) -> Result<RegisterConfig, CliError> {
    let mut cfg: RegisterConfig = match path {
        Some(p) => io::read_config(p)?,
        None => RegisterConfig::default(),
    };
    if let Some(k) = init_frames {
        cfg.init_frames = k;
    }
    if refine && cfg.refine.is_none() {
        cfg.refine = Some(RefineSettings::default());
    }
    if let Some(s) = seed {
        cfg.ransac.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn millis(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs the chosen backend over frames `2..=F` of `x`.
pub fn register(
    x: &TrajectoryMatrix,
    cfg: &RegisterConfig,
    method: Method,
) -> Result<RunReport, CliError> {
    if cfg.init_frames > x.frames() {
        return Err(CliError::Usage(format!(
            "--init-frames {} exceeds the {} frames in the file",
            cfg.init_frames,
            x.frames()
        )));
    }
    match method {
        Method::Solo => {
            let run = run_pipeline(x, &cfg.pipeline())?;
            Ok(RunReport::from_pipeline(x, cfg, &run))
        }
        Method::Ransac => register_ransac(x, cfg),
    }
}

fn register_ransac(x: &TrajectoryMatrix, cfg: &RegisterConfig) -> Result<RunReport, CliError> {
    let w1 = extract_frame(x, 1)?;
    let mut records = Vec::with_capacity(x.frames().saturating_sub(1));
    for i in 2..=x.frames() {
        let t = Instant::now();
        let usable = SupportSet::all(x.features())
            .difference(&x.missing_in_frame(1))
            .difference(&x.missing_in_frame(i));
        let a = w1.select(&usable)?;
        let b = extract_frame(x, i)?.select(&usable)?;
        let rcfg = RansacConfig {
            seed: cfg.ransac.seed.wrapping_add(i as u64),
            ..cfg.ransac.clone()
        };
        let out = ransac_register(&a, &b, &rcfg).map_err(|e| e.at_frame(i))?;
        let wall = millis(t);
        let refined = match &cfg.refine {
            None => None,
            Some(rs) => {
                let t = Instant::now();
                let r = refine_motion(&a, &b, &out.motion, rs.residual_thresh, rs.max_rounds)
                    .map_err(|e| e.at_frame(i))?;
                Some(RefinedJson {
                    motion: MotionJson::from(&r.motion),
                    rounds: r.rounds,
                    converged: r.converged,
                    consensus_count: r.consensus.len(),
                    wall_time_ms: millis(t),
                })
            }
        };
        records.push(FrameJson {
            frame_index: i,
            motion: MotionJson::from(&out.motion),
            inlier_count: out.consensus.len(),
            projection_iterations: None,
            ransac_iterations: Some(out.iterations),
            wall_time_ms: wall,
            reinitialized: false,
            refined,
        });
    }
    Ok(RunReport {
        method: Method::Ransac,
        frames: x.frames(),
        features: x.features(),
        init_frames: cfg.init_frames,
        refine: cfg.refine.is_some(),
        init: None,
        reinits: Vec::new(),
        records,
    })
}

fn bench(
    config: &Path,
    out_dir: &Path,
    jobs: Option<usize>,
    omit_timing: bool,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let mut file: BenchFile = io::read_config(config)?;
    if file.sweep.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: no [[sweep]] entries",
            config.display()
        )));
    }
    for s in &file.sweep {
        if s.values.is_empty() {
            return Err(CliError::Usage(format!(
                "sweep {:?}: empty value list",
                s.name
            )));
        }
        if s.name.is_empty()
            || !s
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        {
            return Err(CliError::Usage(format!(
                "sweep name {:?} must be nonempty and use only letters, digits, '_' or '-'",
                s.name
            )));
        }
    }
    if let Some(j) = jobs {
        file.options.jobs = j;
    }
    if let Some(s) = seed {
        file.scenario.seed = s;
    }

    let mut results = Vec::with_capacity(file.sweep.len());
    for s in &file.sweep {
        let mut records =
            benchmark_sweep(s.axis, &s.values, &file.scenario, s.trials, &file.options)?;
        if omit_timing {
            records.iter_mut().for_each(|r| r.wall_time_ms = 0.0);
        }
        results.push((s, records));
    }
    ensure_dir(out_dir)?;
    for (s, records) in &results {
        io::write_rows(&out_dir.join(format!("{}.csv", s.name)), records)?;
        io::write_rows(
            &out_dir.join(format!("{}_summary.csv", s.name)),
            &summarize(records),
        )?;
        let failures = records.iter().filter(|r| r.error.is_some()).count();
        println!(
            "{}: {} records, {} failures",
            s.name,
            records.len(),
            failures
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct CompareRow {
    frame_index: usize,
    /// `motion_error` between the two estimates.
    disagreement: f64,
    solo_error: Option<f64>,
    ransac_error: Option<f64>,
    solo_wall_time_ms: f64,
    ransac_wall_time_ms: f64,
    solo_inliers: usize,
    ransac_inliers: usize,
}

fn compare(
    x: &TrajectoryMatrix,
    cfg: &RegisterConfig,
    truth: Option<&[RigidMotion]>,
    out_dir: &Path,
    omit_timing: bool,
) -> Result<(), CliError> {
    if let Some(t) = truth {
        if t.len() != x.frames() {
            return Err(CliError::Input(format!(
                "ground truth has {} motions, the trajectory {} frames",
                t.len(),
                x.frames()
            )));
        }
    }
    let mut solo = register(x, cfg, Method::Solo)?;
    let mut ransac = register(x, cfg, Method::Ransac)?;
    if omit_timing {
        solo.zero_timing();
        ransac.zero_timing();
    }
    let (ms, mr) = (solo.final_motions(), ransac.final_motions());
    let rows: Vec<CompareRow> = solo
        .records
        .iter()
        .zip(&ransac.records)
        .map(|(a, b)| {
            let i = a.frame_index;
            CompareRow {
                frame_index: i,
                disagreement: motion_error(&ms[i - 1], &mr[i - 1]),
                solo_error: truth.map(|t| motion_error(&ms[i - 1], &t[i - 1])),
                ransac_error: truth.map(|t| motion_error(&mr[i - 1], &t[i - 1])),
                solo_wall_time_ms: a.total_time_ms(),
                ransac_wall_time_ms: b.total_time_ms(),
                solo_inliers: a.inlier_count,
                ransac_inliers: b.inlier_count,
            }
        })
        .collect();
    ensure_dir(out_dir)?;
    io::write_rows(&out_dir.join("compare.csv"), &rows)?;

    let n = rows.len().max(1) as f64;
    let mean = |f: &dyn Fn(&CompareRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    println!("frames compared: {}", rows.len());
    println!("mean disagreement: {:.3e}", mean(&|r| r.disagreement));
    if truth.is_some() {
        println!(
            "mean error solo: {:.3e}",
            mean(&|r| r.solo_error.unwrap_or(0.0))
        );
        println!(
            "mean error ransac: {:.3e}",
            mean(&|r| r.ransac_error.unwrap_or(0.0))
        );
    }
    if !omit_timing {
        println!("mean ms/frame solo: {:.3}", mean(&|r| r.solo_wall_time_ms));
        println!(
            "mean ms/frame ransac: {:.3}",
            mean(&|r| r.ransac_wall_time_ms)
        );
    }
    Ok(())
}
