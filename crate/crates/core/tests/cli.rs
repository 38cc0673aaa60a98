//! Runs the `solo` binary on generated files and checks its outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use solo::cli::io::{read_motions, read_trajectory};
use solo::cli::GroundTruthFile;
use solo::registration::motion_error;

fn solo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_solo"))
        .args(args)
        .env_remove("SOLO_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// Writes a scenario config and simulates it into `dir/data`.
fn simulate(dir: &Path, scenario: &str) -> PathBuf {
    let cfg = write(dir, "scenario.toml", scenario);
    let data = dir.join("data");
    let out = solo(&["simulate", "--config", p(&cfg), "--out-dir", p(&data)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    data
}

fn truth(data: &Path) -> GroundTruthFile {
    serde_json::from_str(&fs::read_to_string(data.join("ground_truth.json")).unwrap()).unwrap()
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn minimal_simulation_shape() {
    let tmp = TempDir::new().unwrap();
    let data = simulate(tmp.path(), "frames = 10\nfeatures = 20\n");
    let text = fs::read_to_string(data.join("trajectory.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 31);
    assert_eq!(lines[0].split(',').count(), 20);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 20));
    let x = read_trajectory(&data.join("trajectory.csv")).unwrap();
    assert_eq!((x.frames(), x.features()), (10, 20));
    assert!(x.is_complete());
}

#[test]
fn missing_cells_match_ground_truth() {
    let tmp = TempDir::new().unwrap();
    let data = simulate(
        tmp.path(),
        "frames = 12\nfeatures = 30\nmissing_frac = 0.1\nseed = 4\n",
    );
    let text = fs::read_to_string(data.join("trajectory.csv")).unwrap();
    let mut nan_cells = Vec::new();
    for (r, line) in text.lines().skip(1).enumerate() {
        for (j, field) in line.split(',').enumerate() {
            if field == "NaN" {
                nan_cells.push([r / 3 + 1, j + 1]);
            }
        }
    }
    let gt = truth(&data);
    assert!(!gt.missing_cells.is_empty());
    let mut expected = gt.missing_cells.clone();
    expected.sort();
    nan_cells.sort();
    nan_cells.dedup();
    assert_eq!(nan_cells, expected);
    // each missing cell blanks all three coordinates
    assert_eq!(text.matches("NaN").count(), 3 * expected.len());
}

#[test]
fn simulate_and_register_are_reproducible() {
    let tmp = TempDir::new().unwrap();
    let scenario =
        "frames = 20\nfeatures = 40\ncorrupt_frac = 0.05\nmissing_frac = 0.02\nseed = 9\n";
    let a = simulate(tmp.path(), scenario);
    let first: Vec<Vec<u8>> = ["trajectory.csv", "ground_truth.json"]
        .iter()
        .map(|f| fs::read(a.join(f)).unwrap())
        .collect();
    let b = simulate(tmp.path(), scenario);
    assert_eq!(a, b);
    for (f, bytes) in ["trajectory.csv", "ground_truth.json"].iter().zip(&first) {
        assert_eq!(&fs::read(b.join(f)).unwrap(), bytes, "{f}");
    }

    let traj = a.join("trajectory.csv");
    let outputs: Vec<Vec<Vec<u8>>> = ["r1", "r2"]
        .iter()
        .map(|name| {
            let out_dir = tmp.path().join(name);
            let args = [
                "register",
                p(&traj),
                "--init-frames",
                "10",
                "--refine",
                "--omit-timing",
                "--out-dir",
                p(&out_dir),
            ];
            assert_eq!(code(&solo(&args)), 0);
            ["report.json", "motions.csv"]
                .iter()
                .map(|f| fs::read(out_dir.join(f)).unwrap())
                .collect()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn clean_round_trip_is_exact() {
    let tmp = TempDir::new().unwrap();
    let data = simulate(tmp.path(), "frames = 30\nfeatures = 50\nseed = 2\n");
    let out_dir = tmp.path().join("out");
    let out = solo(&[
        "register",
        p(&data.join("trajectory.csv")),
        "--init-frames",
        "10",
        "--out-dir",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let truth = truth(&data).motions().unwrap();
    let got = read_motions(&out_dir.join("motions.csv")).unwrap();
    assert_eq!(got.len(), 30);
    assert!(motion_error(&got[0], &solo::RigidMotion::identity()) == 0.0);
    for (i, (g, t)) in got.iter().zip(&truth).enumerate() {
        assert!(motion_error(g, t) < 1e-6, "frame {}", i + 1);
    }
    let rep = report(&out_dir);
    let records = rep["records"].as_array().unwrap();
    assert_eq!(records.len(), 29);
    let idx: Vec<u64> = records
        .iter()
        .map(|r| r["frame_index"].as_u64().unwrap())
        .collect();
    assert_eq!(idx, (2..=30).collect::<Vec<u64>>());
    assert_eq!(rep["init"]["inlier_count"], 50);
}

#[test]
fn outlier_tracks_are_reported() {
    let tmp = TempDir::new().unwrap();
    let data = simulate(
        tmp.path(),
        "frames = 20\nfeatures = 60\noutlier_tracks = 3\nseed = 3\n",
    );
    let out_dir = tmp.path().join("out");
    let out = solo(&[
        "register",
        p(&data.join("trajectory.csv")),
        "--init-frames",
        "10",
        "--out-dir",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rejected: Vec<usize> =
        serde_json::from_value(report(&out_dir)["init"]["rejected_outliers"].clone()).unwrap();
    assert_eq!(rejected.len(), 3);
    assert_eq!(rejected, truth(&data).outlier_features);
}

#[test]
fn ransac_backend_agrees_with_solo() {
    let tmp = TempDir::new().unwrap();
    let data = simulate(
        tmp.path(),
        "frames = 20\nfeatures = 60\ncorrupt_frac = 0.05\nseed = 5\n",
    );
    let traj = data.join("trajectory.csv");
    let mut motions = Vec::new();
    for method in ["solo", "ransac"] {
        let out_dir = tmp.path().join(method);
        let out = solo(&[
            "register",
            p(&traj),
            "--init-frames",
            "10",
            "--method",
            method,
            "--out-dir",
            p(&out_dir),
        ]);
        assert_eq!(
            code(&out),
            0,
            "{method}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        motions.push(read_motions(&out_dir.join("motions.csv")).unwrap());
        assert_eq!(report(&out_dir)["method"], method);
    }
    assert_eq!(motions[0].len(), motions[1].len());
    for (i, (a, b)) in motions[0].iter().zip(&motions[1]).enumerate() {
        assert!(motion_error(a, b) < 1e-4, "frame {}", i + 1);
    }
}

#[test]
fn input_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let bad = write(tmp.path(), "bad.toml", "frames = 10\n\nfeaturez = 3\n");
    let out = solo(&[
        "simulate",
        "--config",
        p(&bad),
        "--out-dir",
        p(&tmp.path().join("x")),
    ]);
    assert_eq!(code(&out), 2);
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("line 3"), "{msg}");
    assert!(!tmp.path().join("x").exists());

    let traj = write(tmp.path(), "t.csv", "f1,f2\n1,2\n3,x\n");
    let out = solo(&["register", p(&traj)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3, column 2"));

    let data = simulate(tmp.path(), "frames = 5\nfeatures = 20\n");
    let out = solo(&[
        "register",
        p(&data.join("trajectory.csv")),
        "--init-frames",
        "6",
    ]);
    assert_eq!(code(&out), 2);

    assert_eq!(code(&solo(&["register"])), 2);
}

#[test]
fn solver_failure_exits_with_three() {
    let tmp = TempDir::new().unwrap();
    let data = simulate(
        tmp.path(),
        "frames = 10\nfeatures = 6\noutlier_tracks = 3\n",
    );
    let out_dir = tmp.path().join("out");
    let out = solo(&[
        "register",
        p(&data.join("trajectory.csv")),
        "--init-frames",
        "5",
        "--out-dir",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 3);
    assert!(!out_dir.join("report.json").exists());
}

#[test]
fn seed_env_overrides_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(
        tmp.path(),
        "s.toml",
        "frames = 5\nfeatures = 10\nseed = 1\n",
    );
    let run = |dir: &str, env: Option<&str>, flag: Option<&str>| {
        let out_dir = tmp.path().join(dir);
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_solo"));
        cmd.env_remove("SOLO_SEED");
        if let Some(v) = env {
            cmd.env("SOLO_SEED", v);
        }
        if let Some(v) = flag {
            cmd.args(["--seed", v]);
        }
        cmd.args(["simulate", "--config", p(&cfg), "--out-dir", p(&out_dir)]);
        assert!(cmd.status().unwrap().success());
        fs::read(out_dir.join("trajectory.csv")).unwrap()
    };
    let base = run("a", None, None);
    let env = run("b", Some("77"), None);
    let flag = run("c", None, Some("77"));
    assert_ne!(base, env);
    assert_eq!(env, flag);
}

const BENCH: &str = r#"
[scenario]
frames = 12
features = 40
init_frames = 6
init_corrupt_frac = 0.0

[options]
init_frames = 6
methods = ["solo", "ransac"]

[[sweep]]
name = "corruption"
axis = "corrupt_frac"
values = [0.05, 0.1]
trials = 2
"#;

#[test]
fn bench_writes_tables_independent_of_jobs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write(tmp.path(), "bench.toml", BENCH);
    let mut tables = Vec::new();
    for jobs in ["1", "3"] {
        let out_dir = tmp.path().join(format!("j{jobs}"));
        let out = solo(&[
            "bench",
            "--config",
            p(&cfg),
            "--out-dir",
            p(&out_dir),
            "--jobs",
            jobs,
            "--omit-timing",
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        tables.push((
            fs::read_to_string(out_dir.join("corruption.csv")).unwrap(),
            fs::read_to_string(out_dir.join("corruption_summary.csv")).unwrap(),
        ));
    }
    assert_eq!(tables[0], tables[1]);
    let (detail, summary) = &tables[0];
    let header: Vec<&str> = detail.lines().next().unwrap().split(',').collect();
    for col in [
        "axis_value",
        "trial",
        "method",
        "motion_error",
        "wall_time_ms",
        "iterations",
        "inlier_count",
        "error",
    ] {
        assert!(header.contains(&col), "missing {col}");
    }
    // 2 values x 2 trials x 2 methods
    assert_eq!(detail.lines().count(), 9);
    assert_eq!(summary.lines().count(), 5);
}

#[test]
fn bench_rejects_empty_sweep_before_writing() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("out");
    for text in [
        "[scenario]\nframes = 10\n",
        "[[sweep]]\nname = \"a\"\naxis = \"frames\"\nvalues = []\n",
    ] {
        let cfg = write(tmp.path(), "bench.toml", text);
        let out = solo(&["bench", "--config", p(&cfg), "--out-dir", p(&out_dir)]);
        assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
        assert!(!out_dir.exists());
    }
}

#[test]
fn compare_reports_both_methods() {
    let tmp = TempDir::new().unwrap();
    let data = simulate(tmp.path(), "frames = 15\nfeatures = 40\nseed = 8\n");
    let out_dir = tmp.path().join("cmp");
    let out = solo(&[
        "compare",
        p(&data.join("trajectory.csv")),
        "--init-frames",
        "8",
        "--ground-truth",
        p(&data.join("ground_truth.json")),
        "--out-dir",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(out_dir.join("compare.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (d, s, r) = (col("disagreement"), col("solo_error"), col("ransac_error"));
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 14);
    for row in &rows {
        for c in [d, s, r] {
            assert!(row[c].parse::<f64>().unwrap() < 1e-6);
        }
    }
}
