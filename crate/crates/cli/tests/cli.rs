//! End-to-end tests that drive the compiled binary: exit codes, error
//! wording, determinism of artifacts, and the shape of written files.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn meanflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_meanflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).expect("config written");
    path.to_string_lossy().into_owned()
}

const SMALL_TRAIN: &str = r#"
log_every = 50
checkpoint_every = 100

[network]
hidden_dim = 16
depth = 2
embed_dim = 8

[training]
iterations = 40
batch_size = 4
lr = 1e-3
ratio_r_neq_t = 0.25
seed = 11

[data]
kind = "gmm"
spec = "1:1.5 -0.5:0"
n = 64
"#;

#[test]
fn config_typo_exits_2_and_names_the_key() {
    let dir = TempDir::new().unwrap();
    let bad = SMALL_TRAIN.replace("ratio_r_neq_t", "ration_r_neq_t");
    let cfg = write_config(dir.path(), "bad.toml", &bad);
    let out_dir = dir.path().join("run");
    let out = meanflow(&["train", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(
        stderr_of(&out).contains("ration_r_neq_t"),
        "stderr should name the unknown key: {}",
        stderr_of(&out)
    );
}

#[test]
fn missing_config_file_exits_2() {
    let out = meanflow(&["train", "--config", "/nonexistent/nowhere.toml", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
}

#[test]
fn train_artifacts_are_deterministic() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "run.toml", SMALL_TRAIN);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&a, &b] {
        let out = meanflow(&["train", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    }
    let metrics_a = fs::read(a.join("metrics.csv")).unwrap();
    let metrics_b = fs::read(b.join("metrics.csv")).unwrap();
    assert_eq!(metrics_a, metrics_b, "metrics files differ between runs");
    let ckpt_a = fs::read(a.join("checkpoint.mfck")).unwrap();
    let ckpt_b = fs::read(b.join("checkpoint.mfck")).unwrap();
    assert_eq!(ckpt_a, ckpt_b, "checkpoints differ between runs");
}

#[test]
fn seed_flag_overrides_config_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "run.toml", SMALL_TRAIN);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let out = meanflow(&["train", "--config", &cfg, "--out", a.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let out = meanflow(&[
        "train",
        "--config",
        &cfg,
        "--seed",
        "12",
        "--out",
        b.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let metrics_a = fs::read(a.join("metrics.csv")).unwrap();
    let metrics_b = fs::read(b.join("metrics.csv")).unwrap();
    assert_ne!(metrics_a, metrics_b, "different seeds should change the run");
}

#[test]
fn divergence_exits_3_with_iteration() {
    let dir = TempDir::new().unwrap();
    let hot = SMALL_TRAIN.replace("lr = 1e-3", "lr = 1e300");
    let cfg = write_config(dir.path(), "hot.toml", &hot);
    let out_dir = dir.path().join("run");
    let out = meanflow(&["train", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "stderr: {}", stderr_of(&out));
    assert!(
        stderr_of(&out).contains("iteration"),
        "divergence report should cite the iteration: {}",
        stderr_of(&out)
    );
}

fn train_small(dir: &TempDir) -> std::path::PathBuf {
    let cfg = write_config(dir.path(), "run.toml", SMALL_TRAIN);
    let out_dir = dir.path().join("run");
    let out = meanflow(&["train", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    out_dir.join("checkpoint.mfck")
}

#[test]
fn sample_is_seeded_and_counts_rows() {
    let dir = TempDir::new().unwrap();
    let ckpt = train_small(&dir);
    let (a, b, c) = (
        dir.path().join("a.csv"),
        dir.path().join("b.csv"),
        dir.path().join("c.csv"),
    );
    for (path, seed) in [(&a, "5"), (&b, "5"), (&c, "6")] {
        let out = meanflow(&[
            "sample",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--n",
            "8",
            "--seed",
            seed,
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    }
    let (ta, tb, tc) = (
        fs::read(&a).unwrap(),
        fs::read(&b).unwrap(),
        fs::read(&c).unwrap(),
    );
    assert_eq!(ta, tb, "same seed should reproduce samples");
    assert_ne!(ta, tc, "different seeds should differ");
    let rows = String::from_utf8(ta).unwrap().lines().count();
    assert_eq!(rows, 8);
}

#[test]
fn sample_class_on_unconditional_checkpoint_exits_2() {
    let dir = TempDir::new().unwrap();
    let ckpt = train_small(&dir);
    let out = meanflow(&[
        "sample",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--n",
        "4",
        "--class",
        "0",
        "--out",
        dir.path().join("s.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(
        stderr_of(&out).contains("unconditional"),
        "stderr: {}",
        stderr_of(&out)
    );
}

#[test]
fn multi_step_sampling_runs() {
    let dir = TempDir::new().unwrap();
    let ckpt = train_small(&dir);
    let path = dir.path().join("multi.csv");
    let out = meanflow(&[
        "sample",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--n",
        "4",
        "--steps",
        "5",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    assert!(stdout_of(&out).contains("5 step"));
}

#[test]
fn verify_passes_on_a_gaussian_and_fails_on_a_wrong_tangent() {
    let grid = "z=-2:2:5,t=0.2:0.9:4,r=0:0.8:4";
    let ok = meanflow(&["verify", "--data", "1:1:0.25", "--grid", grid]);
    assert_eq!(ok.status.code(), Some(0), "stderr: {}", stderr_of(&ok));
    assert!(stdout_of(&ok).contains("identity_residual mean"));
    assert!(stdout_of(&ok).contains("verify ok"));

    let bad = meanflow(&[
        "verify",
        "--data",
        "1:1:0.25",
        "--grid",
        grid,
        "--jvp-tangent",
        "v,0,0",
    ]);
    assert_eq!(bad.status.code(), Some(4), "stderr: {}", stderr_of(&bad));
    assert!(
        stderr_of(&bad).contains("identity residual"),
        "stderr: {}",
        stderr_of(&bad)
    );
}

#[test]
fn verify_writes_a_residual_report() {
    let dir = TempDir::new().unwrap();
    let report = dir.path().join("report.csv");
    let out = meanflow(&[
        "verify",
        "--data",
        "1:1:0.25",
        "--grid",
        "z=-1:1:3,t=0.3:0.9:3,r=0:0.5:2",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let text = fs::read_to_string(&report).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "z0,r,t,u0,v0,residual");
    assert_eq!(lines.count(), 3 * 3 * 2);
}

#[test]
fn eval_is_deterministic_and_seed_sensitive() {
    let dir = TempDir::new().unwrap();
    let ckpt = train_small(&dir);
    let args = |seed: &'static str| {
        vec![
            "eval".to_string(),
            "--ckpt".to_string(),
            ckpt.to_string_lossy().into_owned(),
            "--data".to_string(),
            "1:1.5 -0.5:0".to_string(),
            "--n".to_string(),
            "64".to_string(),
            "--seed".to_string(),
            seed.to_string(),
        ]
    };
    let run = |a: &[String]| {
        let out = Command::new(env!("CARGO_BIN_EXE_meanflow"))
            .args(a)
            .output()
            .unwrap();
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
        stdout_of(&out)
    };
    let first = run(&args("3"));
    let second = run(&args("3"));
    let third = run(&args("4"));
    assert_eq!(first, second, "same seed should reproduce the report");
    assert_ne!(first, third, "different seeds should change the report");
    assert!(first.contains("mmd "));
}

#[test]
fn eval_rejects_w1_on_2d_data() {
    let dir = TempDir::new().unwrap();
    let ckpt = train_small(&dir);
    let out = meanflow(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        "1:1.5 -0.5:0",
        "--metric",
        "w1",
        "--n",
        "16",
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
    assert!(stderr_of(&out).contains("1D"), "stderr: {}", stderr_of(&out));
}

#[test]
fn export_field_blocks_cover_every_t() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("field.csv");
    let out = meanflow(&[
        "export-field",
        "--data",
        "1:1:0.25",
        "--t",
        "0.25,0.5,1",
        "--z",
        "-2:2:5",
        "--r-frac",
        "0:1:3",
        "--out",
        path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr_of(&out));
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "t,r,z0,v0,u0");
    assert_eq!(lines.clone().count(), 3 * 3 * 5);
    for t in ["0.25,", "0.5,", "1.0,"] {
        assert!(
            lines.clone().any(|l| l.starts_with(t)),
            "missing block for t = {t}"
        );
    }
    let degenerate: Vec<&str> = text
        .lines()
        .skip(1)
        .filter(|l| {
            let mut cells = l.split(',');
            cells.next() == cells.next()
        })
        .collect();
    assert!(!degenerate.is_empty());
    for row in degenerate {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[3], cells[4], "u must equal v on r = t rows: {row}");
    }
}

#[test]
fn export_field_rejects_empty_t_list() {
    let out = meanflow(&[
        "export-field",
        "--data",
        "1:1:0.25",
        "--t",
        "",
        "--out",
        "/tmp/unused.csv",
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr_of(&out));
}

#[test]
fn corrupt_checkpoint_is_reported() {
    let dir = TempDir::new().unwrap();
    let bogus = dir.path().join("fake.mfck");
    fs::write(&bogus, b"definitely not a checkpoint").unwrap();
    let out = meanflow(&[
        "sample",
        "--ckpt",
        bogus.to_str().unwrap(),
        "--n",
        "4",
        "--out",
        dir.path().join("s.csv").to_str().unwrap(),
    ]);
    assert_ne!(out.status.code(), Some(0));
    assert!(
        stderr_of(&out).contains("not a checkpoint"),
        "stderr: {}",
        stderr_of(&out)
    );
}
