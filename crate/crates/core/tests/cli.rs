use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_pyramid");

const SMALL: &str = r#"
[run]
seed = 11

[data]
frames = 8
height = 4
width = 4
clips = 24

[model]
width = 8

[train]
steps = 30
batch_size = 4
eval_every = 10
eval_clips = 6

[sample]
clips = 2

[eval]
clips = 6
permutations = 10

[verify]
trials = 30
"#;

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, format!("{SMALL}{extra}")).unwrap();
    p
}

fn pyramid(args: &[&str], threads: Option<&str>) -> Output {
    let mut c = Command::new(BIN);
    c.args(args);
    if let Some(t) = threads {
        c.env("PYRAMID_THREADS", t);
    }
    c.output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_manifest_csv_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("run");
    let o = pyramid(&["train", "--config", s(&cfg), "--out", s(&out)], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = std::fs::read_to_string(out.join("run_manifest.txt")).unwrap();
    assert!(manifest.contains("command = train"), "{manifest}");
    assert!(manifest.contains("version = "));
    assert!(manifest.contains("--- config ---"));
    assert!(manifest.contains("seed = 11"));
    let csv = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "step,wall_seconds,loss,energy_distance");
    assert_eq!(rows.len(), 4);
    assert!(out.join("model.ckpt").exists());

    let o = pyramid(&["sample", "--config", s(&cfg), "--out", s(&out)], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let index = std::fs::read_to_string(out.join("samples/index.txt")).unwrap();
    assert_eq!(index.lines().count(), 2);

    let o = pyramid(&["eval", "--config", s(&cfg), "--out", s(&out)], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("eval_report.txt")).unwrap();
    for key in ["energy_distance", "per_frame_mse_to_nearest", "wall_time_train", "wall_time_sample", "token_pair_ratio"] {
        assert!(report.contains(key), "{report}");
    }
}

#[test]
fn checkpoints_repeat_and_ignore_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let mut ckpts = Vec::new();
    for (i, threads) in [None, None, Some("1")].into_iter().enumerate() {
        let out = dir.path().join(format!("r{i}"));
        let o = pyramid(&["train", "--config", s(&cfg), "--out", s(&out)], threads);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        ckpts.push(std::fs::read(out.join("model.ckpt")).unwrap());
    }
    assert_eq!(ckpts[0], ckpts[1]);
    assert_eq!(ckpts[0], ckpts[2]);
}

#[test]
fn seed_flag_changes_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(pyramid(&["train", "--config", s(&cfg), "--out", s(&a)], None).status.success());
    assert!(pyramid(&["train", "--config", s(&cfg), "--out", s(&b), "--seed", "12"], None).status.success());
    assert_ne!(std::fs::read(a.join("model.ckpt")).unwrap(), std::fs::read(b.join("model.ckpt")).unwrap());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "\n[schedule]\nstages = 0\n");
    let out = dir.path().join("x");
    let o = pyramid(&["train", "--config", s(&bad), "--out", s(&out)], None);
    assert_eq!(o.status.code(), Some(2));

    let cfg = dir.path().join("unknown.toml");
    std::fs::write(&cfg, "[train]\nstepz = 3\n").unwrap();
    assert_eq!(pyramid(&["train", "--config", s(&cfg), "--out", s(&out)], None).status.code(), Some(2));

    // no output directory anywhere
    let cfg = write_config(dir.path(), "");
    assert_eq!(pyramid(&["train", "--config", s(&cfg)], None).status.code(), Some(2));
    assert_eq!(pyramid(&["train", "--config", s(&cfg), "--out", s(&out)], Some("many")).status.code(), Some(2));
}

#[test]
fn verify_passes_and_flags_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("ok");
    let o = pyramid(&["verify", "--config", s(&cfg), "--out", s(&out)], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = std::fs::read_to_string(out.join("verify_report.txt")).unwrap();
    assert!(report.lines().filter(|l| l.starts_with("PASS")).count() >= 5, "{report}");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, SMALL.replace("trials = 30", "trials = 30\nrenoise_scale_factor = 1.05")).unwrap();
    let out = dir.path().join("bad");
    let o = pyramid(&["verify", "--config", s(&bad), "--out", s(&out)], None);
    assert_eq!(o.status.code(), Some(4));
    let report = std::fs::read_to_string(out.join("verify_report.txt")).unwrap();
    assert!(report.contains("FAIL renoise-covariance"), "{report}");
}
