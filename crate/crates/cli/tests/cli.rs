use std::path::Path;
use std::process::{Command, Output};

fn lafcount(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lafcount"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("spawn lafcount")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth(dir: &Path, frames: &str, split: &str) -> Output {
    lafcount(
        &[
            "synth", "--out", "data", "--frames", frames, "--split", split, "--seed", "4",
            "--height", "40", "--width", "40",
        ],
        dir,
    )
}

const SMALL: [&str; 6] = ["--grid", "4x4", "--codebook-size", "6", "--knn", "2"];

#[test]
fn train_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(synth(d, "30", "20").status.success());

    let mut train = vec!["train", "--manifest", "data/manifest.csv", "--out", "model"];
    train.extend(SMALL);
    let out = lafcount(&train, d);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda="));
    assert!(d.join("model/meta").is_file());

    let out = lafcount(
        &[
            "evaluate",
            "--manifest",
            "data/manifest.csv",
            "--model",
            "model",
            "--predictions",
            "pred.csv",
        ],
        d,
    );
    assert!(out.status.success());
    let summary = stdout(&out);
    assert!(summary.starts_with("mae="), "{summary}");
    assert!(summary.contains(" mse=") && summary.trim_end().ends_with("n=10"));
    let csv = std::fs::read_to_string(d.join("pred.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("index,truth,raw,rounded"));
    let indices: Vec<usize> = lines
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(indices, (20..30).collect::<Vec<_>>());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(synth(d, "24", "16").status.success());
    std::fs::write(
        d.join("run.cfg"),
        "grid=4x4\ncodebook_size=6\nknn=2\nmode=lfv\n",
    )
    .unwrap();
    let out = lafcount(
        &[
            "train",
            "--manifest",
            "data/manifest.csv",
            "--config",
            "run.cfg",
            "--mode",
            "hf",
            "--out",
            "model",
        ],
        d,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let meta = std::fs::read_to_string(d.join("model/meta")).unwrap();
    assert!(meta.contains("config.mode=hf"));
    assert!(meta.contains("config.grid=4x4"));
    assert!(meta.contains("feature_dim=4"));
}

#[test]
fn compare_baselines_prints_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(synth(d, "30", "18").status.success());
    let mut args = vec![
        "compare-baselines",
        "--manifest",
        "data/manifest.csv",
        "--frames",
        "20,21,22",
    ];
    args.extend(SMALL);
    let out = lafcount(&args, d);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0].split_whitespace().collect::<Vec<_>>(),
        ["Method", "MAE", "MSE"]
    );
    let labels: Vec<&str> = lines[1..5]
        .iter()
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(labels, ["HF", "SPPF", "LFV", "W-VLAD"]);
    assert!(lines[1..5]
        .iter()
        .all(|l| l.split_whitespace().count() == 3));
    assert!(text.contains("a=20") && text.contains("b=21") && text.contains("c=22"));
    assert!(text.contains("S(a,b)-S(b,c)"));
}

#[test]
fn single_frame_synth_rejects_split() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth(dir.path(), "1", "1");
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(synth(d, "12", "8").status.success());

    let out = lafcount(
        &[
            "train",
            "--manifest",
            "data/manifest.csv",
            "--knn",
            "500",
            "--out",
            "m",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(2));
    let out = lafcount(
        &[
            "train",
            "--manifest",
            "data/manifest.csv",
            "--grid",
            "3",
            "--out",
            "m",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(2));

    let out = lafcount(
        &["evaluate", "--manifest", "missing.csv", "--model", "m"],
        d,
    );
    assert_eq!(out.status.code(), Some(3));
    std::fs::write(d.join("bad.dafm"), b"NOPE").unwrap();
    let out = lafcount(&["render", "--map", "bad.dafm", "--out", "x.ppm"], d);
    assert_eq!(out.status.code(), Some(3));

    let out = lafcount(
        &[
            "train",
            "--manifest",
            "data/manifest.csv",
            "--grid",
            "100x100",
            "--out",
            "m",
        ],
        d,
    );
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn render_extract_and_encode_write_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(synth(d, "12", "8").status.success());
    let map = "data/frame_00000.dafm";

    assert!(lafcount(&["render", "--map", map, "--out", "f.ppm"], d)
        .status
        .success());
    let ppm = std::fs::read(d.join("f.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n40 40\n255\n"));
    assert_eq!(ppm.len(), b"P6\n40 40\n255\n".len() + 40 * 40 * 3);

    let out = lafcount(
        &["extract", "--map", map, "--grid", "4x4", "--out", "f.lafd"],
        d,
    );
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "descriptors=16 dim=16");
    assert_eq!(&std::fs::read(d.join("f.lafd")).unwrap()[..4], b"LAFD");

    let mut train = vec!["train", "--manifest", "data/manifest.csv", "--out", "model"];
    train.extend(SMALL);
    assert!(lafcount(&train, d).status.success());
    let out = lafcount(
        &[
            "encode", "--model", "model", "--map", map, "--out", "f.venc",
        ],
        d,
    );
    assert!(out.status.success());
    assert_eq!(&std::fs::read(d.join("f.venc")).unwrap()[..4], b"VENC");
}
