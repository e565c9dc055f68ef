use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn blockfall(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_blockfall"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, seed: &str, background: &str) {
    let out = blockfall(&[
        "synth",
        "--output-dir",
        p(dir),
        "--seed",
        seed,
        "--width",
        "300",
        "--height",
        "300",
        "--n-blocks",
        "20",
        "--background",
        background,
        "--shift-x",
        "-0.7",
        "--shift-y",
        "0.4",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&blockfall(&["--help"])), 0);
    assert_eq!(code(&blockfall(&["run", "--help"])), 0);
    assert_eq!(code(&blockfall(&["--version"])), 0);
}

#[test]
fn unknown_subcommands_and_flags_exit_one() {
    assert_eq!(code(&blockfall(&["frobnicate"])), 1);
    assert_eq!(code(&blockfall(&["detect", "--bogus"])), 1);
    assert_eq!(code(&blockfall(&[])), 1);
}

#[test]
fn missing_inputs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = blockfall(&[
        "detect",
        "--before",
        p(&d.join("b.png")),
        "--after",
        p(&d.join("a.png")),
        "--after-model",
        p(&d.join("m1")),
        "--diff-model",
        p(&d.join("m2")),
        "--output-dir",
        p(&d.join("out")),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("b.png"));
    assert_eq!(code(&blockfall(&["detect", "--before", "x.png"])), 1);
    assert_eq!(code(&blockfall(&["train", "--config", p(&d.join("none.toml"))])), 1);
}

#[test]
fn out_of_range_values_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "3", "flat");
    let out = blockfall(&[
        "coregister",
        "--before",
        p(&d.join("before.png")),
        "--after",
        p(&d.join("after.png")),
        "--output-dir",
        p(&d.join("out")),
        "--tile-size",
        "4",
    ]);
    assert_eq!(code(&out), 1);
    let out = blockfall(&[
        "evaluate",
        "--truth",
        p(&d.join("truth_labels.png")),
        "--predictions",
        p(&d.join("truth_labels.png")),
        "--iou-min",
        "1.5",
        "--output-dir",
        p(&d.join("eval")),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn unreadable_image_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("before.png"), b"not a png").unwrap();
    fs::write(d.join("after.png"), b"not a png either").unwrap();
    let out = blockfall(&[
        "coregister",
        "--before",
        p(&d.join("before.png")),
        "--after",
        p(&d.join("after.png")),
        "--output-dir",
        p(&d.join("out")),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn coregister_writes_alignment_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "5", "textured");
    let out_dir = d.join("reg");
    let out = blockfall(&[
        "coregister",
        "--before",
        p(&d.join("before.png")),
        "--after",
        p(&d.join("after.png")),
        "--output-dir",
        p(&out_dir),
        "--tile-size",
        "150",
        "--debug-artifacts",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(out_dir.join("alignment.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 4);
    assert!(out_dir.join("difference.png").is_file());
    assert!(out_dir.join("aligned_before.png").is_file());
}

#[test]
fn evaluating_truth_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "9", "layered");
    let labels = d.join("truth_labels.png");
    let out = blockfall(&[
        "evaluate",
        "--truth",
        p(&labels),
        "--predictions",
        p(&labels),
        "--output-dir",
        p(&d.join("eval")),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = fs::read_to_string(d.join("eval/metrics.csv")).unwrap();
    assert!(metrics.lines().count() >= 3);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("100.00"), "{text}");
}

#[test]
fn synth_train_run_flow() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(&d.join("train"), "21", "textured");
    synth(&d.join("test"), "22", "textured");
    fs::write(
        d.join("train.toml"),
        r#"after_model = "models/after.svr"
diff_model = "models/diff.svr"

[[images]]
before = "train/before.png"
after = "train/after.png"
annotations = "train/annotations.csv"
"#,
    )
    .unwrap();
    let out = blockfall(&["train", "--config", p(&d.join("train.toml"))]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("models/after.svr").is_file());
    assert!(d.join("models/diff.svr").is_file());

    fs::write(
        d.join("pair.toml"),
        r#"before = "test/before.png"
after = "test/after.png"
output_dir = "out"
truth = "test/truth_labels.png"

[models]
after = "models/after.svr"
difference = "models/diff.svr"
"#,
    )
    .unwrap();
    let out = blockfall(&["run", "--config", p(&d.join("pair.toml")), "--debug-artifacts"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "final_blocks.csv",
        "final_labels.png",
        "overlay.png",
        "metrics.csv",
        "run_record.json",
        "edges.png",
    ] {
        assert!(d.join("out").join(name).is_file(), "{name}");
    }
    let blocks = fs::read_to_string(d.join("out/final_blocks.csv")).unwrap();
    assert!(blocks.lines().count() > 10, "{blocks}");

    let out = blockfall(&[
        "detect",
        "--config",
        p(&d.join("pair.toml")),
        "--output-dir",
        p(&d.join("out2")),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(d.join("out2/final_blocks.csv")).unwrap(),
        fs::read(d.join("out/final_blocks.csv")).unwrap()
    );
    assert!(!d.join("out2/metrics.csv").exists());
}
