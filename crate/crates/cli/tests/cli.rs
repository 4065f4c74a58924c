//! End-to-end tests of the uavseg binary: command wiring, artifacts on
//! disk, and exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn uavseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uavseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Overrides shrinking the default config to a sub-second toy run.
fn toy_model_args() -> Vec<String> {
    [
        "model.encoder.global_input_size=16",
        "model.encoder.fine_input_size=32",
        "model.encoder.patch_size=8",
        "model.encoder.global_channels=[8,8,8,8]",
        "model.encoder.fine_channels=[4,6,8]",
        "model.backbone.d_model=16",
        "model.backbone.depth=1",
        "model.backbone.heads=2",
        "model.backbone.d_ff=24",
        "model.backbone.embed_dim=8",
        "model.backbone.max_seq=128",
        "model.decoder.depth=1",
        "model.decoder.embed_dim=8",
        "model.decoder.output_size=[32,32]",
        "train.epochs=1",
        "train.steps_per_epoch=2",
        "train.grad_accum_steps=1",
    ]
    .iter()
    .flat_map(|s| ["--set".to_string(), s.to_string()])
    .collect()
}

fn synth_corpus(dir: &Path, count: usize) {
    let out = uavseg(&[
        "synth",
        "--out",
        dir.to_str().unwrap(),
        "--count",
        &count.to_string(),
        "--canvas",
        "32",
        "--seed",
        "7",
    ]);
    assert_success(&out);
}

fn train_args(data: &Path, run: &Path) -> Vec<String> {
    let mut args = vec![
        "train".to_string(),
        "--data".to_string(),
        data.to_str().unwrap().to_string(),
        "--out".to_string(),
        run.to_str().unwrap().to_string(),
    ];
    args.extend(toy_model_args());
    args
}

#[test]
fn synth_train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    let run = tmp.path().join("run");
    synth_corpus(&corpus, 10);
    assert!(corpus.join("records.jsonl").exists());
    assert!(corpus.join("images/synth_00000.png").exists());
    assert!(corpus.join("masks/synth_00000.png").exists());

    let args = train_args(&corpus, &run);
    let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    let out = uavseg(&refs);
    assert_success(&out);
    for artifact in [
        "checkpoint.bin",
        "vocab.json",
        "config.json",
        "loss.jsonl",
        "report.json",
        "report.csv",
        "report.md",
    ] {
        assert!(run.join(artifact).exists(), "{artifact}");
    }

    let ovl = tmp.path().join("overlays");
    let csv = tmp.path().join("eval.csv");
    let out = uavseg(&[
        "eval",
        "--run",
        run.to_str().unwrap(),
        "--split",
        "val",
        "--csv",
        csv.to_str().unwrap(),
        "--overlays",
        ovl.to_str().unwrap(),
        "--overlay-count",
        "2",
    ]);
    assert_success(&out);
    let table = String::from_utf8_lossy(&out.stdout);
    assert!(table.contains("| val |"), "{table}");
    let csv_text = std::fs::read_to_string(&csv).unwrap();
    assert!(csv_text.starts_with("split,attribute_giou"), "{csv_text}");
    assert_eq!(std::fs::read_dir(&ovl).unwrap().count(), 2);
}

#[test]
fn eval_is_deterministic_across_invocations() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    let run = tmp.path().join("run");
    synth_corpus(&corpus, 10);
    let args = train_args(&corpus, &run);
    let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    assert_success(&uavseg(&refs));

    let eval = |path: &str| {
        let out = uavseg(&["eval", "--run", run.to_str().unwrap(), "--csv", path]);
        assert_success(&out);
        std::fs::read_to_string(path).unwrap()
    };
    let a = eval(tmp.path().join("a.csv").to_str().unwrap());
    let b = eval(tmp.path().join("b.csv").to_str().unwrap());
    assert_eq!(a, b);
}

#[test]
fn run_trained_on_relative_corpus_evaluates_from_another_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    let run = tmp.path().join("run");
    synth_corpus(&corpus, 10);

    // train with a relative --data, resolved against the training cwd
    let mut args = vec![
        "train".to_string(),
        "--data".to_string(),
        "corpus".to_string(),
        "--out".to_string(),
        run.to_str().unwrap().to_string(),
    ];
    args.extend(toy_model_args());
    let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    let out = Command::new(env!("CARGO_BIN_EXE_uavseg"))
        .args(&refs)
        .current_dir(tmp.path())
        .output()
        .expect("binary runs");
    assert_success(&out);

    // the saved run must stay evaluable from an unrelated cwd
    let elsewhere = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_uavseg"))
        .args(["eval", "--run", run.to_str().unwrap()])
        .current_dir(elsewhere.path())
        .output()
        .expect("binary runs");
    assert_success(&out);
}

#[test]
fn unknown_grid_exits_with_input_code() {
    let tmp = tempfile::tempdir().unwrap();
    let out = uavseg(&[
        "ablate",
        "--grid",
        "bogus",
        "--out",
        tmp.path().join("g").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("fusion_layers"), "{stderr}");
    assert!(stderr.contains("decoder_depth"), "{stderr}");
}

#[test]
fn divergence_exits_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    let run = tmp.path().join("run");
    synth_corpus(&corpus, 10);
    let mut args = train_args(&corpus, &run);
    args.extend([
        "--set".to_string(),
        "optim.lr=1e10".to_string(),
        "--set".to_string(),
        "optim.warmup_steps=0".to_string(),
        "--set".to_string(),
        "train.steps_per_epoch=50".to_string(),
    ]);
    let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    let out = uavseg(&refs);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("step"), "{stderr}");
}

#[test]
fn missing_corpus_exits_with_input_code() {
    let tmp = tempfile::tempdir().unwrap();
    let args = train_args(&tmp.path().join("nope"), &tmp.path().join("run"));
    let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    let out = uavseg(&refs);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablate_cot_grid_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    let grid = tmp.path().join("grid");
    synth_corpus(&corpus, 10);
    let mut args = vec![
        "ablate".to_string(),
        "--grid".to_string(),
        "cot".to_string(),
        "--data".to_string(),
        corpus.to_str().unwrap().to_string(),
        "--out".to_string(),
        grid.to_str().unwrap().to_string(),
    ];
    args.extend(toy_model_args());
    let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    let out = uavseg(&refs);
    assert_success(&out);
    let csv = std::fs::read_to_string(grid.join("report.csv")).unwrap();
    assert!(csv.lines().count() == 3, "{csv}");
    assert!(csv.contains("cot=on") && csv.contains("cot=off"), "{csv}");
    assert!(grid.join("report.md").exists());
}

#[test]
fn stats_and_overlay_commands_work() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    synth_corpus(&corpus, 6);
    let out = uavseg(&["stats", "--data", corpus.to_str().unwrap()]);
    assert_success(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("| samples | 6 |"), "{text}");

    let overlay = tmp.path().join("overlay.png");
    let out = uavseg(&[
        "overlay",
        "--image",
        corpus.join("images/synth_00000.png").to_str().unwrap(),
        "--pred",
        corpus.join("masks/synth_00000.png").to_str().unwrap(),
        "--target",
        corpus.join("masks/synth_00000.png").to_str().unwrap(),
        "--out",
        overlay.to_str().unwrap(),
    ]);
    assert_success(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("IoU 1.000"));
    assert!(overlay.exists());
}
