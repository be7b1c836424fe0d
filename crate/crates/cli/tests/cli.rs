use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use summit_core::data::{load_image, save_image, synthesize_pairs};
use summit_core::{DegradationSpec, ModelConfig, TrainOptions, TrainState};

fn summit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_summit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_model() -> ModelConfig {
    let mut m = ModelConfig::with_width(8);
    m.enc_blocks = [1, 1, 1, 2];
    m
}

/// A freshly initialized (identity) checkpoint for a tiny model.
fn init_checkpoint(path: &Path) {
    let opts = TrainOptions { patch: 32, ..TrainOptions::default() };
    TrainState::new(&tiny_model(), &opts).unwrap().to_checkpoint().save(path).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn inspect_reports_width_params_and_macs() {
    let o = summit(&["inspect", "--width", "32"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    assert!(line.contains("width=32"), "{line}");
    assert!(line.contains("params=16.72M"), "{line}");
    assert!(line.contains("macs=18.70G"), "{line}");
    assert!(line.contains("resolution=256x256"), "{line}");
    let o = summit(&["inspect", "--width", "64", "--ablation", "baseline", "--resolution", "128"]);
    assert!(stdout(&o).contains("width=64 ablation=baseline"));
}

#[test]
fn bad_input_gives_one_line_diagnostics() {
    for args in [
        &["inspect", "--width", "7"][..],
        &["inspect", "--set", "bogus=1"],
        &["inspect", "--set", "noequals"],
        &["train", "--out", "/nonexistent/x"],
        &["inspect", "--config", "/nonexistent/config.txt"],
    ] {
        let o = summit(args);
        assert!(!o.status.success(), "{args:?}");
        let err = stderr(&o);
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("error: "), "{err}");
    }
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.txt");
    fs::write(&cfg, "width = 16\nablation = ffm\n# comment\n").unwrap();
    let o = summit(&["inspect", "--config", p(&cfg)]);
    assert!(stdout(&o).contains("width=16 ablation=ffm"), "{}", stdout(&o));
    let o = summit(&["inspect", "--config", p(&cfg), "--width", "24", "--set", "ablation=mhamb"]);
    assert!(stdout(&o).contains("width=24 ablation=mhamb"), "{}", stdout(&o));
    let o = summit(&["inspect", "--config", p(&cfg), "--width", "custom"]);
    assert!(stdout(&o).contains("width=16"));
    fs::write(&cfg, "width = 16\nwidht = 3\n").unwrap();
    let o = summit(&["inspect", "--config", p(&cfg)]);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn synth_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = summit(&["synth", "--out", p(&data), "--seed", "3", "--set", "count=6", "--set", "size=32"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_dir(data.join("input")).unwrap().count(), 6);
    assert!(fs::read_to_string(data.join("spec.txt")).unwrap().contains("airlight"));

    let run = dir.path().join("run");
    let o = summit(&[
        "train", "--data", p(&data), "--out", p(&run), "--width", "8", "--iters", "4", "--batch", "2",
        "--set", "patch=32", "--set", "enc_blocks=1,1,1,1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let echoed = fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(echoed.contains("iters = 4") && echoed.contains("width = 8"), "{echoed}");
    assert!(fs::read_to_string(run.join("train.log")).unwrap().contains("step=4"));
    let ck = run.join("checkpoint.bin");

    let ev = dir.path().join("eval");
    let o = summit(&["eval", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&ev), "--tlc"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(ev.join("metrics.csv")).unwrap().lines().count(), 7);
    assert!(fs::read_to_string(ev.join("summary.txt")).unwrap().contains("tlc_window=32"));

    // the echoed config alone reproduces the run
    let again = dir.path().join("again");
    let o = summit(&["train", "--config", p(&run.join("config.txt")), "--out", p(&again)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(again.join("checkpoint.bin")).unwrap(), fs::read(&ck).unwrap());

    let o = summit(&["eval", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&ev), "--width", "16"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("mismatch") && err.contains("width: checkpoint=8 config=16"), "{err}");
}

#[test]
fn eval_on_identical_pairs_reports_unit_ssim() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("same");
    for sub in ["input", "target"] {
        fs::create_dir_all(data.join(sub)).unwrap();
    }
    for pair in synthesize_pairs(3, 32, &DegradationSpec::default(), 9).unwrap() {
        let name = format!("{}.png", pair.id);
        save_image(&data.join("input").join(&name), &pair.clean).unwrap();
        save_image(&data.join("target").join(&name), &pair.clean).unwrap();
    }
    let ck = dir.path().join("init.bin");
    init_checkpoint(&ck);
    let out = dir.path().join("eval");
    let o = summit(&["eval", "--checkpoint", p(&ck), "--data", p(&data), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("ssim=1.000000"), "{}", stdout(&o));
}

#[test]
fn restore_with_initial_checkpoint_is_pixel_identical() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = dir.path().join("in");
    fs::create_dir_all(&inputs).unwrap();
    let pairs = synthesize_pairs(3, 40, &DegradationSpec::default(), 4).unwrap();
    for (name, pair) in ["c.png", "a.png", "b.png"].iter().zip(&pairs) {
        // odd sizes exercise pad-and-crop
        save_image(&inputs.join(name), &pair.degraded.crop(0, 0, 37, 29).unwrap()).unwrap();
    }
    fs::write(inputs.join("notes.txt"), "skip me").unwrap();
    let ck = dir.path().join("init.bin");
    init_checkpoint(&ck);
    let out = dir.path().join("out");
    let o = summit(&["restore", "--checkpoint", p(&ck), "--input", p(&inputs), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let order: Vec<String> = stdout(&o).lines().map(|l| l.split(" -> ").next().unwrap().to_string()).collect();
    let names: Vec<&str> = order.iter().map(|l| Path::new(l).file_name().unwrap().to_str().unwrap()).collect();
    assert_eq!(names, ["a.png", "b.png", "c.png"]);
    for name in ["a.png", "b.png", "c.png"] {
        assert_eq!(load_image(&out.join(name)).unwrap(), load_image(&inputs.join(name)).unwrap());
    }
    assert!(out.join("config.txt").exists());

    let before = fs::read(inputs.join("a.png")).unwrap();
    let o = summit(&["restore", "--checkpoint", p(&ck), "--input", p(&inputs), "--out", p(&inputs)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("refusing to overwrite"), "{}", stderr(&o));
    assert_eq!(fs::read(inputs.join("a.png")).unwrap(), before);
    assert!(!inputs.join("config.txt").exists());
}
