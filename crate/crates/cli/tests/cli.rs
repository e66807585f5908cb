use std::fs;
use std::path::Path;
use std::process::Command;

use trajfield_cli::RunManifest;

const TINY: &str = "\
width = 16
height = 16
focal = 16
frames = 5
steps = 2
rays = 8
samples = 8
mf_points = 4
render_samples = 8
";

fn trajfield(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_trajfield")).args(args).env("RUST_LOG", "warn").output().unwrap();
    out
}

fn ok(args: &[&str]) {
    let out = trajfield(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.cfg");
    fs::write(&cfg, TINY).unwrap();
    let (data, run) = (d.join("data"), d.join("run"));
    ok(&["synth", "--config", s(&cfg), "--out", s(&data)]);
    assert!(data.join("rgb/0004.png").exists() && data.join("fixed-view/rgb/0004.png").exists());

    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run)]);
    let ckpt = run.join("model.ckpt");
    let manifest = RunManifest::read(&run).unwrap();
    assert_eq!(manifest.get("seed"), Some("0"));
    assert_eq!(manifest.get("checkpoint.sha256").unwrap(), trajfield_cli::manifest::file_hash(&ckpt).unwrap());

    // Retraining with the same seed reproduces the checkpoint.
    let run2 = d.join("run2");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&run2)]);
    assert_eq!(fs::read(&ckpt).unwrap(), fs::read(run2.join("model.ckpt")).unwrap());

    let render = d.join("render");
    ok(&["render", "--ckpt", s(&ckpt), "--data", s(&data), "--protocol", "fixed-view", "--out", s(&render)]);
    assert!(render.join("rgb/0004.png").exists() && render.join("flow_fw/0000.png").exists());
    let report = d.join("report.txt");
    ok(&["eval", "--pred", s(&render), "--gt", s(&data.join("fixed-view")), "--report", s(&report)]);
    assert!(fs::read_to_string(&report).unwrap().starts_with("protocol=training-frames\n"));

    // Ground truth against itself.
    let self_report = d.join("self.txt");
    ok(&["eval", "--pred", s(&data), "--gt", s(&data), "--report", s(&self_report), "--frames", "0,2"]);
    let text = fs::read_to_string(&self_report).unwrap();
    assert!(text.contains("mean.psnr=99.0\nmean.ssim=1.0\n"), "{text}");
    assert!(!text.contains("frame.0001"));

    // flip;flip renders bit-identically to the unedited render.
    let (plain, flipped) = (d.join("plain"), d.join("flipped"));
    ok(&["render", "--ckpt", s(&ckpt), "--data", s(&data), "--protocol", "train-views", "--out", s(&plain)]);
    ok(&["edit", "--ckpt", s(&ckpt), "--data", s(&data), "--ops", "flip;flip", "--out", s(&flipped)]);
    for i in 0..5 {
        let name = format!("rgb/{i:04}.png");
        assert_eq!(fs::read(plain.join(&name)).unwrap(), fs::read(flipped.join(&name)).unwrap());
    }

    // Fine-tuning from the checkpoint.
    let tuned = d.join("tuned");
    ok(&["train", "--config", s(&cfg), "--data", s(&data), "--init", s(&ckpt), "--out", s(&tuned)]);
    assert!(tuned.join("model.ckpt").exists());
}

#[test]
fn errors_name_missing_paths() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.ckpt");
    let out = trajfield(&["render", "--ckpt", s(&missing), "--data", s(dir.path()), "--out", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.ckpt"));

    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "colour = red\n").unwrap();
    let out = trajfield(&["synth", "--config", s(&cfg), "--out", s(&dir.path().join("d"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key `colour`"));

    let data = dir.path().join("absent");
    let out = trajfield(&["train", "--data", s(&data), "--out", s(&dir.path().join("r"))]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent"));
}

#[test]
fn config_command_prints_parseable_defaults() {
    let out = trajfield(&["config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(trajfield_core::RunConfig::parse(&text).unwrap(), trajfield_core::RunConfig::default());
}
