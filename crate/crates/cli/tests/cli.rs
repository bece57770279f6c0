use std::path::Path;
use std::process::{Command, Output};

use prefdiff::config::RunConfig;

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let mut c = RunConfig::default();
    for (k, v) in [
        ("model.hidden", "16"),
        ("model.time_embed_dim", "8"),
        ("schedule.n_steps", "10"),
        ("pretrain.n_samples", "40"),
        ("pretrain.epochs", "2"),
        ("prefs.n_conditions", "8"),
        ("prefs.steps", "10"),
        ("prefs.s11_steps", "2,4,6,10"),
        ("eval.n_conditions", "12"),
        ("eval.inference_steps", "10"),
        ("eval.pref_samples", "2"),
    ] {
        c.set(k, v).unwrap();
    }
    let path = dir.join("tiny.conf");
    std::fs::write(&path, c.to_text()).unwrap();
    path
}

fn prefdiff(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prefdiff"))
        .args(args)
        .env("RUST_LOG", "info")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let conf = tiny_config(dir.path());
    let out = dir.path().join("run");
    let common = ["--config", conf.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "--workers", "1"];
    let run = |cmd: &[&str]| {
        let mut args = common.to_vec();
        args.extend_from_slice(cmd);
        let o = prefdiff(&args);
        assert!(o.status.success(), "{cmd:?}: {}", String::from_utf8_lossy(&o.stderr));
        o
    };

    let o = run(&["pretrain"]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("phase: pretrain"));
    assert!(out.join("reference.ckpt").exists());

    let o = run(&["build-prefs"]);
    assert!(stdout(&o).contains("Overall"));

    run(&["align"]);
    assert!(out.join("aligned.ckpt").exists() && out.join("sft.ckpt").exists());
    let metrics = std::fs::read_to_string(out.join("align_metrics.csv")).unwrap();
    let phases: Vec<&str> = metrics.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    let first_dpo = phases.iter().position(|p| *p == "dpo").unwrap();
    assert!(phases[..first_dpo].iter().all(|p| *p == "sft"));

    let reference = out.join("reference.ckpt");
    let o = run(&["eval", "--baseline", reference.to_str().unwrap()]);
    let table = stdout(&o);
    assert!(table.contains("baseline") && table.contains("temporal_order_accuracy"), "{table}");
    assert!(out.join("eval.json").exists());

    let o = run(&["inspect-prefs"]);
    assert!(stdout(&o).contains("strategy"));
}

#[test]
fn missing_config_is_a_usage_error() {
    let o = prefdiff(&["--config", "/nonexistent/prefdiff.conf", "pretrain"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_override_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = prefdiff(&["--out-dir", dir.path().to_str().unwrap(), "--set", "model.hidden=abc", "pretrain"]);
    assert_eq!(o.status.code(), Some(2));
    let o = prefdiff(&["--forward-coeff", "cubic", "pretrain"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = prefdiff(&["--out-dir", dir.path().to_str().unwrap(), "eval"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn corrupt_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("aligned.ckpt"), b"not a checkpoint").unwrap();
    let o = prefdiff(&["--out-dir", dir.path().to_str().unwrap(), "eval"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("corrupt"));
}
