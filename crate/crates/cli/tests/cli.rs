use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn headpose(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_headpose")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = headpose(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_config(path: &Path) {
    let cfg = serde_json::json!({
        "localizer_hyper": { "epochs": 2, "batch_size": 4, "learning_rate": 0.01, "momentum": 0.9, "halve_every": 0, "seed": 0 },
        "gan": { "lambda_content": 0.1, "label_smooth": 0.9, "adam_beta1": 0.5, "batch_size": 4, "k": 1, "sse_pool": 4,
                 "lr_generator": 0.002, "lr_discriminator": 0.002, "steps": 3, "seed": 0 },
        "pose": { "phase1_epochs": 1, "phase2_epochs": 2, "batch_size": 4, "learning_rate": 0.01, "halve_every": 20,
                  "momentum": 0.9, "weights": { "pitch": 0.2, "roll": 0.35, "yaw": 0.45 }, "seed": 0 }
    });
    fs::write(path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
}

#[test]
fn train_eval_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    let cfg = dir.path().join("run.json");
    tiny_config(&cfg);
    let (d, o, c) = (data.to_str().unwrap(), out.to_str().unwrap(), cfg.to_str().unwrap());

    ok(&["synth", "--out", d, "--subjects", "2", "--frames", "3", "--seed", "5"]);
    let common = ["--dataset", d, "--format", "synthetic", "--out", o, "--config", c];
    for cmd in ["train-localizer", "train-ffd", "train-pose", "train-shoulders"] {
        let mut args = vec![cmd];
        args.extend(common);
        ok(&args);
    }
    for f in ["localizer.ckpt", "ffd.ckpt", "trident.ckpt", "shoulder.ckpt", "pose_phase2.csv", "ffd_history.csv"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }

    let mut eval = vec!["eval", "--use-gt-center"];
    eval.extend(common);
    ok(&eval);
    let first = (fs::read(out.join("report.csv")).unwrap(), fs::read(out.join("report.json")).unwrap());
    ok(&eval);
    assert_eq!(first.0, fs::read(out.join("report.csv")).unwrap());
    assert_eq!(first.1, fs::read(out.join("report.json")).unwrap());

    let printed = ok(&["report", "--out", o]);
    assert!(printed.contains("accuracy") && printed.contains("schema v1"));

    let mut infer = vec!["infer", "--sheets", "--use-gt-center"];
    infer.extend(common);
    ok(&infer);
    let frames: serde_json::Value = serde_json::from_slice(&fs::read(out.join("frames.json")).unwrap()).unwrap();
    let frames = frames.as_array().unwrap();
    assert_eq!(frames.len(), 6);
    assert!(frames.iter().all(|f| f["skipped"].is_null()));
    assert_eq!(fs::read_dir(out.join("sheets")).unwrap().count(), 6);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let m = missing.to_str().unwrap();
    assert_eq!(headpose(&["train-localizer"]).status.code(), Some(2));
    assert_eq!(headpose(&["train-localizer", "--config", m]).status.code(), Some(2));
    assert_eq!(headpose(&["train-localizer", "--dataset", m]).status.code(), Some(3));
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"unknown\": 1}").unwrap();
    assert_eq!(headpose(&["eval", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    let data = dir.path().join("data");
    ok(&["synth", "--out", data.to_str().unwrap(), "--subjects", "1", "--frames", "2"]);
    let out = dir.path().join("out");
    let eval = headpose(&["eval", "--dataset", data.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(eval.status.code(), Some(2), "missing checkpoints are a configuration error");
}
