use std::path::Path;
use std::process::{Command, Output};

fn vcas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vcas")).args(args).output().expect("spawn vcas")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn synth(dir: &Path, frames: &str) -> String {
    let out = dir.join("data");
    let o = vcas(&["synth", "--seed", "7", "--frames", frames, "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out.join("manifest.json").to_str().unwrap().to_owned()
}

#[test]
fn synth_then_evaluate_ca_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "5");
    let out = dir.path().join("reports");
    let o = vcas(&["evaluate-ca", "--manifest", &manifest, "--efs", "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("ca_report.csv")).unwrap();
    assert_eq!(String::from_utf8(o.stdout).unwrap(), csv);
    assert!(csv.starts_with("split,frames,failed,SQ,RQ,CAQ,TP,FP,FN,EFS,"));
    assert!(csv.lines().any(|l| l.starts_with("all,5,0,")));
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("ca_report.json")).unwrap()).unwrap();
    assert_eq!(json["frames"].as_array().unwrap().len(), 5);
}

#[test]
fn panoptic_and_openset_reports_default_to_manifest_dir() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "3");
    for (cmd, name) in [("evaluate-panoptic", "panoptic"), ("evaluate-openset", "openset")] {
        let o = vcas(&[cmd, "--manifest", &manifest, "--workers", "2"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert!(dir.path().join("data").join(format!("{name}_report.csv")).exists());
    }
}

#[test]
fn missing_manifest_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = vcas(&["evaluate-ca", "--manifest", missing.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.json"));
}

#[test]
fn unknown_flag_and_bad_value_exit_2() {
    assert_eq!(code(&vcas(&["stats", "--bogus"])), 2);
    assert_eq!(code(&vcas(&["evaluate-ca", "--manifest", "m.json", "--void-policy", "maybe"])), 2);
    assert_eq!(code(&vcas(&["--help"])), 0);
}

#[test]
fn broken_frame_exits_1_and_others_still_score() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "3");
    let data = dir.path().join("data");
    std::fs::write(data.join("000001_ca_pred.png"), b"not a png").unwrap();
    let o = vcas(&["evaluate-ca", "--manifest", &manifest]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("frame 000001"));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("all,3,1,")), "{csv}");
}

#[test]
fn train_openset_toy_writes_loss_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"train": {"epochs": 40, "milestones": [30]}, "toy": {"points": 400}, "out_dir": "run"}"#,
    )
    .unwrap();
    let o = vcas(&["train-openset", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("run");
    let loss = std::fs::read_to_string(run.join("loss.csv")).unwrap();
    assert_eq!(loss.lines().next().unwrap(), "step,epoch,lr,l_seg,l_cl,total,gamma");
    assert_eq!(loss.lines().count(), 41);
    assert!(run.join("checkpoint.bin").exists());
    assert!(run.join("projection.bin").exists());
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 40);
}

#[test]
fn train_openset_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"epochs": 1}}"#).unwrap();
    assert_eq!(code(&vcas(&["train-openset", "--config", cfg.to_str().unwrap()])), 2);
    std::fs::write(&cfg, r#"{"train": {"learning_rate": 1}, "toy": {}}"#).unwrap();
    assert_eq!(code(&vcas(&["train-openset", "--config", cfg.to_str().unwrap()])), 2);
}

#[test]
fn flow_prototype_and_stats_commands() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "5");
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_owned();

    let o = vcas(&["suppress-flow", "--manifest", &manifest, "--frame", "000000", "--out-dir", &p("flow"), "--color"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["000000_ego.png", "000000_residual.png", "000000_residual_color.png"] {
        assert!(dir.path().join("flow").join(f).exists(), "{f}");
    }
    assert_eq!(code(&vcas(&["suppress-flow", "--manifest", &manifest, "--frame", "zz", "--out-dir", &p("flow")])), 2);

    let o = vcas(&["colorize-flow", "--flow", &p("flow/000000_residual.png"), "--out", &p("c.png"), "--max-norm", "5"]);
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("c.png").exists());

    assert_eq!(code(&vcas(&["prototypes", "--manifest", &manifest, "--out", &p("protos.json")])), 0);
    let protos: serde_json::Value = serde_json::from_slice(&std::fs::read(p("protos.json")).unwrap()).unwrap();
    let n = protos["prototypes"].as_array().unwrap().len();
    assert!(n >= 2);
    assert_eq!(protos["distances"].as_array().unwrap().len(), n);

    let o = vcas(&["dendrogram", "--prototypes", &p("protos.json"), "--linkage", "single", "--out", &p("tree.json")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let tree: serde_json::Value = serde_json::from_slice(&std::fs::read(p("tree.json")).unwrap()).unwrap();
    assert_eq!(tree["leaves"], n);

    let o = vcas(&["stats", "--manifest", &manifest, "--out-dir", &p("stats")]);
    assert_eq!(code(&o), 0);
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with("split,moving,static,total\n"));
    assert!(dir.path().join("stats/stats.json").exists());
}
