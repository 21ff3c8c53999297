use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
schema = "bethe.experiment/v1"
name = "tiny"

[task]
kind = "softcon"
length = 5
splits = { train = 30, dev = 10, test = 20 }
seed = 3

[solver]
anytime_iters = 5

[solver.bethe]
max_iters = 50

[learner]
epochs = 2
"#;

fn bethe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bethe"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bethe(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn generate_train_infer_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.toml"), CONFIG).unwrap();

    let text = ok(d, &["generate", "--config", "tiny.toml", "--out", "task"]);
    assert!(text.contains("hash"));
    for f in ["train.jsonl", "dev.jsonl", "test.jsonl", "energy.toml", "truth.json"] {
        assert!(d.join("task").join(f).exists(), "{f}");
    }

    ok(
        d,
        &["train", "--config", "tiny.toml", "--data", "task/train.jsonl", "--energy", "task/energy.toml", "--out", "model"],
    );
    assert!(d.join("model/checkpoint.json").exists());
    assert!(d.join("model/history.csv").exists());

    ok(d, &["infer", "--checkpoint", "model/checkpoint.json", "--data", "task/test.jsonl", "--out", "pred"]);
    let preds = std::fs::read_to_string(d.join("pred/predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 20);
    for line in preds.lines() {
        let labels: Vec<usize> = serde_json::from_str(line).unwrap();
        assert_eq!(labels.len(), 5);
    }

    let text = ok(
        d,
        &["eval", "--checkpoint", "model/checkpoint.json", "--data", "task/test.jsonl", "--solver", "md", "--out", "eval"],
    );
    let metrics: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(metrics["examples"], 20);
    assert_eq!(metrics["infeasible_iterates"], 0);
    assert!(d.join("eval/metrics.json").exists());
}

#[test]
fn bench_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.toml"), CONFIG).unwrap();
    let text = ok(d, &["bench", "--config", "tiny.toml", "--seed", "4", "--out", "report"]);
    assert!(text.contains("tiny/baseline"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("report/report.json")).unwrap()).unwrap();
    assert_eq!(report["schema"], "bethe.report/v1");
    assert_eq!(report["config"]["task"]["seed"], 4);
    assert!(d.join("report/report.md").exists());
}

#[test]
fn bad_invocations_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = bethe(d, &["generate"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));

    std::fs::write(d.join("bad.toml"), "schema = \"bethe.experiment/v0\"\n[task]\nkind = \"softcon\"\n").unwrap();
    let out = bethe(d, &["generate", "--config", "bad.toml"]);
    assert!(!out.status.success());

    let out = bethe(d, &["bench", "--solver", "simplex"]);
    assert!(!out.status.success());
}
