use std::path::Path;
use std::process::{Command, Output};

fn rcq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcq"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = rcq(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"{
  "seed": 17,
  "encoder": {"layers": 1, "heads": 1, "hidden": 8, "self_loops": true},
  "train": {"total_iterations": 60, "imitation_iterations": 20, "eps_decay_start": 20,
            "eps_decay_end": 50, "checkpoint_period": 20, "log_period": 10, "target_sync": 10},
  "generator": {"samples": 60},
  "baseline": {"repeats": 2, "classifier": {"iterations": 30, "batch_size": 8}},
  "oracle": {"graphs": 10, "max_nodes": 7}
}"#;

#[test]
fn full_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("small.json");
    std::fs::write(&cfg, SMALL).unwrap();
    let c = s(&cfg);

    let data = d.join("data");
    ok(&["gen-data", "--config", c, "--out", s(&data)]);
    for f in ["dataset.jsonl", "split.json", "config.json"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let mut predictions = Vec::new();
    for run in ["a", "b"] {
        let train = d.join(format!("train_{run}"));
        ok(&["train", "--config", c, "--in", s(&data), "--out", s(&train)]);
        let preds = d.join(format!("preds_{run}.jsonl"));
        ok(&[
            "predict",
            "--config",
            c,
            "--in",
            s(&data),
            "--checkpoint",
            s(&train.join("best.rcq")),
            "--out",
            s(&preds),
        ]);
        predictions.push(std::fs::read(&preds).unwrap());
        assert_eq!(
            std::fs::read(train.join("best.rcq")).unwrap(),
            std::fs::read(d.join("train_a/best.rcq")).unwrap()
        );
    }
    assert_eq!(predictions[0], predictions[1]);

    let report = d.join("report.json");
    ok(&[
        "evaluate",
        "--in",
        s(&d.join("preds_a.jsonl")),
        "--data",
        s(&data),
        "--out",
        s(&report),
    ]);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let top: Vec<f64> = ["top1", "top2", "top3", "top4"]
        .iter()
        .map(|k| r[*k].as_f64().unwrap())
        .collect();
    assert!(top.windows(2).all(|w| w[0] <= w[1]), "{top:?}");

    // The echoed config reproduces the run on its own.
    let echoed = d.join("train_a/config.json");
    let replay = d.join("train_replay");
    ok(&["train", "--config", s(&echoed), "--in", s(&data), "--out", s(&replay)]);
    assert_eq!(
        std::fs::read(replay.join("best.rcq")).unwrap(),
        std::fs::read(d.join("train_a/best.rcq")).unwrap()
    );
    assert_eq!(
        std::fs::read(replay.join("metrics.json")).unwrap(),
        std::fs::read(d.join("train_a/metrics.json")).unwrap()
    );

    for method in ["sim", "bond-classifier"] {
        let out = d.join(format!("baseline_{method}"));
        ok(&["baseline", "--config", c, "--in", s(&data), "--out", s(&out), "--method", method]);
        assert!(out.join("predictions.jsonl").exists());
        assert!(out.join("report.json").exists());
    }

    ok(&["oracle-check", "--config", c]);
}

#[test]
fn errors_use_the_documented_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(rcq(&["gen-data", "--bogus"]).status.code(), Some(1));
    assert_eq!(rcq(&["no-such-command"]).status.code(), Some(1));

    let bad = d.join("bad.json");
    std::fs::write(&bad, r#"{"sede": 3}"#).unwrap();
    let out = rcq(&["gen-data", "--config", s(&bad), "--out", s(&d.join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sede"));

    let out = rcq(&["train", "--in", s(&d.join("missing")), "--out", s(&d.join("y"))]);
    assert_eq!(out.status.code(), Some(1));

    let zero_beam = rcq(&["predict", "--beam", "0", "--in", s(d), "--checkpoint", s(&bad)]);
    assert_eq!(zero_beam.status.code(), Some(1));
}

#[test]
fn version_names_the_formats() {
    let out = ok(&["--version"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("checkpoint format 1"), "{text}");
    assert!(text.contains("dataset schema 1"), "{text}");
    assert!(text.contains("prediction schema 1"), "{text}");
    assert_eq!(rcq(&["--help"]).status.code(), Some(0));
}
