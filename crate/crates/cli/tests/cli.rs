use std::path::Path;
use std::process::{Command, Output};

fn mrsr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrsr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn json_line(bytes: &[u8]) -> serde_json::Value {
    let text = String::from_utf8_lossy(bytes);
    serde_json::from_str(text.lines().last().expect("one line")).expect("valid json")
}

fn small_setup(dir: &Path) {
    std::fs::write(
        dir.join("small.toml"),
        "epochs = 2\nhidden1 = 16\nhidden2 = 8\nbase_lr = 0.01\nlevels = [100, 50, 0]\n",
    )
    .unwrap();
    let out = mrsr(
        dir,
        &[
            "--seed",
            "3",
            "synth",
            "--per-class",
            "30",
            "--dim",
            "8",
            "--splits",
            "0.6,0.2",
            "--out",
            "data/syn.json",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_writes_manifest_and_store() {
    let dir = tempfile::tempdir().unwrap();
    small_setup(dir.path());
    assert!(dir.path().join("data/syn.mreb").exists());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("data/syn.json")).unwrap()).unwrap();
    assert_eq!(manifest["records"].as_array().unwrap().len(), 60);
    assert_eq!(manifest["store"], "syn.mreb");

    let again = mrsr(
        dir.path(),
        &[
            "--seed",
            "3",
            "synth",
            "--per-class",
            "30",
            "--dim",
            "8",
            "--splits",
            "0.6,0.2",
            "--out",
            "b.json",
        ],
    );
    let first = json_line(
        &mrsr(
            dir.path(),
            &[
                "--seed",
                "3",
                "synth",
                "--per-class",
                "30",
                "--dim",
                "8",
                "--splits",
                "0.6,0.2",
                "--out",
                "data/syn.json",
            ],
        )
        .stdout,
    );
    assert_eq!(json_line(&again.stdout)["hash"], first["hash"]);
}

#[test]
fn metrics_read_line_aligned_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("ref.txt"), "a b c\nthe cat\n").unwrap();
    std::fs::write(dir.path().join("hyp.txt"), "a x c\nthe cat\n").unwrap();
    let out = mrsr(dir.path(), &["metrics", "wer", "--ref", "ref.txt", "--hyp", "hyp.txt"]);
    assert!(out.status.success());
    let v = json_line(&out.stdout);
    assert_eq!(v["metric"], "wer");
    assert_eq!(v["pairs"], 2);
    assert!((v["value"].as_f64().unwrap() - 0.2).abs() < 1e-12);

    let out = mrsr(dir.path(), &["metrics", "bleu", "--ref", "ref.txt", "--hyp", "ref.txt"]);
    assert!(out.status.success());
    let bleu = json_line(&out.stdout)["value"].as_f64().unwrap();
    assert!(bleu > 0.0 && bleu <= 1.0);
}

#[test]
fn sweep_then_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    small_setup(dir.path());
    let out = mrsr(
        dir.path(),
        &[
            "--config",
            "small.toml",
            "--threads",
            "2",
            "sweep",
            "--data",
            "data/syn.json",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let jsonl = dir.path().join("out/sweep-sr.jsonl");
    assert!(jsonl.exists() && dir.path().join("out/sweep-sr.txt").exists());

    let report = mrsr(dir.path(), &["report", "--input", "out/sweep-sr.jsonl"]);
    assert!(report.status.success());
    assert_eq!(report.stdout, out.stdout);
    let rows = std::fs::read_to_string(jsonl)
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"kind\":\"row\""))
        .count();
    assert_eq!(rows, 3 * 3);
}

#[test]
fn train_then_eval_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    small_setup(dir.path());
    let out = mrsr(
        dir.path(),
        &[
            "--config",
            "small.toml",
            "--seed",
            "1",
            "train",
            "--data",
            "data/syn.json",
            "--variant",
            "fr",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_line(&out.stdout);
    assert_eq!(v["steps"], 2 * 5);
    assert!(dir.path().join("out/fr-seed1.mrsr").exists());
    let history = std::fs::read_to_string(dir.path().join("out/fr-seed1.history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 10);

    let eval = mrsr(
        dir.path(),
        &[
            "--config",
            "small.toml",
            "eval",
            "--data",
            "data/syn.json",
            "--checkpoint",
            "out/fr-seed1.mrsr",
        ],
    );
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    let levels: Vec<u64> = String::from_utf8_lossy(&eval.stdout)
        .lines()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["level"]
                .as_u64()
                .unwrap()
        })
        .collect();
    assert_eq!(levels, [100, 50, 0]);
}

#[test]
fn errors_are_one_json_line_with_failure_status() {
    let dir = tempfile::tempdir().unwrap();
    let out = mrsr(dir.path(), &["report", "--input", "missing.jsonl"]);
    assert!(!out.status.success());
    let err = json_line(&out.stderr);
    assert!(err["error"]["message"].as_str().unwrap().contains("missing.jsonl"));

    std::fs::write(dir.path().join("bad.toml"), "epochs = 2\nwibble = 1\n").unwrap();
    std::fs::write(dir.path().join("m.json"), "{}").unwrap();
    let out = mrsr(dir.path(), &["--config", "bad.toml", "sweep", "--data", "m.json"]);
    assert!(!out.status.success());
    assert_eq!(json_line(&out.stderr)["error"]["kind"], "config");
}
