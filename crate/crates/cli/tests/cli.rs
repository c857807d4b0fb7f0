use std::path::Path;
use std::process::{Command, Output};

fn silobench(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_silobench"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn pipeline_and_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(code(&silobench(dir, &["generate", "--out-dir", "u"])), 0);
    assert!(dir.join("u/contexts.csv").exists());
    std::fs::write(
        dir.join("c.json"),
        r#"{"universe": {"directory": {"path": "u"}}, "train": {"epochs": 2}, "adapt": {"epochs": 1}}"#,
    )
    .unwrap();

    let cfg = ["--config", "c.json", "--out-dir", "m"];
    let run = |extra: &[&str]| silobench(dir, &[&cfg[..], extra].concat());
    assert_eq!(code(&run(&["train", "--silo", "U01"])), 0);
    assert_eq!(
        code(&run(&[
            "transfer",
            "--artifact",
            "m/U01.artifact.json",
            "--silo",
            "C02"
        ])),
        0
    );
    assert_eq!(
        code(&run(&[
            "adapt",
            "--artifact",
            "m/U01.artifact.json",
            "--silo",
            "C03",
            "--method",
            "tent"
        ])),
        0
    );
    assert_eq!(
        code(&run(&[
            "evaluate",
            "--artifact",
            "m/U01.artifact.json",
            "--silo",
            "C03"
        ])),
        0
    );
    let eval: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join("m/U01-C03.evaluation.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(eval.as_object().unwrap().len(), 3);
    assert_eq!(code(&run(&["similarity"])), 0);

    // Config problems exit 1.
    assert_eq!(code(&run(&["train", "--silo", "X99"])), 1);
    assert_eq!(
        code(&run(&[
            "adapt",
            "--artifact",
            "m/U01.artifact.json",
            "--silo",
            "C03",
            "--method",
            "nope"
        ])),
        1
    );
    assert_eq!(
        code(&silobench(dir, &["--config", "missing.json", "similarity"])),
        1
    );
    assert_eq!(code(&silobench(dir, &["report", "bogus"])), 1);
    assert_eq!(code(&silobench(dir, &["--no-such-flag"])), 1);

    // Runtime failure exits 2: the sequentially trained artifact has no Fisher
    // diagonal to anchor a further EWC stage.
    assert_eq!(
        code(&run(&[
            "transfer",
            "--artifact",
            "m/U01-C02.artifact.json",
            "--silo",
            "C04"
        ])),
        2
    );
}

#[test]
fn experiment_rows_survive_a_failed_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("c.json"), r#"{"train": {"epochs": 2}}"#).unwrap();
    let args = [
        "--config",
        "c.json",
        "--out-dir",
        "r",
        "experiment",
        "run",
        "direct",
    ];
    assert_eq!(code(&silobench(dir, &args)), 0);
    let before = std::fs::read_to_string(dir.join("r/results.jsonl")).unwrap();
    assert!(before.lines().count() > 0);
    // Same keys again: duplicate rows are refused and the store is untouched.
    assert_eq!(code(&silobench(dir, &args)), 2);
    assert_eq!(
        std::fs::read_to_string(dir.join("r/results.jsonl")).unwrap(),
        before
    );

    assert_eq!(
        code(&silobench(
            dir,
            &["--out-dir", "r", "report", "direct", "--format", "csv"]
        )),
        0
    );
    let summary = std::fs::read_to_string(dir.join("r/direct.summary.csv")).unwrap();
    assert!(summary.starts_with("key,value\n"));
}
