use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_snob-audit"));
    c.env_remove("SNOB_OUTPUT_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn synth(dir: &Path) {
    let out = run(&[
        "synth",
        "--occupations",
        "3",
        "--documents",
        "300",
        "--nonbinary",
        "5",
        "--output-dir",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn data_args(dir: &Path) -> Vec<String> {
    vec![
        "--corpus".into(),
        dir.join("corpus.jsonl").display().to_string(),
        "--embeddings".into(),
        dir.join("embeddings.txt").display().to_string(),
        "--lexicon".into(),
        dir.join("lexicon.csv").display().to_string(),
    ]
}

fn audit(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec!["audit".into()];
    args.extend(data_args(data));
    args.extend(["--output-dir".into(), out.display().to_string()]);
    args.extend(extra.iter().map(|s| s.to_string()));
    bin().args(&args).output().unwrap()
}

#[test]
fn audit_writes_report_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for d in [&a, &b] {
        let out = audit(&data, d, &["--repr", "bow", "--intervention", "none,po,de"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(stdout.contains("BOW, PO"), "{stdout}");
    }
    let ra = std::fs::read(a.join("report.json")).unwrap();
    let rb = std::fs::read(b.join("report.json")).unwrap();
    assert_eq!(ra, rb);
    assert!(a.join("snob_by_occupation.csv").is_file());
}

#[test]
fn missing_input_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "audit",
        "--corpus",
        "/nonexistent/corpus.jsonl",
        "--embeddings",
        "/nonexistent/e.txt",
        "--output-dir",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage load"));
    assert!(!tmp.path().join("report.json").exists());
}

#[test]
fn bad_flag_value_is_a_config_error() {
    let out = run(&["audit", "--repr", "bert"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn out_of_range_external_scores_are_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let corpus = std::fs::read_to_string(data.join("corpus.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(corpus.lines().next().unwrap()).unwrap();
    let scores = tmp.path().join("scores.csv");
    std::fs::write(
        &scores,
        format!(
            "bio_id,occupation,score\n{},{},1.3\n",
            first["id"].as_str().unwrap(),
            first["occupation"].as_str().unwrap()
        ),
    )
    .unwrap();
    let mut args: Vec<String> = vec![
        "import-scores".into(),
        "--scores".into(),
        scores.display().to_string(),
        "--label".into(),
        "ext".into(),
    ];
    args.extend(data_args(&data));
    args.extend(["--output-dir".into(), tmp.path().join("out").display().to_string()]);
    let out = bin().args(&args).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn config_file_overrides_flags_and_env_overrides_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 7, "reprs": ["BOW"], "interventions": ["NONE"]}"#).unwrap();
    let env_out = tmp.path().join("from-env");
    let mut args: Vec<String> = vec!["audit".into(), "--config".into(), cfg.display().to_string()];
    args.extend(data_args(&data));
    args.extend(["--seed", "1", "--output-dir", "/nonexistent-flag-dir"].map(String::from));
    let out = bin().args(&args).env("SNOB_OUTPUT_DIR", &env_out).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(env_out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["seed"], 7);
    assert_eq!(report["reports"].as_array().unwrap().len(), 1);
}

#[test]
fn export_plots_rejects_mixed_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(audit(&data, &a, &["--repr", "bow", "--intervention", "none"])
        .status
        .success());
    assert!(
        audit(&data, &b, &["--repr", "bow", "--intervention", "none", "--seed", "3"])
            .status
            .success()
    );
    let ra = a.join("report.json").display().to_string();
    let rb = b.join("report.json").display().to_string();
    let plots = tmp.path().join("plots").display().to_string();
    let ok = run(&["export-plots", &ra, "--output-dir", &plots]);
    assert!(ok.status.success());
    let bad = run(&["export-plots", &ra, &rb, "--output-dir", &plots]);
    assert_eq!(bad.status.code(), Some(3));
}

#[test]
fn split_and_train_write_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data);
    let out_dir = tmp.path().join("out");
    for cmd in ["split", "train"] {
        let mut args: Vec<String> = vec![cmd.into()];
        args.extend(data_args(&data));
        args.extend(["--repr", "bow", "--intervention", "none,de", "--output-dir"].map(String::from));
        args.push(out_dir.display().to_string());
        let out = bin().args(&args).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let split: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("split.json")).unwrap()).unwrap();
    assert_eq!(split["assignments"].as_object().unwrap().len(), 3 * 300 + 3 * 5);
    for f in [
        "norm.json",
        "models-BOW-NONE.json",
        "models-BOW-DE-she.json",
        "models-BOW-DE-he.json",
    ] {
        assert!(out_dir.join("models").join(f).is_file(), "{f}");
    }
}
