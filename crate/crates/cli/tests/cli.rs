use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use stuperf::synth::synthetic_sapdata;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stuperf"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn workspace() -> TempDir {
    let dir = TempDir::new().unwrap();
    synthetic_sapdata(240, 9).save_csv(dir.path().join("data.csv")).unwrap();
    dir
}

const SMALL: &str = r#"
data = "data.csv"
families = ["KNN", "NB", "DT"]
protocols = ["SF", "WOBF"]
plans = [{ kind = "rho", repeats = 3, test_fraction = 0.1 }, "CV5"]

[explain]
run = "DT_SF_CV5"
coalitions = 200
background = 30
"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// Every JSON file under `dir` except run sidecars, by relative path.
fn json_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "json") && !p.to_string_lossy().ends_with(".run.json") {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn eda_prints_balance_and_is_repeatable() {
    let ws = workspace();
    let o = run(ws.path(), &["--data", "data.csv", "eda"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("class balance: L 26.67% (64), M 43.75% (105), H 29.58% (71)"), "{text}");
    assert!(text.contains("dropped by FS: SectionID, StageID, GradeID, Semester"));
    let first = std::fs::read(ws.path().join("out/eda/eda.json")).unwrap();
    let sidecar = std::fs::read_to_string(ws.path().join("out/eda.run.json")).unwrap();
    assert!(sidecar.contains("\"started\"") && sidecar.contains("\"status\": \"ok\""));
    assert!(!String::from_utf8_lossy(&first).contains("started"));
    assert!(run(ws.path(), &["--data", "data.csv", "eda"]).status.success());
    assert_eq!(std::fs::read(ws.path().join("out/eda/eda.json")).unwrap(), first);
}

#[test]
fn usage_errors_exit_2() {
    let ws = workspace();
    let o = run(ws.path(), &["--data", "missing.csv", "eda"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"));

    assert_eq!(run(ws.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(ws.path(), &["--seed", "abc", "eda"]).status.code(), Some(2));

    let cfg = write_config(ws.path(), "bad.toml", "families = [\"KNN\", \"XGB\"]\n");
    let o = run(ws.path(), &["--config", cfg.to_str().unwrap(), "evaluate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("KNN, NB, LR, SVM, DT, MLP"), "{}", stderr(&o));

    let cfg = write_config(ws.path(), "empty.toml", "data = \"data.csv\"\nfamilies = [\"NB\"]\n[grids]\nNB = []\n");
    let o = run(ws.path(), &["--config", cfg.to_str().unwrap(), "tune"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("empty"));

    let cfg = write_config(ws.path(), "typo.toml", "seeed = 3\n");
    assert_eq!(run(ws.path(), &["--config", cfg.to_str().unwrap(), "eda"]).status.code(), Some(2));

    let o = run(ws.path(), &["--data", "data.csv", "explain", "--run", "MLP_SF_RHO"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no stored run"));

    assert_eq!(run(ws.path(), &["report"]).status.code(), Some(2));
}

#[test]
fn corrupt_stored_report_is_a_runtime_failure() {
    let ws = workspace();
    std::fs::create_dir_all(ws.path().join("out/evaluate")).unwrap();
    std::fs::write(ws.path().join("out/evaluate/NB_SF_RHO.json"), "{ not json").unwrap();
    let o = run(ws.path(), &["--data", "data.csv", "explain", "--run", "NB_SF_RHO"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn evaluate_is_byte_identical_across_runs_and_workers() {
    let ws = workspace();
    let cfg = write_config(ws.path(), "exp.toml", SMALL);
    let cfg = cfg.to_str().unwrap();
    let a = run(ws.path(), &["--config", cfg, "--out", "a", "--workers", "1", "evaluate"]);
    assert!(a.status.success(), "{}", stderr(&a));
    let b = run(ws.path(), &["--config", cfg, "--out", "b", "--workers", "3", "evaluate"]);
    assert!(b.status.success(), "{}", stderr(&b));
    let (ja, jb) = (json_files(&ws.path().join("a")), json_files(&ws.path().join("b")));
    // 3 families x 2 feature protocols x 2 plans, each with a report and a stored split-0 fit.
    assert_eq!(ja.len(), 24);
    assert_eq!(ja, jb);
    assert!(stderr(&a).contains("12 runs, 48 model fits"), "{}", stderr(&a));
    let table = std::fs::read_to_string(ws.path().join("a/evaluate/accuracy_table.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), "model,SF RHO3,WOBF RHO3,SF CV5,WOBF CV5");
    assert_eq!(table.lines().count(), 4);

    let r = run(ws.path(), &["--out", "a", "report"]);
    assert!(r.status.success(), "{}", stderr(&r));
    assert_eq!(std::fs::read_to_string(ws.path().join("a/report/accuracy_table.csv")).unwrap(), table);
}

#[test]
fn seed_flag_overrides_config() {
    let ws = workspace();
    let cfg = write_config(ws.path(), "exp.toml", &format!("seed = 5\n{SMALL}"));
    let cfg = cfg.to_str().unwrap();
    assert!(run(ws.path(), &["--config", cfg, "--out", "a", "evaluate"]).status.success());
    assert!(run(ws.path(), &["--config", cfg, "--out", "b", "--seed", "5", "evaluate"]).status.success());
    assert!(run(ws.path(), &["--config", cfg, "--out", "c", "--seed", "6", "evaluate"]).status.success());
    let read = |d: &str| std::fs::read(ws.path().join(d).join("evaluate/KNN_SF_RHO3.json")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn json_config_matches_toml() {
    let ws = workspace();
    let toml_cfg = write_config(ws.path(), "exp.toml", SMALL);
    let json = r#"{
        "data": "data.csv",
        "families": ["KNN", "NB", "DT"],
        "protocols": ["SF", "WOBF"],
        "plans": [{"kind": "rho", "repeats": 3, "test_fraction": 0.1}, "CV5"],
        "explain": {"run": "DT_SF_CV5", "coalitions": 200, "background": 30}
    }"#;
    let json_cfg = write_config(ws.path(), "exp.json", json);
    assert!(run(ws.path(), &["--config", toml_cfg.to_str().unwrap(), "--out", "t", "evaluate"]).status.success());
    assert!(run(ws.path(), &["--config", json_cfg.to_str().unwrap(), "--out", "j", "evaluate"]).status.success());
    assert_eq!(json_files(&ws.path().join("t")), json_files(&ws.path().join("j")));
}

#[test]
fn tune_then_evaluate_with_tuned_params() {
    let ws = workspace();
    let cfg = r#"
data = "data.csv"
families = ["KNN", "NB"]
protocols = ["SF"]
plans = ["CV5"]
params_from = "tuned"

[grids]
KNN = [{ k = 3, p = 1.0 }, { k = 9, p = 2.0 }]
"#;
    let cfg = write_config(ws.path(), "exp.toml", cfg);
    let cfg = cfg.to_str().unwrap();
    let o = run(ws.path(), &["--config", cfg, "evaluate"]);
    assert_eq!(o.status.code(), Some(2), "evaluating tuned params before tuning");
    let o = run(ws.path(), &["--config", cfg, "tune"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("tuning NB on SF: 3 candidates x 5 folds"));
    assert!(stdout(&o).contains("KNN (2): k: 3|9; p: 1.0|2.0"), "{}", stdout(&o));
    let tuned: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.path().join("out/tune/KNN_SF.json")).unwrap()).unwrap();
    assert!(run(ws.path(), &["--config", cfg, "evaluate"]).status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.path().join("out/evaluate/KNN_SF_CV5.json")).unwrap())
            .unwrap();
    assert_eq!(report["model"], tuned["selected"]);
    let r = run(ws.path(), &["report"]);
    assert!(stdout(&r).contains("agrees"));
}

#[test]
fn explain_writes_summaries_for_stored_run() {
    let ws = workspace();
    let cfg = write_config(ws.path(), "exp.toml", SMALL);
    let cfg = cfg.to_str().unwrap();
    assert!(run(ws.path(), &["--config", cfg, "evaluate"]).status.success());
    let o = run(ws.path(), &["--config", cfg, "explain"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("48 test samples"), "{text}");
    assert!(text.contains("top 10 features"));
    let dir = ws.path().join("out/explain");
    let first = std::fs::read(dir.join("DT_SF_CV5_split0_shap.json")).unwrap();
    for f in [
        "DT_SF_CV5_split0_shap_ranking.csv",
        "DT_SF_CV5_split0_shap_misclassified.json",
        "DT_SF_CV5_split0_explanations.json",
    ] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let detail: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("DT_SF_CV5_split0_explanations.json")).unwrap())
            .unwrap();
    for e in detail["explanations"].as_array().unwrap() {
        let sum: f64 = e["values"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
        let gap = e["base_value"].as_f64().unwrap() + sum - e["output_value"].as_f64().unwrap();
        assert!(gap.abs() < 1e-9);
    }
    // A later split is refitted from the stored plan.
    assert!(run(ws.path(), &["--config", cfg, "explain", "--split", "2"]).status.success());
    assert!(dir.join("DT_SF_CV5_split2_shap.json").is_file());
    assert!(run(ws.path(), &["--config", cfg, "explain"]).status.success());
    assert_eq!(std::fs::read(dir.join("DT_SF_CV5_split0_shap.json")).unwrap(), first);
    assert_eq!(run(ws.path(), &["--config", cfg, "explain", "--split", "5"]).status.code(), Some(2));
}
