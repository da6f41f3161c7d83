use std::path::Path;
use std::process::{Command, Output};

fn tmd(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tmd")).args(args).current_dir(dir).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn synth(dir: &Path, quality: &str) {
    let o = tmd(&["synth", "--out", ".", "--quality", quality], dir);
    assert_eq!(code(&o), 0, "{}", text(&o));
}

fn edit_manifest(dir: &Path, f: impl FnOnce(&mut serde_json::Value)) {
    let path = dir.join("manifest.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    f(&mut v);
    std::fs::write(path, serde_json::to_string(&v).unwrap()).unwrap();
}

#[test]
fn validate_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "binary");
    assert_eq!(code(&tmd(&["validate", "-c", "config.json"], d)), 0);

    edit_manifest(d, |v| v["responses"][0]["token_count"] = serde_json::json!(999));
    let o = tmd(&["validate", "-c", "config.json"], d);
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("token count mismatch"), "{}", text(&o));

    let o = tmd(&["validate", "-c", "config.json", "--set", "store=missing.tmd"], d);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("not found"));
}

#[test]
fn claim_span_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "claims");
    edit_manifest(d, |v| v["responses"][0]["claims"][0]["span_end"] = serde_json::json!(500));
    let o = tmd(&["validate", "-c", "config.json"], d);
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("claim span out of range"));
}

#[test]
fn sequence_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "binary");
    for verb in ["fit", "score", "eval", "report"] {
        let o = tmd(&[verb, "-c", "config.json"], d);
        assert_eq!(code(&o), 0, "{verb}: {}", text(&o));
    }
    let scores = std::fs::read_to_string(d.join("scores.csv")).unwrap();
    assert!(scores.starts_with("id,score\n"));
    assert_eq!(scores.lines().count(), 201);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("report/eval.json")).unwrap()).unwrap();
    assert!(report["prr"]["exact_match"].as_f64().unwrap() >= 0.9);
    assert!(report["baselines"]["msp"]["prr"]["exact_match"].is_number());
    assert!(report["baselines"]["perplexity"]["prr"]["exact_match"].is_number());
    assert!(report["config_checksum"].is_string());
    assert!(d.join("report/rejection_table.csv").exists());
}

#[test]
fn rmd_without_background_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "binary");
    let o = tmd(&["fit", "-c", "config.json", "--set", "variant=RMD", "--set", "background_store=null"], d);
    assert_eq!(code(&o), 1, "{}", text(&o));
    assert!(text(&o).contains("background"));
}

#[test]
fn dimension_mismatch_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "binary");
    assert_eq!(code(&tmd(&["fit", "-c", "config.json"], d)), 0);
    std::fs::create_dir(d.join("other")).unwrap();
    std::fs::write(d.join("other/spec.json"), r#"{"dim": 8}"#).unwrap();
    assert_eq!(code(&tmd(&["synth", "--out", "other", "--spec", "other/spec.json"], d)), 0);
    let o = tmd(&["score", "-c", "config.json", "--set", "store=other/store.tmd"], d);
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("dimension mismatch"), "{}", text(&o));
}

#[test]
fn claim_level_scores() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "claims");
    for verb in ["fit", "score", "eval"] {
        let o = tmd(&[verb, "-c", "config.json"], d);
        assert_eq!(code(&o), 0, "{verb}: {}", text(&o));
    }
    let scores = std::fs::read_to_string(d.join("scores.csv")).unwrap();
    let mut lines = scores.lines();
    assert_eq!(lines.next(), Some("id,claim_index,score"));
    assert!(lines.next().unwrap().starts_with("test-00000,0,"));
    assert!(lines.next().unwrap().starts_with("test-00000,1,"));
    let report = std::fs::read_to_string(d.join("report/eval.json")).unwrap();
    assert!(report.contains("roc_auc") && report.contains("pr_auc"));
}

#[test]
fn fit_is_byte_identical_across_thread_caps() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "binary");
    let mut models = Vec::new();
    for (i, threads) in ["1", "4"].iter().enumerate() {
        let out = format!("model={}", d.join(format!("m{i}.tmd")).display());
        let o = Command::new(env!("CARGO_BIN_EXE_tmd"))
            .args(["fit", "-c", "config.json", "--set", &out, "--set", "huq.enabled=true"])
            .env("TMD_THREADS", threads)
            .current_dir(d)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", text(&o));
        models.push(std::fs::read(d.join(format!("m{i}.tmd"))).unwrap());
    }
    assert_eq!(models[0], models[1]);
}

#[test]
fn sweep_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "binary");
    let o = tmd(&["sweep", "--axis", "layer", "-c", "config.json"], d);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let csv = std::fs::read_to_string(d.join("report/sweep_layer.csv")).unwrap();
    assert!(csv.starts_with("layer,prr\n"));
    assert_eq!(csv.lines().count(), 7);
    let o = tmd(&["sweep", "--axis", "n_components", "-c", "config.json"], d);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(std::fs::read_to_string(d.join("report/sweep_n_components.csv")).unwrap().contains("\n10,"));
}

#[test]
fn bad_config_and_env() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth(d, "binary");
    let o = tmd(&["fit", "-c", "config.json", "--set", "tua=0.3"], d);
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("unknown config key"));
    assert_eq!(code(&tmd(&["fit", "-c", "nope.json"], d)), 2);
    let o = Command::new(env!("CARGO_BIN_EXE_tmd"))
        .args(["validate", "-c", "config.json"])
        .env("TMD_THREADS", "zero")
        .current_dir(d)
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}
