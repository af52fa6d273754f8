use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_unitarget");

fn unitarget(resources: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .arg("--resources")
        .arg(resources)
        .args(args)
        .env_remove("UNITARGET_RESOURCES")
        .env_remove("UNITARGET_TOKEN")
        .output()
        .expect("binary runs")
}

fn ok(resources: &Path, args: &[&str]) -> String {
    let out = unitarget(resources, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Initialized resources with two small raw files in place.
fn fixture() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let res = dir.path().join("resources");
    ok(&res, &["init"]);
    let mut conan = String::from("HATE_SPEECH,TARGET\n");
    for i in 0..6 {
        conan.push_str(&format!("\"jews statement {i}, quoted\",JEWS\n"));
    }
    conan.push_str("other statement,LGBT+\n");
    std::fs::write(res.join("raw/fanton2021human.csv"), conan).unwrap();
    let mut general = String::from("Text,Keyword\n");
    for i in 0..5 {
        general.push_str(&format!("blacks statement {i},Blacks\n"));
    }
    std::fs::write(res.join("raw/jikeli2023general.csv"), general).unwrap();
    dir
}

struct Mock(Child, String);

impl Mock {
    fn start(resources: &Path) -> Self {
        let port = std::net::TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let mut child = Command::new(BIN)
            .arg("--resources")
            .arg(resources)
            .args(["mock-server", "--port", &port.to_string()])
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let url = line.trim().rsplit(' ').next().unwrap().to_string();
        assert!(url.starts_with("http://"), "{line}");
        Mock(child, url)
    }
}

impl Drop for Mock {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn dataset_target_writes_every_reachable_instance() {
    let dir = fixture();
    let res = dir.path().join("resources");
    let out = dir.path().join("jews.jsonl");
    let result = unitarget(&res, &["dataset", "target", "--target", "jews", "--out", out.to_str().unwrap()]);
    assert!(result.status.success());
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 6);
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("hartvigsen2022toxigen is not available"), "{stderr}");

    let csv = dir.path().join("jews.csv");
    ok(&res, &["dataset", "target", "--target", "jews", "--out", csv.to_str().unwrap(), "--format", "csv"]);
    let mut reader = csv::Reader::from_path(&csv).unwrap();
    assert_eq!(reader.records().count(), 6);
}

#[test]
fn taxonomy_show_writes_latex() {
    let dir = fixture();
    let res = dir.path().join("resources");
    let tex = dir.path().join("religion.tex");
    let text = ok(&res, &["taxonomy", "show", "--categories", "religion", "--latex", tex.to_str().unwrap()]);
    assert!(text.contains("jews"));
    assert!(!text.contains("blacks"));
    let latex = std::fs::read_to_string(&tex).unwrap();
    assert!(latex.contains("\\begin{tabular}"), "{latex}");
}

#[test]
fn taxonomy_changes_are_saved_under_new_names() {
    let dir = fixture();
    let res = dir.path().join("resources");
    let moves = dir.path().join("moves.json");
    std::fs::write(&moves, r#"[{"target": "jews", "from": "religion", "to": "origin"}]"#).unwrap();
    ok(&res, &["taxonomy", "update", "--changes", moves.to_str().unwrap(), "--new-name", "moved"]);
    let shown = ok(&res, &["--taxonomy", "moved", "taxonomy", "show", "--categories", "origin"]);
    assert!(shown.contains("jews"), "{shown}");
    ok(&res, &["--taxonomy", "moved", "taxonomy", "validate"]);

    // the base name is never overwritten
    let again = unitarget(&res, &["taxonomy", "update", "--changes", moves.to_str().unwrap(), "--new-name", "moved"]);
    assert_eq!(again.status.code(), Some(1));

    ok(
        &res,
        &[
            "taxonomy", "add-target", "--target", "roma", "--category", "origin",
            "--keyword", "fanton2021human:ROMA", "--new-taxonomy", "t2", "--new-mapping", "m2",
        ],
    );
    let mapping = ok(&res, &["--mapping", "m2", "mapping", "show", "--datasets", "fanton2021human"]);
    assert!(mapping.contains("ROMA"), "{mapping}");
}

#[test]
fn overview_then_info() {
    let dir = fixture();
    let res = dir.path().join("resources");
    let text = ok(&res, &["overview", "update"]);
    assert!(text.contains("fanton2021human"));
    let info = ok(&res, &["info", "target", "--target", "jews"]);
    assert!(info.contains("total instances: 6"), "{info}");
    let info = ok(&res, &["info", "category", "--category", "race"]);
    assert!(info.contains("blacks: 5"), "{info}");
}

#[test]
fn sample_experiment_and_report() {
    let dir = fixture();
    let res = dir.path().join("resources");
    let sample = dir.path().join("sample.jsonl");
    ok(&res, &["sample", "--targets", "jews,blacks", "--per-target", "4", "--seed", "7", "--out", sample.to_str().unwrap()]);
    assert_eq!(std::fs::read_to_string(&sample).unwrap().lines().count(), 8);
    assert!(dir.path().join("sample.manifest.json").is_file());

    let short = unitarget(&res, &["sample", "--targets", "jews", "--per-target", "50", "--out", sample.to_str().unwrap()]);
    assert_eq!(short.status.code(), Some(1));

    let mock = Mock::start(&res);
    let config = dir.path().join("exp.json");
    let json = serde_json::json!({
        "name": "cli-run",
        "theory": "social identity theory",
        "hypothesis": "left personas flag more",
        "sample_manifest": "sample.manifest.json",
        "personas": [
            {"persona_id": "l0", "description": "a progressive teacher", "side": "left"},
            {"persona_id": "r0", "description": "a conservative farmer", "side": "right"}
        ],
        "endpoint": mock.1,
        "model_id": "mock",
        "backoff_ms": 1
    });
    std::fs::write(&config, json.to_string()).unwrap();
    let first = ok(&res, &["experiment", "run", "--config", config.to_str().unwrap(), "--max-pairs", "5"]);
    assert!(first.contains("pairs: 16 total, 0 already stored, 5 attempted"), "{first}");
    let second = ok(&res, &["experiment", "run", "--config", config.to_str().unwrap()]);
    assert!(second.contains("5 already stored, 11 attempted, 11 completed, 0 failed, 0 remaining"), "{second}");
    assert_eq!(
        std::fs::read_to_string(dir.path().join("cli-run.records.jsonl")).unwrap().lines().count(),
        16
    );

    let report = ok(&res, &["stats", "report", "--config", config.to_str().unwrap(), "--format", "json"]);
    let parsed: serde_json::Value = serde_json::from_str(&report).unwrap();
    let text = parsed.to_string();
    for target in ["jews", "blacks", "Overall"] {
        assert!(text.contains(target), "{text}");
    }

    let doctor = ok(&res, &["doctor", "--endpoint", &mock.1]);
    assert!(doctor.contains("[ok]      endpoint"), "{doctor}");
}

#[test]
fn doctor_reports_problems_without_failing() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = unitarget(&missing, &["doctor", "--endpoint", "http://127.0.0.1:9/v1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("[FAIL]    resources"), "{text}");
    assert!(text.contains("unitarget --resources"), "{text}");
    assert!(text.contains("[FAIL]    endpoint"), "{text}");

    let dir = fixture();
    let res = dir.path().join("resources");
    let text = ok(&res, &["doctor"]);
    assert!(text.contains("[ok]      dataset fanton2021human"), "{text}");
    assert!(text.contains("[pending] dataset jigsaw2019: manual-download"), "{text}");
    assert!(text.contains("[pending] endpoint"), "{text}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let res = dir.path().join("resources");
    assert_eq!(unitarget(&res, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(unitarget(&res, &["dataset", "target"]).status.code(), Some(2));
    let missing = unitarget(&res, &["taxonomy", "show"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("unitarget init"));
    ok(&res, &["init"]);
    let unknown = unitarget(&res, &["info", "target", "--target", "martians"]);
    assert_eq!(unknown.status.code(), Some(1));
}
