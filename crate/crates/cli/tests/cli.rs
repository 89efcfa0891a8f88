use std::path::Path;
use std::process::Command;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use rwe_cli::commands::{self, ExplainArgs, RunArgs, Scenario, SynthArgs};
use rwe_cli::server::{router, AppState};
use rwe_core::cohort::io::read_cohort;
use rwe_core::pipeline::{RunReport, ScoringService};
use rwe_core::synth::GroundTruth;

fn synth_args(out: &Path, scenario: Scenario, n: usize) -> SynthArgs {
    SynthArgs { scenario, config: None, n: Some(n), seed: Some(4), out: out.to_path_buf(), truth: None }
}

/// Synthesizes a cohort and runs tocilizumab on it; returns the output dir.
fn run_small(dir: &Path) -> std::path::PathBuf {
    let cohort = dir.join("cohort.jsonl");
    commands::synth(&synth_args(&cohort, Scenario::Heterogeneous, 1200)).unwrap();
    let config = dir.join("run.toml");
    std::fs::write(
        &config,
        "inputs = [\"cohort.jsonl\"]\nseed = 7\n\n[te]\ncv_folds = 0\n\n[futility.te]\ncv_folds = 0\n",
    )
    .unwrap();
    let out = dir.join("out");
    let args = RunArgs {
        config: Some(config),
        inputs: vec![],
        drugs: vec!["tocilizumab".into()],
        seed: None,
        out: Some(out.clone()),
    };
    let report = commands::run(&args).unwrap();
    assert_eq!(report.seed, 7);
    assert!(commands::summarize(&report).contains("tocilizumab:"));
    out
}

#[test]
fn synth_writes_cohort_and_truth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/cohort.csv");
    let truth = commands::synth(&synth_args(&out, Scenario::Confounded, 300)).unwrap();
    let records = read_cohort(&out).unwrap();
    assert_eq!(records.len(), 300);
    let side = std::fs::read_to_string(dir.path().join("nested/cohort.truth.json")).unwrap();
    assert_eq!(GroundTruth::from_json(&side).unwrap(), truth);
    assert!((truth.true_hr - 0.5).abs() < 1e-12);

    let cfg = dir.path().join("synth.toml");
    std::fs::write(&cfg, "n = 150\nseed = 2\ntrue_log_hr_treatment = 0.0\n").unwrap();
    let args =
        SynthArgs { config: Some(cfg), n: None, ..synth_args(&dir.path().join("c.jsonl"), Scenario::Default, 0) };
    let args = SynthArgs { seed: None, ..args };
    let c = commands::synth_config(&args).unwrap();
    assert_eq!((c.n, c.seed), (150, 2));
}

#[test]
fn run_requires_an_output_directory() {
    let args = RunArgs { config: None, inputs: vec!["x.jsonl".into()], drugs: vec![], seed: None, out: None };
    assert!(commands::run_config(&args).is_err());
    let args = RunArgs { drugs: vec!["aspirin".into()], out: Some("o".into()), ..args };
    assert!(commands::run_config(&args).is_err());
}

#[test]
fn run_explain_and_serve() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(dir.path());
    let report = RunReport::from_json(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.drugs.len(), 1);

    // explain by row and by id agree
    let model = out.join("tocilizumab/model.json");
    let features = out.join("tocilizumab/test_features.csv");
    let by_row = ExplainArgs { model: model.clone(), features: features.clone(), row: Some(3), id: None, out: None };
    let a = commands::explain(&by_row).unwrap();
    let by_id = ExplainArgs {
        row: None,
        id: Some(a.admission_id.clone()),
        out: Some(dir.path().join("e.json")),
        ..by_row.clone()
    };
    let b = commands::explain(&by_id).unwrap();
    assert_eq!(a.score, b.score);
    let written: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("e.json")).unwrap()).unwrap();
    let e = &written["explanation"];
    let sum: f64 = e["contributions"].as_array().unwrap().iter().map(|c| c["contribution"].as_f64().unwrap()).sum();
    assert!((e["base"].as_f64().unwrap() + sum - e["final"].as_f64().unwrap()).abs() < 1e-9);
    assert!(commands::explain(&ExplainArgs { row: Some(1_000_000), ..by_row }).is_err());

    // HTTP
    let state = Arc::new(AppState { service: ScoringService::load_dir(&out).unwrap(), models_dir: Some(out.clone()) });
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async {
        let call = |method: &str, uri: &str, body: &str| {
            let req = Request::builder()
                .method(method)
                .uri(uri)
                .header("content-type", "application/json")
                .body(Body::from(body.to_string()))
                .unwrap();
            let app = router(state.clone());
            async move {
                let resp = app.oneshot(req).await.unwrap();
                let status = resp.status();
                let bytes = resp.into_body().collect().await.unwrap().to_bytes();
                (status, serde_json::from_slice::<Value>(&bytes).unwrap_or(Value::Null))
            }
        };
        let (s, drugs) = call("GET", "/drugs", "").await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(drugs[0]["drug"], "tocilizumab");
        let (s, r) = call("POST", "/score/tocilizumab", "{}").await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(r["indicated"], json!(r["benefit_score"].as_f64().unwrap() > r["threshold"].as_f64().unwrap()));
        let (s, _) = call("POST", "/score/tocilizumab", "").await;
        assert_eq!(s, StatusCode::OK);
        let (s, r) = call("POST", "/score/remdesivir", "{}").await;
        assert_eq!((s, r["error"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
        let (s, r) = call("POST", "/score/tocilizumab", r#"{"features": {"age": "x", "nope": 1}}"#).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
        let fields: Vec<&str> = r["fields"].as_array().unwrap().iter().map(|f| f["field"].as_str().unwrap()).collect();
        assert!(fields.contains(&"age"));
        let (s, _) = call("POST", "/score/tocilizumab", "{not json").await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
        let (s, r) = call("POST", "/reload", "").await;
        assert_eq!((s, r.as_array().map(Vec::len)), (StatusCode::OK, Some(1)));
    });
}

#[test]
fn binary_runs_synth() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.jsonl");
    let status = Command::new(env!("CARGO_BIN_EXE_rwe"))
        .args(["synth", "--scenario", "unmeasured", "--n", "200", "--seed", "1", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    assert_eq!(read_cohort(&out).unwrap().len(), 200);
    assert!(dir.path().join("c.truth.json").exists());
    let bad = Command::new(env!("CARGO_BIN_EXE_rwe"))
        .args(["run", "--input", "missing.jsonl", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error:"));
}
