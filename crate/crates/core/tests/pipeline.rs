use rwe_core::cohort::Drug;
use rwe_core::pipeline::{
    run, run_records, DrugOutcome, FutilityOutcome, RunConfig, RunReport, ScoreRequest, ScoringService,
};
use rwe_core::survival::Subgroup;
use rwe_core::synth::{generate, SynthConfig};

fn quick_config(seed: u64) -> RunConfig {
    let mut c = RunConfig { drugs: vec![Drug::Tocilizumab], seed, ..RunConfig::default() };
    c.te.cv_folds = 0;
    c
}

#[test]
fn heterogeneous_cohort_end_to_end() {
    let (records, _) = generate(&SynthConfig::heterogeneous(3000, 5)).unwrap();
    let art = run_records(&quick_config(1), records).unwrap();
    let report = &art.report;
    let DrugOutcome::Completed(d) = &report.drugs[0] else { panic!("drug failed: {:?}", report.drugs[0]) };
    assert!(d.n_treated > 0 && d.n_eligible > d.n_treated);
    assert!(d.balance.max_smd_after.unwrap() < d.balance.max_smd_before.unwrap());
    assert_eq!(d.subgroup_sizes[&Subgroup::Full], art.drugs[0].test_ids.len());
    assert_eq!(
        d.subgroup_sizes[&Subgroup::MlIndicated] + d.subgroup_sizes[&Subgroup::MlNonIndicated],
        d.subgroup_sizes[&Subgroup::Full]
    );
    assert_eq!(d.survival.cells.len(), 8);
    assert_eq!(report.cohort.n_test, d.subgroup_sizes[&Subgroup::Full]);

    // scoring moves with day-one temperature the way the dependence data says
    let drug = &art.drugs[0];
    let dep = drug.summary.as_ref().unwrap().dependence("temperature_day1").unwrap();
    let mean_where = |keep: &dyn Fn(f64) -> bool| {
        let v: Vec<f64> = dep.iter().filter(|(x, _)| x.is_some_and(keep)).map(|(_, s)| *s).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let learned = mean_where(&|t| t > 38.0) - mean_where(&|t| t < 37.0);
    let svc = ScoringService::new(vec![drug.model.clone()]);
    let mut shift = 0.0;
    for row in 0..20 {
        let mut v = drug.test_features.row_vector(row);
        let mut at = |t: f64| {
            v.set("temperature_day1", Some(t));
            let features = v.names.iter().cloned().zip(v.values.iter().copied()).collect();
            svc.score(drug.drug.slug(), &ScoreRequest { features }).unwrap().benefit_score
        };
        shift += at(38.5) - at(36.5);
    }
    assert!(learned.abs() > 1e-3);
    assert_eq!(shift > 0.0, learned > 0.0, "shift {shift} learned {learned}");
}

#[test]
fn runs_are_deterministic_and_written() {
    let (records, _) = generate(&SynthConfig::heterogeneous(1500, 9)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("cohort.jsonl");
    let mut buf = Vec::new();
    rwe_core::cohort::io::write_jsonl(&records, &mut buf).unwrap();
    std::fs::write(&input, buf).unwrap();
    let mut cfg = quick_config(3);
    cfg.inputs = vec![input];
    cfg.futility_trigger = rwe_core::pipeline::FutilityTrigger::Always;
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    cfg.output_dir = Some(out_a.clone());
    run(&cfg).unwrap();
    cfg.output_dir = Some(out_b.clone());
    run(&cfg).unwrap();
    for f in [
        "tocilizumab/model.json",
        "tocilizumab/balance.json",
        "tocilizumab/balance.csv",
        "tocilizumab/survival.json",
        "tocilizumab/survival.csv",
        "tocilizumab/km.csv",
        "tocilizumab/subgroups.csv",
        "tocilizumab/test_features.csv",
        "tocilizumab/shap_summary.csv",
        "lab_clusters.json",
    ] {
        let a = std::fs::read(out_a.join(f)).unwrap();
        assert_eq!(a, std::fs::read(out_b.join(f)).unwrap(), "{f} differs");
    }
    let ra = RunReport::from_json(&std::fs::read_to_string(out_a.join("report.json")).unwrap()).unwrap();
    let rb = RunReport::from_json(&std::fs::read_to_string(out_b.join("report.json")).unwrap()).unwrap();
    assert_eq!(ra.drugs, rb.drugs);
    let DrugOutcome::Completed(d) = &ra.drugs[0] else { panic!() };
    assert!(!matches!(d.futility, FutilityOutcome::NotRun { .. }));

    let svc = ScoringService::load_dir(&out_a).unwrap();
    assert_eq!(svc.drugs().len(), 1);
    let r = svc.score_json("tocilizumab", &serde_json::json!({"features": {}})).unwrap();
    assert!((0.0..=1.0).contains(&r.benefit_score));
}

#[test]
fn empty_drug_list_and_bad_config_are_errors() {
    let (records, _) = generate(&SynthConfig { n: 300, ..SynthConfig::default() }).unwrap();
    let cfg = RunConfig { drugs: vec![], ..quick_config(0) };
    let art = run_records(&cfg, records.clone());
    assert!(art.map(|a| a.report.drugs.is_empty()).unwrap_or(true));
    let mut cfg = quick_config(0);
    cfg.training_departments = Some(["17".to_string()].into_iter().collect());
    assert!(run_records(&cfg, records).is_err());
}
