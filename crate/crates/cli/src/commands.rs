use std::fs::File;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::Serialize;

use rwe_core::cohort::io::write_cohort;
use rwe_core::cohort::{Drug, FeatureMatrix};
use rwe_core::pipeline::{self, DrugOutcome, FutilityOutcome, RunConfig, ScoreRequest, ScoreResponse, ScoringService};
use rwe_core::synth::{generate, GroundTruth, SynthConfig};
use rwe_core::teml::TeModel;

use crate::{read_text, write_text, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    /// Mild measured confounding, uniform effect.
    Default,
    /// One strong measured confounder, true HR 0.5.
    Confounded,
    /// Benefit for high day-one temperature, harm for the rest.
    Heterogeneous,
    /// No effect; an unmeasured factor drives treatment and survival.
    Unmeasured,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "default")]
    pub scenario: Scenario,
    /// TOML or JSON generator config; replaces the scenario preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Cohort file; `.csv` writes the wide layout, anything else JSON lines.
    #[arg(long, short)]
    pub out: PathBuf,
    /// Ground-truth sidecar; defaults to `<out stem>.truth.json`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// TOML run config.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Cohort files, replacing the config's inputs.
    #[arg(long = "input", short)]
    pub inputs: Vec<PathBuf>,
    /// Drugs to analyse, replacing the config's list.
    #[arg(long = "drug")]
    pub drugs: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, replacing the config's.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExplainArgs {
    /// Model bundle (`model.json` from a run).
    #[arg(long, short)]
    pub model: PathBuf,
    /// Feature CSV: id column then one column per feature, empty cells missing.
    #[arg(long, short)]
    pub features: PathBuf,
    /// Zero-based row to explain.
    #[arg(long, conflicts_with = "id")]
    pub row: Option<usize>,
    /// Admission id to explain.
    #[arg(long)]
    pub id: Option<String>,
    /// Output path; stdout when absent.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

pub fn default_truth_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "cohort".into());
    out.with_file_name(format!("{stem}.truth.json"))
}

pub fn load_synth_config(path: &Path) -> Result<SynthConfig> {
    let text = read_text(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        Ok(serde_json::from_str(&text)?)
    } else {
        Ok(toml::from_str(&text)?)
    }
}

pub fn synth_config(args: &SynthArgs) -> Result<SynthConfig> {
    let n = args.n.unwrap_or(2000);
    let seed = args.seed.unwrap_or(0);
    let mut cfg = match (&args.config, args.scenario) {
        (Some(p), _) => load_synth_config(p)?,
        (None, Scenario::Default) => SynthConfig { n, seed, ..SynthConfig::default() },
        (None, Scenario::Confounded) => SynthConfig::confounded(n, seed),
        (None, Scenario::Heterogeneous) => SynthConfig::heterogeneous(n, seed),
        (None, Scenario::Unmeasured) => SynthConfig::unmeasured(n, seed),
    };
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn synth(args: &SynthArgs) -> Result<GroundTruth> {
    let cfg = synth_config(args)?;
    let (records, truth) = generate(&cfg)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source })?;
    }
    write_cohort(&args.out, &records)?;
    let truth_path = args.truth.clone().unwrap_or_else(|| default_truth_path(&args.out));
    write_text(&truth_path, &truth.to_json()?)?;
    Ok(truth)
}

pub fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if !args.inputs.is_empty() {
        cfg.inputs = args.inputs.clone();
    }
    if !args.drugs.is_empty() {
        cfg.drugs = args.drugs.iter().map(|d| d.parse::<Drug>()).collect::<rwe_core::Result<_>>()?;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = Some(o.clone());
    }
    if cfg.output_dir.is_none() {
        return Err(CliError::Usage("no output directory: pass --out or set output_dir".into()));
    }
    Ok(cfg)
}

/// One line per drug for the terminal.
pub fn summarize(report: &pipeline::RunReport) -> String {
    let mut out = format!(
        "{} admissions selected, {} train / {} valid / {} test\n",
        report.cohort.n_selected, report.cohort.n_train, report.cohort.n_valid, report.cohort.n_test
    );
    for d in &report.drugs {
        let line = match d {
            DrugOutcome::Failed { drug, stage, error } => format!("{}: failed at {stage}: {error}", drug.slug()),
            DrugOutcome::Completed(r) => {
                let futility = match &r.futility {
                    FutilityOutcome::NotRun { reason } => format!("futility not run ({reason})"),
                    FutilityOutcome::Completed(v) => format!("futility {:?}", v.verdict),
                    FutilityOutcome::Failed { error } => format!("futility failed ({error})"),
                };
                let auc = r.te_test_auc.map_or("-".to_string(), |a| format!("{a:.3}"));
                format!(
                    "{}: {} treated of {}, TE test AUC {auc}, {futility}, {} claim(s){}",
                    r.drug.slug(),
                    r.n_treated,
                    r.n_eligible,
                    r.claims.len(),
                    if r.conclusions_suppressed { ", conclusions suppressed" } else { "" }
                )
            }
        };
        out.push_str(&line);
        out.push('\n');
    }
    out
}

pub fn run(args: &RunArgs) -> Result<pipeline::RunReport> {
    let cfg = run_config(args)?;
    Ok(pipeline::run(&cfg)?.report)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExplainOutput {
    pub admission_id: String,
    #[serde(flatten)]
    pub score: ScoreResponse,
}

pub fn explain(args: &ExplainArgs) -> Result<ExplainOutput> {
    let model = TeModel::from_json(&read_text(&args.model)?)?;
    let file = File::open(&args.features).map_err(|source| CliError::Io { path: args.features.clone(), source })?;
    let (ids, x) = FeatureMatrix::read_csv(file)?;
    let row = match (&args.id, args.row) {
        (Some(id), _) => {
            ids.iter().position(|i| i == id).ok_or_else(|| CliError::Usage(format!("no row with id `{id}`")))?
        }
        (None, r) => r.unwrap_or(0),
    };
    if row >= x.n_rows() {
        return Err(CliError::Usage(format!("row {row} out of range ({} rows)", x.n_rows())));
    }
    let drug = model.drug;
    let svc = ScoringService::new(vec![model]);
    let features = x.names().iter().cloned().zip(x.row(row).iter().copied()).collect();
    let score = svc.score(drug.slug(), &ScoreRequest { features }).map_err(|e| match e {
        pipeline::ScoreError::Validation(fields) => CliError::Usage(format!(
            "feature file does not match the model: {}",
            fields.iter().map(|f| format!("{} ({})", f.field, f.message)).collect::<Vec<_>>().join(", ")
        )),
        other => CliError::Usage(other.to_string()),
    })?;
    let out = ExplainOutput { admission_id: ids[row].clone(), score };
    if let Some(p) = &args.out {
        write_text(p, &serde_json::to_string_pretty(&out)?)?;
    }
    Ok(out)
}
