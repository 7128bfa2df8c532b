//! Command-line surface: one subcommand per pipeline stage plus `run`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use attnfid::dataset::{
    generate, load_cohort_csv, make_windows_with, save_cohort_csv, undersample_balance, Cohort,
    MiceConfig, Preprocessor, SynthConfig,
};
use attnfid::evaluation::{
    auprc, auroc, fidelity, mean_true_prob, Direction, FidelityConfig, Substitution,
};
use attnfid::explain::{
    attention_importances, kernel_shap, logistic_weight_importance, random_attribution, Method,
    ShapConfig,
};
use attnfid::models::{
    Checkpoint, Classifier, ModelKind, MortalityModel, TrainedModel, VitalAutoencoder,
};
use attnfid::seed::derive_seed;
use attnfid::training::{pretrain_stage1, train_classifier, PretrainConfig};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::artifacts::{ArtifactWriter, Stamp};
use crate::case_study::export_case_study;
use crate::config::{hash_json, ExperimentConfig};
use crate::failure::{Failure, Outcome};
use crate::runner::{run_experiment, write_case_study};

#[derive(Debug, Parser)]
#[command(
    name = "attnfid",
    version,
    about = "Attention-as-explanation experiments for ICU mortality prediction"
)]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with planted label signal.
    Synth(SynthArgs),
    /// Balance, impute and scale a raw cohort.
    Preprocess(PreprocessArgs),
    /// Pretrain the vital encoder on forecasting windows.
    Pretrain(PretrainArgs),
    /// Train one classifier on a preprocessed cohort.
    Train(TrainArgs),
    /// Score a trained model on a preprocessed cohort.
    Evaluate(EvaluateArgs),
    /// Per-record token attributions.
    Explain(ExplainArgs),
    /// Fidelity of saved attributions.
    Fidelity(FidelityArgs),
    /// Export one patient's explanation with plots.
    CaseStudy(CaseStudyArgs),
    /// The full pipeline from one config file.
    Run(RunArgs),
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 600)]
    pub n: usize,
    #[arg(long = "pos-frac", default_value_t = 0.5)]
    pub pos_frac: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    /// Keep the class mix instead of undersampling to 50-50.
    #[arg(long)]
    pub no_balance: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub mice_rounds: usize,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PretrainArgs {
    /// Preprocessed cohort CSV.
    #[arg(long)]
    pub cohort: PathBuf,
    /// Experiment config supplying the model and pretraining sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long, value_parser = parse_enum::<ModelKind>, default_value = "attention")]
    pub kind: ModelKind,
    /// Autoencoder checkpoint to start the attention model from.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub cohort: PathBuf,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long, value_parser = parse_enum::<Method>)]
    pub method: Method,
    /// Explain only the first records of the cohort.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 4096)]
    pub shap_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FidelityArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub cohort: PathBuf,
    /// Attribution lines written by `explain`.
    #[arg(long)]
    pub attributions: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.2")]
    pub fractions: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = parse_enum::<Substitution>, default_value = "uniform")]
    pub substitution: Substitution,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CaseStudyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long)]
    pub stay: String,
    #[serde(skip)]
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = if cli.verbose {
        log::LevelFilter::Info
    } else {
        log::LevelFilter::Warn
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Outcome<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Explain(a) => explain(a),
        Command::Fidelity(a) => fidelity_cmd(a),
        Command::CaseStudy(a) => case_study(a),
        Command::Run(a) => run(a),
    }
}

fn stamp_for<T: Serialize>(command: &str, args: &T, seed: u64) -> Stamp {
    Stamp::new(
        hash_json(&serde_json::json!({ "command": command, "args": args })),
        seed,
    )
}

/// Writer for a single output file: its directory, and its name.
fn file_writer(out: &Path, stamp: Stamp) -> Outcome<(ArtifactWriter, String)> {
    let dir = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = out
        .file_name()
        .ok_or_else(|| Failure::Config(format!("{} is not a file path", out.display())))?
        .to_string_lossy()
        .into_owned();
    Ok((ArtifactWriter::new(dir, stamp)?, name))
}

fn sibling(out: &Path, suffix: &str) -> String {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    format!("{stem}{suffix}")
}

fn section_config(path: Option<&PathBuf>) -> Outcome<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

/// Loads a cohort CSV; a file that cannot be read is a data error.
pub fn load_cohort(path: &Path) -> Outcome<Cohort> {
    load_cohort_csv(path).map_err(|e| match e {
        attnfid::Error::Io(io) => Failure::Data(format!("{}: {io}", path.display())),
        other => other.into(),
    })
}

pub fn load_normalized(path: &Path) -> Outcome<Cohort> {
    Ok(load_cohort(path)?.mark_preprocessed()?)
}

/// Reads a checkpoint written bare or inside a stamped document.
pub fn load_checkpoint(path: &Path) -> Outcome<Checkpoint> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("stamp");
    }
    serde_json::from_value(value)
        .map_err(|e| Failure::Data(format!("{}: not a checkpoint: {e}", path.display())))
}

pub fn load_model(path: &Path) -> Outcome<TrainedModel> {
    Ok(TrainedModel::from_checkpoint(&load_checkpoint(path)?)?)
}

fn attention_model(model: &TrainedModel) -> Outcome<&MortalityModel> {
    model
        .as_attention()
        .ok_or_else(|| Failure::Config("this command needs an attention model checkpoint".into()))
}

fn synth(a: &SynthArgs) -> Outcome<()> {
    let spec = SynthConfig {
        n: a.n,
        positive_fraction: a.pos_frac,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let synth = generate(&spec)?;
    save_cohort_csv(&synth.cohort, &a.out)?;
    let (mut w, _) = file_writer(&a.out, stamp_for("synth", a, a.seed))?;
    w.json(&sibling(&a.out, ".truth.json"), &synth.truth)?;
    info!(
        "wrote {} records to {}",
        synth.cohort.len(),
        a.out.display()
    );
    Ok(())
}

fn preprocess(a: &PreprocessArgs) -> Outcome<()> {
    let mut cohort = load_cohort(&a.cohort)?;
    if !a.no_balance {
        cohort = undersample_balance(&cohort, a.seed)?;
    }
    let (normalized, prep) = Preprocessor::fit(
        &cohort,
        MiceConfig {
            rounds: a.mice_rounds,
            ..MiceConfig::default()
        },
    )?;
    save_cohort_csv(&normalized, &a.out)?;
    let (mut w, _) = file_writer(&a.out, stamp_for("preprocess", a, a.seed))?;
    w.json(&sibling(&a.out, ".preprocessor.json"), &prep)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct LossLine {
    epoch: usize,
    loss: f64,
}

fn pretrain(a: &PretrainArgs) -> Outcome<()> {
    let cfg = section_config(a.config.as_ref())?;
    let cohort = load_normalized(&a.cohort)?;
    let (auto, curve) = pretrain_on(&cohort, &cfg)?;
    let (mut w, name) = file_writer(&a.out, stamp_for("pretrain", &(a, cfg.hash()), cfg.seed))?;
    w.json(&name, &Checkpoint::of_autoencoder(&auto))?;
    let lines: Vec<LossLine> = curve
        .iter()
        .enumerate()
        .map(|(epoch, &loss)| LossLine { epoch, loss })
        .collect();
    w.jsonl(&sibling(&a.out, ".loss.jsonl"), &lines)
}

fn pretrain_on(cohort: &Cohort, cfg: &ExperimentConfig) -> Outcome<(VitalAutoencoder, Vec<f64>)> {
    let model_cfg = attnfid::models::ModelConfig {
        layout: cohort.layout,
        ..cfg.model.clone()
    };
    let mut auto = VitalAutoencoder::new(model_cfg)?;
    let windows = make_windows_with(cohort, cfg.pretrain.past, cfg.pretrain.future)?;
    let pre: &PretrainConfig = &cfg.pretrain;
    let report = pretrain_stage1(&mut auto, &windows, pre)?;
    Ok((auto, report.loss_curve))
}

fn train(a: &TrainArgs) -> Outcome<()> {
    let cfg = section_config(a.config.as_ref())?;
    let cohort = load_normalized(&a.cohort)?;
    let model_cfg = attnfid::models::ModelConfig {
        layout: cohort.layout,
        ..cfg.model.clone()
    };
    let mut model = match (a.kind, &a.pretrained) {
        (ModelKind::Attention, Some(path)) => {
            let auto = load_checkpoint(path)?.into_autoencoder()?;
            TrainedModel::Attention(MortalityModel::from_pretrained(model_cfg, &auto)?)
        }
        (ModelKind::Attention, None) if cfg.pretrain.epochs > 0 => {
            let (auto, _) = pretrain_on(&cohort, &cfg)?;
            TrainedModel::Attention(MortalityModel::from_pretrained(model_cfg, &auto)?)
        }
        (kind, _) => TrainedModel::new(kind, model_cfg)?,
    };
    let rows = cohort.token_matrix()?;
    let curve = train_classifier(&mut model, &rows, &cohort.labels(), &cfg.train)?;
    let (mut w, name) = file_writer(&a.out, stamp_for("train", &(a, cfg.hash()), cfg.seed))?;
    w.json(&name, &model.to_checkpoint())?;
    let lines: Vec<LossLine> = curve
        .iter()
        .enumerate()
        .map(|(epoch, &loss)| LossLine { epoch, loss })
        .collect();
    w.jsonl(&sibling(&a.out, ".loss.jsonl"), &lines)
}

#[derive(Serialize)]
struct Evaluation {
    model: ModelKind,
    records: usize,
    auroc: f64,
    auprc: f64,
    mean_prob: f64,
}

fn evaluate(a: &EvaluateArgs) -> Outcome<()> {
    let model = load_model(&a.model)?;
    let cohort = load_normalized(&a.cohort)?;
    let labels = cohort.labels();
    let p = model.predict(&cohort.token_matrix()?)?;
    let doc = Evaluation {
        model: model.kind(),
        records: labels.len(),
        auroc: auroc(&p, &labels)?,
        auprc: auprc(&p, &labels)?,
        mean_prob: mean_true_prob(&p, &labels),
    };
    let (mut w, name) = file_writer(&a.out, stamp_for("evaluate", a, 0))?;
    w.json(&name, &doc)
}

/// One line of an attribution file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionLine {
    pub stay_id: String,
    pub label: u8,
    pub scores: Vec<f64>,
}

fn explain(a: &ExplainArgs) -> Outcome<()> {
    let model = load_model(&a.model)?;
    let cohort = load_normalized(&a.cohort)?;
    let rows = cohort.token_matrix()?;
    let n = a.limit.unwrap_or(rows.len()).min(rows.len());
    let ids: Vec<String> = cohort.records.iter().map(|r| r.stay_id.clone()).collect();
    let scores: Vec<Vec<f64>> = match a.method {
        Method::Attention => {
            let inputs: Vec<(Option<String>, Vec<f64>)> = (0..n)
                .map(|i| (Some(ids[i].clone()), rows[i].clone()))
                .collect();
            attention_importances(attention_model(&model)?, &inputs)?
                .into_iter()
                .map(|a| a.scores)
                .collect()
        }
        Method::Weight => {
            let m = model.as_logistic().ok_or_else(|| {
                Failure::Config("weight attributions need a logistic checkpoint".into())
            })?;
            vec![logistic_weight_importance(m)?.scores; n]
        }
        Method::Random => (0..n)
            .map(|i| random_attribution(rows[0].len(), None, derive_seed(a.seed, i as u64)).scores)
            .collect(),
        Method::Shap => {
            let background: Vec<f64> = (0..rows[0].len())
                .map(|t| rows.iter().map(|r| r[t]).sum::<f64>() / rows.len() as f64)
                .collect();
            (0..n)
                .map(|i| {
                    let cfg = ShapConfig {
                        n_samples: a.shap_samples,
                        seed: derive_seed(a.seed, i as u64),
                        ..ShapConfig::default()
                    };
                    Ok(
                        kernel_shap(&model, Some(ids[i].clone()), &rows[i], &background, &cfg)?
                            .attribution
                            .scores,
                    )
                })
                .collect::<Outcome<_>>()?
        }
    };
    let lines: Vec<AttributionLine> = (0..n)
        .zip(scores)
        .map(|(i, scores)| AttributionLine {
            stay_id: ids[i].clone(),
            label: cohort.records[i].label,
            scores,
        })
        .collect();
    let (mut w, name) = file_writer(&a.out, stamp_for("explain", a, a.seed))?;
    w.jsonl(&name, &lines)
}

/// Attribution lines of a file written by `explain` or `run`.
pub fn read_attribution_lines(path: &Path) -> Outcome<Vec<AttributionLine>> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with("{\"stamp\""))
        .map(|(i, l)| {
            let v: serde_json::Value = serde_json::from_str(l)
                .map_err(|e| Failure::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
            serde_json::from_value(v)
                .map_err(|e| Failure::Data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

#[derive(Serialize)]
struct FidelityOut {
    reports: Vec<attnfid::evaluation::FidelityReport>,
}

fn fidelity_cmd(a: &FidelityArgs) -> Outcome<()> {
    let model = load_model(&a.model)?;
    let cohort = load_normalized(&a.cohort)?;
    let lines = read_attribution_lines(&a.attributions)?;
    let mut rows = Vec::with_capacity(lines.len());
    let mut labels = Vec::with_capacity(lines.len());
    for line in &lines {
        let i = cohort
            .find(&line.stay_id)
            .ok_or_else(|| Failure::Data(format!("stay {} is not in the cohort", line.stay_id)))?;
        rows.push(cohort.records[i].tokens()?);
        labels.push(cohort.records[i].label);
    }
    let scores: Vec<Vec<f64>> = lines.into_iter().map(|l| l.scores).collect();
    let cfg = FidelityConfig {
        fractions: a.fractions.clone(),
        draws: a.draws,
        seed: a.seed,
        substitution: a.substitution,
        ..FidelityConfig::default()
    };
    let method = a
        .attributions
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let reports = [Direction::Plus, Direction::Minus]
        .into_iter()
        .map(|d| {
            fidelity(
                &model,
                &rows,
                &labels,
                &scores,
                d,
                &cfg,
                model.kind().name(),
                &method,
            )
        })
        .collect::<attnfid::Result<Vec<_>>>()?;
    let (mut w, name) = file_writer(&a.out, stamp_for("fidelity", a, a.seed))?;
    w.json(&name, &FidelityOut { reports })
}

fn case_study(a: &CaseStudyArgs) -> Outcome<()> {
    let model = load_model(&a.model)?;
    let cohort = load_normalized(&a.cohort)?;
    let export = export_case_study(attention_model(&model)?, &cohort, &a.stay)?;
    let mut w = ArtifactWriter::new(&a.out, stamp_for("case-study", a, 0))?;
    write_case_study(&mut w, ".", &export)
}

fn run(a: &RunArgs) -> Outcome<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let out = a
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| {
            Failure::Config("no output directory: pass --out or set output_dir".into())
        })?;
    let output = run_experiment(&cfg, &out)?;
    for run in &output.runs {
        let s = &run.summary;
        info!(
            "{}: AUROC {:.4} ± {:.4}, AUPRC {:.4} ± {:.4}",
            s.model.name(),
            s.auroc_mean,
            s.auroc_std,
            s.auprc_mean,
            s.auprc_std
        );
    }
    Ok(())
}
