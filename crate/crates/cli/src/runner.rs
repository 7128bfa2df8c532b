//! The full experiment: data, preprocessing, cross-validated training,
//! metrics, attributions, fidelity and case studies.

use std::path::Path;

use attnfid::dataset::{generate, undersample_balance, Cohort};
use attnfid::evaluation::{
    fidelity, report_table, utility_table, Direction, FidelityReport, Substitution,
};
use attnfid::explain::{
    attention_importances, kernel_shap, logistic_weight_importance, random_attribution, Method,
    ShapConfig,
};
use attnfid::models::{FoldRouted, ModelKind};
use attnfid::seed::derive_seed;
use attnfid::training::{run_cv, CvConfig, CvRun, CvSummary, FoldResult};
use attnfid::{token_registry, Exec, Result};
use log::info;
use serde::Serialize;

use crate::artifacts::{ArtifactWriter, DirLock, Stamp};
use crate::case_study::{build_case_study, CaseStudyExport, CaseStudyInput};
use crate::config::{DataSource, ExperimentConfig};
use crate::failure::{Failure, Outcome};
use crate::svg::{render_aggregated_panel, render_vital_panel};

const STREAM_BALANCE: u64 = 11;
const STREAM_ATTRIBUTION: u64 = 12;
const STREAM_FIDELITY: u64 = 13;

/// Out-of-fold records of one model kind, pooled in fold order.
#[derive(Clone, Debug)]
pub struct OutOfFold {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<u8>,
    pub stay_ids: Vec<String>,
    /// Fold that held each record out.
    pub route: Vec<usize>,
}

pub fn out_of_fold(run: &CvRun) -> OutOfFold {
    let mut oof = OutOfFold {
        rows: Vec::new(),
        labels: Vec::new(),
        stay_ids: Vec::new(),
        route: Vec::new(),
    };
    for (f, fold) in run.folds.iter().enumerate() {
        oof.rows.extend(fold.test_rows.iter().cloned());
        oof.labels.extend(&fold.result.labels);
        oof.stay_ids.extend(fold.result.stay_ids.iter().cloned());
        oof.route
            .extend(std::iter::repeat(f).take(fold.test_rows.len()));
    }
    oof
}

/// Per-record attributions for a subset of the out-of-fold records.
#[derive(Clone, Debug)]
pub struct MethodAttributions {
    pub method: Method,
    /// Positions in the [`OutOfFold`] pool.
    pub records: Vec<usize>,
    pub scores: Vec<Vec<f64>>,
}

/// The first `n / 2` positives and `n - n / 2` negatives of the pool, in
/// pool order.
pub fn balanced_subset(labels: &[u8], n: usize) -> Vec<usize> {
    let (mut pos, mut neg) = (n / 2, n - n / 2);
    let mut out = Vec::with_capacity(n);
    for (i, &y) in labels.iter().enumerate() {
        let quota = if y == 1 { &mut pos } else { &mut neg };
        if *quota > 0 {
            *quota -= 1;
            out.push(i);
        }
    }
    out
}

/// Whether `method` can explain models of `kind`.
pub fn applies(method: Method, kind: ModelKind) -> bool {
    match method {
        Method::Attention => kind == ModelKind::Attention,
        Method::Weight => kind == ModelKind::Logistic,
        Method::Shap | Method::Random => true,
    }
}

pub struct ShapBudget {
    pub samples: usize,
    pub records: usize,
}

pub fn attribute(
    run: &CvRun,
    oof: &OutOfFold,
    method: Method,
    seed: u64,
    shap: &ShapBudget,
    exec: Exec,
) -> Result<MethodAttributions> {
    let n_tokens = oof.rows[0].len();
    let all: Vec<usize> = (0..oof.rows.len()).collect();
    let (records, scores) = match method {
        Method::Attention => {
            let mut scores = Vec::with_capacity(all.len());
            for fold in &run.folds {
                let model = fold.model.as_attention().ok_or_else(|| {
                    attnfid::Error::Model("attention attributions need the attention model".into())
                })?;
                let inputs: Vec<(Option<String>, Vec<f64>)> = fold
                    .result
                    .stay_ids
                    .iter()
                    .cloned()
                    .map(Some)
                    .zip(fold.test_rows.iter().cloned())
                    .collect();
                scores.extend(
                    attention_importances(model, &inputs)?
                        .into_iter()
                        .map(|a| a.scores),
                );
            }
            (all, scores)
        }
        Method::Weight => {
            let per_fold = run
                .folds
                .iter()
                .map(|f| {
                    let m = f.model.as_logistic().ok_or_else(|| {
                        attnfid::Error::Model("weight attributions need the logistic model".into())
                    })?;
                    Ok(logistic_weight_importance(m)?.scores)
                })
                .collect::<Result<Vec<_>>>()?;
            let scores = oof.route.iter().map(|&f| per_fold[f].clone()).collect();
            (all, scores)
        }
        Method::Random => {
            let scores = all
                .iter()
                .map(|&i| random_attribution(n_tokens, None, derive_seed(seed, i as u64)).scores)
                .collect();
            (all, scores)
        }
        Method::Shap => {
            let subset = balanced_subset(&oof.labels, shap.records);
            let mut scores = Vec::with_capacity(subset.len());
            for &i in &subset {
                let fold = &run.folds[oof.route[i]];
                let cfg = ShapConfig {
                    n_samples: shap.samples,
                    seed: derive_seed(seed, i as u64),
                    active: None,
                    exec,
                };
                let res = kernel_shap(
                    &fold.model,
                    Some(oof.stay_ids[i].clone()),
                    &oof.rows[i],
                    &fold.background,
                    &cfg,
                )?;
                for w in &res.warnings {
                    log::warn!("{}: {w}", oof.stay_ids[i]);
                }
                scores.push(res.attribution.scores);
            }
            (subset, scores)
        }
    };
    Ok(MethodAttributions {
        method,
        records,
        scores,
    })
}

/// Fidelity of one method's attributions, each record scored by the model
/// of the fold that held it out.
pub fn routed_fidelity(
    run: &CvRun,
    oof: &OutOfFold,
    attributions: &MethodAttributions,
    direction: Direction,
    cfg: &attnfid::evaluation::FidelityConfig,
) -> Result<FidelityReport> {
    let scorer = FoldRouted {
        models: run.folds.iter().map(|f| f.model.classifier()).collect(),
        route: attributions.records.iter().map(|&i| oof.route[i]).collect(),
    };
    let rows: Vec<Vec<f64>> = attributions
        .records
        .iter()
        .map(|&i| oof.rows[i].clone())
        .collect();
    let labels: Vec<u8> = attributions
        .records
        .iter()
        .map(|&i| oof.labels[i])
        .collect();
    fidelity(
        &scorer,
        &rows,
        &labels,
        &attributions.scores,
        direction,
        cfg,
        run.kind.name(),
        attributions.method.name(),
    )
}

#[derive(Serialize)]
struct FoldMetric {
    fold: usize,
    records: usize,
    auroc: f64,
    auprc: f64,
}

#[derive(Serialize)]
struct ModelMetrics {
    #[serde(flatten)]
    summary: CvSummary,
    folds: Vec<FoldMetric>,
}

#[derive(Serialize)]
struct MetricsDoc {
    records: usize,
    positives: usize,
    folds: usize,
    models: Vec<ModelMetrics>,
}

#[derive(Serialize)]
struct LossRow {
    model: ModelKind,
    fold: usize,
    stage: &'static str,
    epoch: usize,
    loss: f64,
}

#[derive(Serialize)]
struct AttributionRow<'a> {
    stay_id: &'a str,
    fold: usize,
    label: u8,
    scores: &'a [f64],
}

#[derive(Serialize)]
struct FidelityDoc<'a> {
    fractions: &'a [f64],
    draws: usize,
    substitution: Substitution,
    headline_fraction: f64,
    reports: &'a [FidelityReport],
}

/// What a completed run leaves in memory besides its artifacts.
pub struct RunOutput {
    pub cohort: Cohort,
    pub runs: Vec<CvRun>,
    pub reports: Vec<FidelityReport>,
    pub case_studies: Vec<CaseStudyExport>,
}

struct Progress<'a> {
    writer: ArtifactWriter,
    done: Vec<&'a str>,
}

impl<'a> Progress<'a> {
    fn stage<T>(
        &mut self,
        name: &'a str,
        f: impl FnOnce(&mut ArtifactWriter) -> Outcome<T>,
    ) -> std::result::Result<T, (&'a str, Failure)> {
        info!("stage {name}");
        let out = f(&mut self.writer).map_err(|e| (name, e))?;
        self.done.push(name);
        Ok(out)
    }
}

fn load_data(cfg: &ExperimentConfig, w: &mut ArtifactWriter) -> Outcome<Cohort> {
    match &cfg.data {
        DataSource::Synth(spec) => {
            let synth = generate(spec)?;
            w.json("data/ground_truth.json", &synth.truth)?;
            Ok(synth.cohort)
        }
        DataSource::Csv { path, preprocessed } => {
            let cohort = crate::commands::load_cohort(path)?;
            if *preprocessed {
                Ok(cohort.mark_preprocessed()?)
            } else {
                Ok(cohort)
            }
        }
    }
}

fn write_training(w: &mut ArtifactWriter, runs: &[CvRun]) -> Outcome<()> {
    let mut folds: Vec<FoldResult> = Vec::new();
    let mut losses = Vec::new();
    for run in runs {
        for (f, fold) in run.folds.iter().enumerate() {
            let rel = format!("checkpoints/{}_fold{f}.json", run.kind.name());
            w.json(&rel, &fold.model.to_checkpoint())?;
            folds.push(FoldResult {
                checkpoint: Some(rel),
                ..fold.result.clone()
            });
            for (stage, curve) in [
                ("pretrain", &fold.pretrain_curve),
                ("train", &fold.train_curve),
            ] {
                losses.extend(curve.iter().enumerate().map(|(epoch, &loss)| LossRow {
                    model: run.kind,
                    fold: f,
                    stage,
                    epoch,
                    loss,
                }));
            }
        }
    }
    w.jsonl("folds.jsonl", &folds)?;
    w.jsonl("loss_curves.jsonl", &losses)
}

fn write_metrics(w: &mut ArtifactWriter, cohort: &Cohort, runs: &[CvRun]) -> Outcome<()> {
    let doc = MetricsDoc {
        records: cohort.len(),
        positives: cohort.positives(),
        folds: runs[0].folds.len(),
        models: runs
            .iter()
            .map(|r| ModelMetrics {
                summary: r.summary.clone(),
                folds: r
                    .folds
                    .iter()
                    .map(|f| FoldMetric {
                        fold: f.result.fold,
                        records: f.result.labels.len(),
                        auroc: f.result.auroc,
                        auprc: f.result.auprc,
                    })
                    .collect(),
            })
            .collect(),
    };
    w.json("metrics.json", &doc)?;
    let table = utility_table(&runs.iter().map(|r| r.summary.clone()).collect::<Vec<_>>());
    w.text("tables/utility.txt", &table.text)?;
    w.text("tables/utility.csv", &table.csv)
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

/// Writes a case study's JSON and SVG panels under `dir`.
pub fn write_case_study(
    w: &mut ArtifactWriter,
    dir: &str,
    export: &CaseStudyExport,
) -> Outcome<()> {
    w.json(&format!("{dir}/case_study.json"), export)?;
    let mut panel = 0;
    for v in &export.vitals {
        panel += 1;
        w.svg(
            &format!("{dir}/panel_{panel:02}_{}.svg", slug(&v.name)),
            &render_vital_panel(v),
        )?;
    }
    for a in &export.aggregated {
        panel += 1;
        w.svg(
            &format!("{dir}/panel_{panel:02}_{}.svg", slug(&a.name)),
            &render_aggregated_panel(a),
        )?;
    }
    Ok(())
}

fn stages<'a>(
    cfg: &ExperimentConfig,
    p: &mut Progress<'a>,
) -> std::result::Result<RunOutput, (&'a str, Failure)> {
    let seed = cfg.seed;
    let raw = p.stage("data", |w| load_data(cfg, w))?;
    let cohort = p.stage("preprocess", |_| {
        if cfg.preprocess.balance {
            Ok(undersample_balance(
                &raw,
                derive_seed(seed, STREAM_BALANCE),
            )?)
        } else {
            Ok(raw.clone())
        }
    })?;
    let runs = p.stage("train", |w| {
        let cv = CvConfig {
            seed,
            mice: cfg.preprocess.mice,
            model: cfg.model.clone(),
            pretrain: cfg.pretrain.clone(),
            train: cfg.train.clone(),
            exec: cfg.exec,
        };
        let runs = run_cv(&cohort, &cfg.models, &cv)?;
        write_training(w, &runs)?;
        Ok(runs)
    })?;
    p.stage("metrics", |w| write_metrics(w, &cohort, &runs))?;

    let pools: Vec<OutOfFold> = runs.iter().map(out_of_fold).collect();
    let attributions = p.stage("explain", |w| {
        let registry = token_registry(&cohort.layout, &cohort.feature_names);
        w.json(
            "attributions/token_registry.json",
            &serde_json::json!({ "tokens": registry }),
        )?;
        let budget = ShapBudget {
            samples: cfg.explain.shap_samples,
            records: cfg.explain.shap_records,
        };
        let mut all = Vec::new();
        for (run, oof) in runs.iter().zip(&pools) {
            let mut per_model = Vec::new();
            for (m, &method) in cfg.explain.methods.iter().enumerate() {
                if !applies(method, run.kind) {
                    continue;
                }
                let stream = derive_seed(derive_seed(seed, STREAM_ATTRIBUTION), m as u64);
                let att = attribute(run, oof, method, stream, &budget, cfg.exec)?;
                let rows: Vec<AttributionRow> = att
                    .records
                    .iter()
                    .zip(&att.scores)
                    .map(|(&i, s)| AttributionRow {
                        stay_id: &oof.stay_ids[i],
                        fold: oof.route[i],
                        label: oof.labels[i],
                        scores: s,
                    })
                    .collect();
                w.jsonl(
                    &format!("attributions/{}_{}.jsonl", run.kind.name(), method.name()),
                    &rows,
                )?;
                per_model.push(att);
            }
            all.push(per_model);
        }
        Ok(all)
    })?;

    let reports = p.stage("fidelity", |w| {
        let fcfg = cfg.fidelity_config(derive_seed(seed, STREAM_FIDELITY));
        let mut reports = Vec::new();
        for ((run, oof), atts) in runs.iter().zip(&pools).zip(&attributions) {
            for att in atts {
                for direction in [Direction::Plus, Direction::Minus] {
                    reports.push(routed_fidelity(run, oof, att, direction, &fcfg)?);
                }
            }
        }
        if !reports.is_empty() {
            let doc = FidelityDoc {
                fractions: &cfg.fidelity.fractions,
                draws: cfg.fidelity.draws,
                substitution: cfg.fidelity.substitution,
                headline_fraction: cfg.fidelity.headline_fraction,
                reports: &reports,
            };
            w.json("fidelity.json", &doc)?;
            let table = report_table(&reports, cfg.fidelity.headline_fraction);
            w.text("tables/fidelity.txt", &table.text)?;
            w.text("tables/fidelity.csv", &table.csv)?;
        }
        Ok(reports)
    })?;

    let case_studies = p.stage("case_study", |w| {
        let Some((run, oof)) = runs
            .iter()
            .zip(&pools)
            .find(|(r, _)| r.kind == ModelKind::Attention)
        else {
            return Ok(Vec::new());
        };
        let mut exports = Vec::new();
        for i in (0..oof.rows.len())
            .filter(|&i| oof.labels[i] == 1)
            .take(cfg.explain.case_studies)
        {
            let model = run.folds[oof.route[i]]
                .model
                .as_attention()
                .expect("attention run");
            let export = build_case_study(
                model,
                &CaseStudyInput {
                    layout: cohort.layout,
                    feature_names: &cohort.feature_names,
                    channel_names: &cohort.channel_names,
                    population: &oof.rows,
                    stay_id: &oof.stay_ids[i],
                    label: oof.labels[i],
                    row: &oof.rows[i],
                },
            )?;
            write_case_study(
                w,
                &format!("case_studies/{}", slug(&oof.stay_ids[i])),
                &export,
            )?;
            exports.push(export);
        }
        Ok(exports)
    })?;

    Ok(RunOutput {
        cohort,
        runs,
        reports,
        case_studies,
    })
}

/// Runs every stage into `out`. On failure the artifacts written so far
/// stay, and the manifest names the stage that failed.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Outcome<RunOutput> {
    let _lock = DirLock::acquire(out)?;
    let writer = ArtifactWriter::new(out, Stamp::new(cfg.hash(), cfg.seed))?;
    let mut progress = Progress {
        writer,
        done: Vec::new(),
    };
    match stages(cfg, &mut progress) {
        Ok(output) => {
            let done = progress.done.clone();
            progress.writer.manifest(&done, None)?;
            Ok(output)
        }
        Err((stage, failure)) => {
            let done = progress.done.clone();
            if let Err(e) = progress.writer.manifest(&done, Some((stage, &failure))) {
                log::error!("could not write the manifest: {e}");
            }
            Err(failure)
        }
    }
}
