use serde::{Deserialize, Serialize};

use crate::dataset::{make_windows_with, Cohort, MiceConfig, Preprocessor, Stage};
use crate::error::{Error, Result};
use crate::evaluation::{auprc, auroc};
use crate::exec::Exec;
use crate::models::{
    Classifier, ModelConfig, ModelKind, MortalityModel, TrainedModel, VitalAutoencoder,
};
use crate::seed::derive_seed;
use crate::training::folds::{stratified_kfold, Fold};
use crate::training::pretrain::{pretrain_stage1, PretrainConfig};
use crate::training::train::{train_classifier, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub seed: u64,
    pub mice: MiceConfig,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub exec: Exec,
}

/// Test-split outcome of one model on one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub model: ModelKind,
    pub stay_ids: Vec<String>,
    pub probabilities: Vec<f64>,
    pub labels: Vec<u8>,
    pub auroc: f64,
    pub auprc: f64,
    /// Where the fold's trained model was written, when it was.
    pub checkpoint: Option<String>,
}

/// Everything a fold leaves behind for explanation and fidelity work.
#[derive(Clone, Debug)]
pub struct FoldRun {
    pub result: FoldResult,
    pub model: TrainedModel,
    /// Cohort indices of the test records.
    pub test_indices: Vec<usize>,
    /// Preprocessed test token vectors, aligned with `test_indices`.
    pub test_rows: Vec<Vec<f64>>,
    /// Per-token mean of the preprocessed training split.
    pub background: Vec<f64>,
    pub pretrain_curve: Vec<f64>,
    pub train_curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub model: ModelKind,
    pub auroc_mean: f64,
    pub auroc_std: f64,
    pub auprc_mean: f64,
    pub auprc_std: f64,
}

#[derive(Clone, Debug)]
pub struct CvRun {
    pub kind: ModelKind,
    pub folds: Vec<FoldRun>,
    pub summary: CvSummary,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn kind_stream(kind: ModelKind) -> u64 {
    match kind {
        ModelKind::Attention => 1,
        ModelKind::Logistic => 2,
        ModelKind::Lstm => 3,
    }
}

/// Training and test splits of one fold, preprocessed. Raw cohorts are
/// imputed and scaled with state fitted on the training split alone;
/// normalized cohorts are used as they are.
pub fn prepare_fold(cohort: &Cohort, fold: &Fold, mice: MiceConfig) -> Result<(Cohort, Cohort)> {
    let train = cohort.subset(&fold.train);
    let test = cohort.subset(&fold.test);
    match cohort.stage() {
        Stage::Raw => {
            let (train, prep) = Preprocessor::fit(&train, mice)?;
            let test = prep.apply(&test)?;
            Ok((train, test))
        }
        Stage::Normalized => Ok((train, test)),
        Stage::Imputed => Err(Error::State(
            "cross-validation needs a raw or fully normalized cohort".into(),
        )),
    }
}

fn token_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; rows[0].len()];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Trains every requested model on one fold and scores its test split.
pub fn fit_fold(
    cohort: &Cohort,
    index: usize,
    fold: &Fold,
    kinds: &[ModelKind],
    cfg: &CvConfig,
) -> Result<Vec<FoldRun>> {
    let (train, test) = prepare_fold(cohort, fold, cfg.mice)?;
    let train_rows = train.token_matrix()?;
    let train_labels = train.labels();
    let test_rows = test.token_matrix()?;
    let test_labels = test.labels();
    let background = token_mean(&train_rows);
    let fold_seed = derive_seed(cfg.seed, index as u64);

    let mut runs = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let seed = derive_seed(fold_seed, kind_stream(kind));
        let model_cfg = ModelConfig {
            layout: cohort.layout,
            seed,
            ..cfg.model.clone()
        };
        let mut pretrain_curve = Vec::new();
        let mut model = match kind {
            ModelKind::Attention => {
                let windows = make_windows_with(&train, cfg.pretrain.past, cfg.pretrain.future)?;
                let mut auto = VitalAutoencoder::new(model_cfg.clone())?;
                let pre_cfg = PretrainConfig {
                    seed: derive_seed(seed, 100),
                    ..cfg.pretrain.clone()
                };
                if cfg.pretrain.epochs > 0 {
                    pretrain_curve = pretrain_stage1(&mut auto, &windows, &pre_cfg)?.loss_curve;
                }
                TrainedModel::Attention(MortalityModel::from_pretrained(model_cfg, &auto)?)
            }
            other => TrainedModel::new(other, model_cfg)?,
        };
        let train_cfg = TrainConfig {
            seed: derive_seed(seed, 200),
            ..cfg.train.clone()
        };
        let train_curve = train_classifier(&mut model, &train_rows, &train_labels, &train_cfg)?;
        let probabilities = model.predict(&test_rows)?;
        let result = FoldResult {
            fold: index,
            model: kind,
            stay_ids: test.records.iter().map(|r| r.stay_id.clone()).collect(),
            auroc: auroc(&probabilities, &test_labels)?,
            auprc: auprc(&probabilities, &test_labels)?,
            probabilities,
            labels: test_labels.clone(),
            checkpoint: None,
        };
        runs.push(FoldRun {
            result,
            model,
            test_indices: fold.test.clone(),
            test_rows: test_rows.clone(),
            background: background.clone(),
            pretrain_curve,
            train_curve,
        });
    }
    Ok(runs)
}

/// Stratified k-fold cross-validation of every model kind on `cohort`.
/// Folds run through `cfg.exec` and are merged by fold index.
pub fn run_cv(cohort: &Cohort, kinds: &[ModelKind], cfg: &CvConfig) -> Result<Vec<CvRun>> {
    cfg.train.validate()?;
    if kinds.is_empty() {
        return Err(Error::Config("no model kinds to cross-validate".into()));
    }
    let folds = stratified_kfold(&cohort.labels(), cfg.train.folds, cfg.seed)?;
    let per_fold = cfg
        .exec
        .try_map(folds.len(), |i| fit_fold(cohort, i, &folds[i], kinds, cfg))?;
    let mut by_kind: Vec<Vec<FoldRun>> = vec![Vec::with_capacity(folds.len()); kinds.len()];
    for runs in per_fold {
        for (slot, run) in by_kind.iter_mut().zip(runs) {
            slot.push(run);
        }
    }
    Ok(kinds
        .iter()
        .zip(by_kind)
        .map(|(&kind, folds)| {
            let aurocs: Vec<f64> = folds.iter().map(|f| f.result.auroc).collect();
            let auprcs: Vec<f64> = folds.iter().map(|f| f.result.auprc).collect();
            let (auroc_mean, auroc_std) = mean_std(&aurocs);
            let (auprc_mean, auprc_std) = mean_std(&auprcs);
            CvRun {
                kind,
                folds,
                summary: CvSummary {
                    model: kind,
                    auroc_mean,
                    auroc_std,
                    auprc_mean,
                    auprc_std,
                },
            }
        })
        .collect())
}
