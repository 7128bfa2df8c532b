//! Two-stage training and the cross-validation driver.
//!
//! Stage one pretrains the vital encoder on per-channel windows: the
//! future hours are masked and the decoder must both predict them and
//! reconstruct the past. Stage two trains the full classifier with
//! cross-entropy. Cross-validation fits all preprocessing, pretraining and
//! training on each fold's training split only.

mod cv;
mod folds;
mod pretrain;
mod train;

pub use cv::{
    fit_fold, mean_std, prepare_fold, run_cv, CvConfig, CvRun, CvSummary, FoldResult, FoldRun,
};
pub use folds::{stratified_kfold, Fold};
pub use pretrain::{
    future_mse, persistence_mse, predict_windows, pretrain_input, pretrain_stage1, PretrainConfig,
    PretrainReport,
};
pub use train::{train_classifier, TrainConfig};
