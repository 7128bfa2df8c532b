//! Cohort ingestion and preprocessing.
//!
//! Preprocessing runs in a fixed order: impute, normalize, undersample,
//! window. Each cohort carries its [`Stage`] and every step checks it.
//! Undersampling may also run first, on the raw cohort, when imputation
//! and scaling are fitted later on each training fold.

mod balance;
mod csv_io;
mod impute;
mod pipeline;
mod record;
mod scale;
mod synth;
mod windows;

pub use balance::undersample_balance;
pub use csv_io::{csv_header, load_cohort_csv, read_cohort_csv, save_cohort_csv, write_cohort_csv};
pub use impute::{mice_impute, ColumnModel, MiceConfig, MiceModel};
pub use pipeline::Preprocessor;
pub use record::{default_channel_names, default_feature_names, Cohort, PatientRecord, Stage};
pub use scale::{minmax_normalize, MinMaxRegistry, Range};
pub use synth::{
    drift_start, generate, synth_generate, GroundTruth, SynthConfig, Synthetic,
    DEMOGRAPHIC_FEATURES,
};
pub use windows::{make_windows, make_windows_with, WindowSample, FUTURE_HOURS, PAST_HOURS};
