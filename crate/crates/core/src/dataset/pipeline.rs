use serde::{Deserialize, Serialize};

use crate::dataset::impute::{MiceConfig, MiceModel};
use crate::dataset::record::Cohort;
use crate::dataset::scale::MinMaxRegistry;
use crate::error::Result;

/// Imputation and scaling fitted on one cohort, applicable to others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub imputer: MiceModel,
    pub scaler: MinMaxRegistry,
}

impl Preprocessor {
    /// Fits on `train` and returns it normalized.
    pub fn fit(train: &Cohort, mice: MiceConfig) -> Result<(Cohort, Preprocessor)> {
        let (imputed, imputer) = MiceModel::fit(train, mice)?;
        let scaler = MinMaxRegistry::fit(&imputed)?;
        let normalized = scaler.transform(&imputed)?;
        Ok((normalized, Preprocessor { imputer, scaler }))
    }

    /// Imputes and scales a raw cohort with the fitted state only.
    pub fn apply(&self, cohort: &Cohort) -> Result<Cohort> {
        let imputed = self.imputer.transform(cohort)?;
        self.scaler.transform(&imputed)
    }
}
