//! Deterministic chained-equations imputation.
//!
//! Every token is a column. Missing cells start at their column mean; each
//! round then regresses every incomplete column on its most correlated
//! predictors (ordinary least squares with intercept, fitted on rows where
//! the target is observed) and overwrites only the missing cells with the
//! fitted values.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::record::{Cohort, Stage};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiceConfig {
    pub rounds: usize,
    /// Predictors per regression, picked by absolute correlation.
    pub max_predictors: usize,
}

impl Default for MiceConfig {
    fn default() -> Self {
        MiceConfig {
            rounds: 10,
            max_predictors: 12,
        }
    }
}

/// One fitted column equation: `intercept + Σ coef_j * column_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnModel {
    pub predictors: Vec<usize>,
    pub intercept: f64,
    pub coefs: Vec<f64>,
}

impl ColumnModel {
    fn predict(&self, cols: &[Vec<f64>], row: usize) -> f64 {
        self.intercept
            + self
                .predictors
                .iter()
                .zip(&self.coefs)
                .map(|(&p, &c)| c * cols[p][row])
                .sum::<f64>()
    }
}

/// Imputer state fitted on one cohort, reusable on others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiceModel {
    pub config: MiceConfig,
    pub means: Vec<f64>,
    pub columns: Vec<ColumnModel>,
    /// Largest change of any imputed cell in each round.
    pub round_deltas: Vec<f64>,
}

/// Imputes `cohort`; see [`MiceModel::fit`].
pub fn mice_impute(cohort: &Cohort, rounds: usize) -> Result<Cohort> {
    let config = MiceConfig {
        rounds,
        ..MiceConfig::default()
    };
    MiceModel::fit(cohort, config).map(|(c, _)| c)
}

impl MiceModel {
    /// Runs the chain on `cohort` and returns the completed cohort with
    /// the fitted equations.
    pub fn fit(cohort: &Cohort, config: MiceConfig) -> Result<(Cohort, MiceModel)> {
        cohort.require_stage("imputation", &[Stage::Raw])?;
        let (mut cols, observed) = columns_of(cohort);
        let n_rows = cohort.len();
        let n_cols = cols.len();
        let names = column_names(cohort);

        let mut means = vec![0.0; n_cols];
        let mut incomplete = Vec::new();
        for j in 0..n_cols {
            let seen = observed[j].iter().filter(|&&o| o).count();
            if n_rows > 0 && seen == 0 {
                return Err(Error::Imputation(format!(
                    "column {} has no observed values",
                    names[j]
                )));
            }
            if seen < n_rows {
                incomplete.push(j);
            }
            if seen > 0 {
                means[j] = (0..n_rows)
                    .filter(|&i| observed[j][i])
                    .map(|i| cols[j][i])
                    .sum::<f64>()
                    / seen as f64;
            }
        }
        if !incomplete.is_empty() && incomplete.len() == n_cols {
            return Err(Error::Imputation("no fully observed column".into()));
        }
        for &j in &incomplete {
            for i in 0..n_rows {
                if !observed[j][i] {
                    cols[j][i] = means[j];
                }
            }
        }

        let predictors = choose_predictors(&cols, &observed, config.max_predictors);
        let mut models: Vec<Option<ColumnModel>> = vec![None; n_cols];
        let mut round_deltas = Vec::with_capacity(config.rounds);
        for _ in 0..config.rounds {
            let mut delta: f64 = 0.0;
            for &j in &incomplete {
                let rows: Vec<usize> = (0..n_rows).filter(|&i| observed[j][i]).collect();
                let model = fit_column(&cols, &predictors[j], j, &rows);
                for i in 0..n_rows {
                    if !observed[j][i] {
                        let v = model.predict(&cols, i);
                        delta = delta.max((v - cols[j][i]).abs());
                        cols[j][i] = v;
                    }
                }
                models[j] = Some(model);
            }
            round_deltas.push(delta);
        }
        let all_rows: Vec<usize> = (0..n_rows).collect();
        let columns = (0..n_cols)
            .map(|j| {
                models[j]
                    .take()
                    .unwrap_or_else(|| fit_column(&cols, &predictors[j], j, &all_rows))
            })
            .collect();

        let mut out = cohort.with_records(cohort.records.clone());
        write_back(&mut out, &cols, &observed);
        out.stage = Stage::Imputed;
        Ok((
            out,
            MiceModel {
                config,
                means,
                columns,
                round_deltas,
            },
        ))
    }

    /// Fills `cohort` with the stored means and equations; nothing is
    /// refitted, so the result depends only on this model and `cohort`.
    pub fn transform(&self, cohort: &Cohort) -> Result<Cohort> {
        cohort.require_stage("imputation", &[Stage::Raw])?;
        if self.means.len() != cohort.layout.tokens() {
            return Err(Error::Imputation(format!(
                "imputer fitted on {} columns, cohort has {}",
                self.means.len(),
                cohort.layout.tokens()
            )));
        }
        let (mut cols, observed) = columns_of(cohort);
        let n_rows = cohort.len();
        let incomplete: Vec<usize> = (0..cols.len())
            .filter(|&j| observed[j].iter().any(|&o| !o))
            .collect();
        for &j in &incomplete {
            for i in 0..n_rows {
                if !observed[j][i] {
                    cols[j][i] = self.means[j];
                }
            }
        }
        for _ in 0..self.config.rounds {
            for &j in &incomplete {
                for i in 0..n_rows {
                    if !observed[j][i] {
                        cols[j][i] = self.columns[j].predict(&cols, i);
                    }
                }
            }
        }
        let mut out = cohort.with_records(cohort.records.clone());
        write_back(&mut out, &cols, &observed);
        out.stage = Stage::Imputed;
        Ok(out)
    }
}

fn column_names(cohort: &Cohort) -> Vec<String> {
    let l = cohort.layout;
    (0..l.tokens())
        .map(|t| match l.token(t) {
            crate::layout::TokenRef::Vital { channel, hour } => format!("vit_c{channel}_h{hour}"),
            crate::layout::TokenRef::Aggregated { feature } => {
                cohort.feature_names[feature].clone()
            }
        })
        .collect()
}

fn columns_of(cohort: &Cohort) -> (Vec<Vec<f64>>, Vec<Vec<bool>>) {
    let n_cols = cohort.layout.tokens();
    let mut cols = vec![Vec::with_capacity(cohort.len()); n_cols];
    let mut observed = vec![Vec::with_capacity(cohort.len()); n_cols];
    for r in &cohort.records {
        for j in 0..n_cols {
            let v = r.cell(j);
            cols[j].push(v.unwrap_or(0.0));
            observed[j].push(v.is_some());
        }
    }
    (cols, observed)
}

fn write_back(cohort: &mut Cohort, cols: &[Vec<f64>], observed: &[Vec<bool>]) {
    for (i, r) in cohort.records.iter_mut().enumerate() {
        for j in 0..cols.len() {
            if !observed[j][i] {
                *r.cell_mut(j) = Some(cols[j][i]);
            }
        }
    }
}

/// For each column, the `k` other columns with the largest absolute
/// correlation over rows where both are observed. Ties go to the lower
/// index; constant columns are never chosen.
fn choose_predictors(cols: &[Vec<f64>], observed: &[Vec<bool>], k: usize) -> Vec<Vec<usize>> {
    let n = cols.len();
    let mut corr = vec![vec![0.0; n]; n];
    for a in 0..n {
        for b in a + 1..n {
            let c = pairwise_corr(&cols[a], &observed[a], &cols[b], &observed[b]);
            corr[a][b] = c;
            corr[b][a] = c;
        }
    }
    (0..n)
        .map(|j| {
            let mut cand: Vec<usize> = (0..n).filter(|&p| p != j && corr[j][p] > 0.0).collect();
            cand.sort_by(|&x, &y| corr[j][y].total_cmp(&corr[j][x]).then(x.cmp(&y)));
            cand.truncate(k);
            cand.sort_unstable();
            cand
        })
        .collect()
}

/// Absolute Pearson correlation; 0 when undefined.
fn pairwise_corr(x: &[f64], ox: &[bool], y: &[f64], oy: &[bool]) -> f64 {
    let rows: Vec<usize> = (0..x.len()).filter(|&i| ox[i] && oy[i]).collect();
    if rows.len() < 3 {
        return 0.0;
    }
    let n = rows.len() as f64;
    let mx = rows.iter().map(|&i| x[i]).sum::<f64>() / n;
    let my = rows.iter().map(|&i| y[i]).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &i in &rows {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 1e-300 || syy <= 1e-300 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).abs()
}

/// Least-squares fit of column `target` on `predictors` over `rows`.
fn fit_column(
    cols: &[Vec<f64>],
    predictors: &[usize],
    target: usize,
    rows: &[usize],
) -> ColumnModel {
    let p = predictors.len() + 1;
    let x = DMatrix::from_fn(rows.len(), p, |r, c| {
        if c == 0 {
            1.0
        } else {
            cols[predictors[c - 1]][rows[r]]
        }
    });
    let y = DVector::from_fn(rows.len(), |r, _| cols[target][rows[r]]);
    let beta = solve_least_squares(x, y);
    ColumnModel {
        predictors: predictors.to_vec(),
        intercept: beta[0],
        coefs: beta.iter().skip(1).copied().collect(),
    }
}

/// Normal equations by Cholesky, falling back to an SVD minimum-norm
/// solution when the design is rank deficient.
fn solve_least_squares(x: DMatrix<f64>, y: DVector<f64>) -> DVector<f64> {
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * &y;
    let scale = xtx.diagonal().amax().max(1.0);
    if let Some(chol) = xtx.clone().cholesky() {
        let beta = chol.solve(&xty);
        let cond_ok = chol.l().diagonal().iter().all(|d| d * d > 1e-10 * scale);
        if cond_ok && beta.iter().all(|b| b.is_finite()) {
            return beta;
        }
    }
    match x.clone().svd(true, true).solve(&y, 1e-10 * scale.sqrt()) {
        Ok(beta) => beta,
        Err(e) => {
            warn!("least-squares fallback failed ({e}); using the intercept-only fit");
            let mut beta = DVector::zeros(x.ncols());
            beta[0] = y.mean();
            beta
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::record::PatientRecord;
    use crate::layout::Layout;

    fn features_only(n: usize) -> Layout {
        Layout {
            channels: 0,
            hours: 0,
            features: n,
        }
    }

    fn cohort(rows: Vec<Vec<Option<f64>>>) -> Cohort {
        let l = features_only(rows[0].len());
        let records = rows
            .into_iter()
            .enumerate()
            .map(|(i, agg)| PatientRecord {
                stay_id: format!("s{i}"),
                vitals: vec![],
                aggregated: agg,
                label: (i % 2) as u8,
            })
            .collect();
        Cohort::new(l, records, "test").unwrap()
    }

    #[test]
    fn complete_cohort_unchanged() {
        let c = cohort(vec![
            vec![Some(1.0), Some(2.0)],
            vec![Some(3.0), Some(5.0)],
            vec![Some(0.0), Some(1.0)],
        ]);
        let out = mice_impute(&c, 10).unwrap();
        assert_eq!(out.records, c.records);
        assert_eq!(out.stage(), Stage::Imputed);
    }

    #[test]
    fn exact_linear_relation_recovered() {
        let rows: Vec<Vec<Option<f64>>> = (0..20)
            .map(|i| {
                let a = 0.3 * i as f64 - 1.0;
                vec![Some(a), if i == 7 { None } else { Some(2.0 * a) }]
            })
            .collect();
        let out = mice_impute(&cohort(rows), 10).unwrap();
        let r = &out.records[7];
        let a = r.aggregated[0].unwrap();
        assert!((r.aggregated[1].unwrap() - 2.0 * a).abs() < 1e-8);
    }

    #[test]
    fn fully_missing_column_named() {
        let c = cohort(vec![vec![Some(1.0), None], vec![Some(2.0), None]]);
        match mice_impute(&c, 10) {
            Err(Error::Imputation(msg)) => assert!(msg.contains("agg_1"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn requires_raw_stage() {
        let c = cohort(vec![vec![Some(1.0)], vec![Some(2.0)]]);
        let done = mice_impute(&c, 1).unwrap();
        assert!(matches!(mice_impute(&done, 1), Err(Error::State(_))));
    }
}
