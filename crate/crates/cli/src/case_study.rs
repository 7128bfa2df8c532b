//! Per-patient explanation export: the 20 most attended tokens set against
//! the cohort distribution.

use attnfid::dataset::Cohort;
use attnfid::explain::attention_importance;
use attnfid::models::MortalityModel;
use attnfid::{Error, Layout, Result, TokenRef};
use serde::{Deserialize, Serialize};

pub const TOP_TOKENS: usize = 20;
pub const HISTOGRAM_BINS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopToken {
    pub rank: usize,
    pub token: usize,
    pub name: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatedPanel {
    pub token: usize,
    pub feature: usize,
    pub name: String,
    /// Cohort counts over 20 equal bins of `[0, 1]`.
    pub histogram: Vec<u64>,
    pub patient_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VitalPanel {
    pub channel: usize,
    pub name: String,
    /// Cohort spread for each hour.
    pub hours: Vec<BoxStats>,
    pub patient_values: Vec<f64>,
    /// 1-based hours whose token is among the top 20.
    pub flagged_hours: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseStudyExport {
    pub stay_id: String,
    pub label: u8,
    pub probability: f64,
    pub top_tokens: Vec<TopToken>,
    pub aggregated: Vec<AggregatedPanel>,
    /// One panel per vital channel present in the top tokens, in order of
    /// the channel's best rank.
    pub vitals: Vec<VitalPanel>,
}

impl CaseStudyExport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<CaseStudyExport> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn box_stats(values: &[f64]) -> BoxStats {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    BoxStats {
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
    }
}

/// Counts over equal bins of `[0, 1]`; values outside are clamped and 1.0
/// falls in the last bin.
pub fn histogram(values: &[f64], bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    for v in values {
        let b = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

/// Everything a case study needs besides the model.
pub struct CaseStudyInput<'a> {
    pub layout: Layout,
    pub feature_names: &'a [String],
    pub channel_names: &'a [String],
    /// Preprocessed token vectors the distributions are drawn from.
    pub population: &'a [Vec<f64>],
    pub stay_id: &'a str,
    pub label: u8,
    pub row: &'a [f64],
}

pub fn token_name(
    layout: &Layout,
    feature_names: &[String],
    channel_names: &[String],
    token: usize,
) -> String {
    match layout.token(token) {
        TokenRef::Vital { channel, hour } => format!("{} h{hour}", channel_names[channel]),
        TokenRef::Aggregated { feature } => feature_names[feature].clone(),
    }
}

pub fn build_case_study(model: &MortalityModel, input: &CaseStudyInput) -> Result<CaseStudyExport> {
    let l = input.layout;
    if l.tokens() < TOP_TOKENS {
        return Err(Error::Size(format!(
            "a case study needs {TOP_TOKENS} tokens, layout has {}",
            l.tokens()
        )));
    }
    if input.population.is_empty() {
        return Err(Error::Input("case study needs a non-empty cohort".into()));
    }
    let attribution = attention_importance(model, Some(input.stay_id.to_string()), input.row)?;
    let probability = model.fuse_and_predict(input.row)?.probability;
    let top = attribution.top_k(TOP_TOKENS);
    let column = |t: usize| -> Vec<f64> { input.population.iter().map(|r| r[t]).collect() };

    let top_tokens = top
        .iter()
        .enumerate()
        .map(|(rank, &token)| TopToken {
            rank: rank + 1,
            token,
            name: token_name(&l, input.feature_names, input.channel_names, token),
            score: attribution.scores[token],
        })
        .collect();

    let mut aggregated = Vec::new();
    let mut channels: Vec<usize> = Vec::new();
    for &token in &top {
        match l.token(token) {
            TokenRef::Aggregated { feature } => aggregated.push(AggregatedPanel {
                token,
                feature,
                name: input.feature_names[feature].clone(),
                histogram: histogram(&column(token), HISTOGRAM_BINS),
                patient_value: input.row[token],
            }),
            TokenRef::Vital { channel, .. } => {
                if !channels.contains(&channel) {
                    channels.push(channel);
                }
            }
        }
    }
    let vitals = channels
        .into_iter()
        .map(|channel| {
            let tokens: Vec<usize> = (1..=l.hours).map(|h| l.vital_token(channel, h)).collect();
            VitalPanel {
                channel,
                name: input.channel_names[channel].clone(),
                hours: tokens.iter().map(|&t| box_stats(&column(t))).collect(),
                patient_values: tokens.iter().map(|&t| input.row[t]).collect(),
                flagged_hours: (1..=l.hours)
                    .filter(|&h| top.contains(&l.vital_token(channel, h)))
                    .collect(),
            }
        })
        .collect();

    Ok(CaseStudyExport {
        stay_id: input.stay_id.to_string(),
        label: input.label,
        probability,
        top_tokens,
        aggregated,
        vitals,
    })
}

/// Case study of `stay_id`, with distributions over the whole cohort.
pub fn export_case_study(
    model: &MortalityModel,
    cohort: &Cohort,
    stay_id: &str,
) -> Result<CaseStudyExport> {
    let index = cohort
        .find(stay_id)
        .ok_or_else(|| Error::Lookup(format!("stay {stay_id} is not in the cohort")))?;
    let population = cohort.token_matrix()?;
    build_case_study(
        model,
        &CaseStudyInput {
            layout: cohort.layout,
            feature_names: &cohort.feature_names,
            channel_names: &cohort.channel_names,
            population: &population,
            stay_id,
            label: cohort.records[index].label,
            row: &population[index],
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_of_one_to_five() {
        let b = box_stats(&[5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!(
            (b.min, b.q1, b.median, b.q3, b.max),
            (1.0, 2.0, 3.0, 4.0, 5.0)
        );
        assert_eq!(quantile(&[0.0, 1.0], 0.25), 0.25);
    }

    #[test]
    fn histogram_edges() {
        let h = histogram(&[0.0, 0.049, 0.05, 1.0, 1.3, -0.2], 20);
        assert_eq!(h[0], 3);
        assert_eq!(h[1], 1);
        assert_eq!(h[19], 2);
        assert_eq!(h.iter().sum::<u64>(), 6);
    }
}
