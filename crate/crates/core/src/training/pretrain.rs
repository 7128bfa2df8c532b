use attnfid_tensor::{Adam, AdamConfig, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{WindowSample, FUTURE_HOURS, PAST_HOURS};
use crate::error::{Error, Result};
use crate::models::VitalAutoencoder;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub past: usize,
    pub future: usize,
    /// Literal written over every future input position.
    pub mask_value: f64,
    /// Seeded subsample of the windows used per run, when set.
    pub max_windows: Option<usize>,
    /// Encode the windows of one record and start hour together, one row
    /// per channel, instead of one channel at a time.
    pub joint_channels: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            past: PAST_HOURS,
            future: FUTURE_HOURS,
            mask_value: 0.0,
            max_windows: None,
            joint_channels: false,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self, hours: usize) -> Result<()> {
        if self.past == 0 || self.future == 0 || self.past + self.future > hours {
            return Err(Error::Config(format!(
                "past {} + future {} must fit in {hours} hours",
                self.past, self.future
            )));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config(
                "pretraining needs a positive batch size and learning rate".into(),
            ));
        }
        Ok(())
    }
}

/// Encoder input for one window: the past values followed by the mask
/// literal at every future position.
pub fn pretrain_input(window: &WindowSample, mask_value: f64) -> Vec<f64> {
    let mut x = window.past.clone();
    x.extend(std::iter::repeat(mask_value).take(window.future.len()));
    x
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean batch loss per epoch.
    pub loss_curve: Vec<f64>,
}

struct WindowBatch {
    input: Tensor,
    target: Tensor,
    past_mask: Tensor,
    future_mask: Tensor,
    channels: Vec<usize>,
    hours: Vec<usize>,
}

fn assemble(units: &[Vec<&WindowSample>], mask_value: f64) -> Result<WindowBatch> {
    let first = units[0][0];
    let (p, f) = (first.past.len(), first.future.len());
    let len = p + f;
    let (b, c) = (units.len(), units[0].len());
    let mut input = Vec::with_capacity(b * c * len);
    let mut target = Vec::with_capacity(b * c * len);
    let mut channels = Vec::with_capacity(b * c);
    let mut hours = Vec::with_capacity(b * len);
    for unit in units {
        if unit.len() != c {
            return Err(Error::Input(
                "window groups in one batch differ in size".into(),
            ));
        }
        for w in unit {
            if w.past.len() != p || w.future.len() != f || w.start != unit[0].start {
                return Err(Error::Input("windows in one batch differ in length".into()));
            }
            input.extend(pretrain_input(w, mask_value));
            target.extend(w.past.iter().chain(&w.future));
            channels.push(w.channel);
        }
        hours.extend(unit[0].start..unit[0].start + len);
    }
    let mask = |past: bool| {
        let row: Vec<f64> = (0..len)
            .map(|i| f64::from(u8::from((i < p) == past)))
            .collect();
        Tensor::new(vec![b, c, len], row.repeat(b * c))
    };
    Ok(WindowBatch {
        input: Tensor::new(vec![b, c, len], input)?,
        target: Tensor::new(vec![b, c, len], target)?,
        past_mask: mask(true)?,
        future_mask: mask(false)?,
        channels,
        hours,
    })
}

/// Training units: single windows, or all windows sharing a record and
/// start hour ordered by channel.
fn units(windows: &[WindowSample], joint: bool) -> Vec<Vec<&WindowSample>> {
    if !joint {
        return windows.iter().map(|w| vec![w]).collect();
    }
    let mut groups: Vec<Vec<&WindowSample>> = Vec::new();
    let mut index: std::collections::HashMap<(&str, usize), usize> =
        std::collections::HashMap::new();
    for w in windows {
        let slot = *index
            .entry((w.stay_id.as_str(), w.start))
            .or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
        groups[slot].push(w);
    }
    for g in &mut groups {
        g.sort_by_key(|w| w.channel);
    }
    let full = groups.iter().map(Vec::len).max().unwrap_or(0);
    groups.retain(|g| g.len() == full);
    groups
}

/// Future-prediction plus past-reconstruction training of the encoder and
/// decoder. Both losses are mean squared errors with equal weight.
pub fn pretrain_stage1(
    model: &mut VitalAutoencoder,
    windows: &[WindowSample],
    cfg: &PretrainConfig,
) -> Result<PretrainReport> {
    if windows.is_empty() {
        return Err(Error::Contract("no windows to pretrain on".into()));
    }
    cfg.validate(model.config.layout.hours)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let all = units(windows, cfg.joint_channels);
    let per_unit = all[0].len();
    let mut pool: Vec<&Vec<&WindowSample>> = all.iter().collect();
    if let Some(cap) = cfg.max_windows {
        let cap = (cap / per_unit).max(1);
        if cap < pool.len() {
            pool = rand::seq::index::sample(&mut rng, pool.len(), cap)
                .into_iter()
                .map(|i| &all[i])
                .collect();
        }
    }
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &model.store,
    )?;
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        pool.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in pool.chunks(cfg.batch_size) {
            let chunk: Vec<Vec<&WindowSample>> = chunk.iter().map(|u| (*u).clone()).collect();
            let wb = assemble(&chunk, cfg.mask_value)?;
            let mut tape = Tape::new();
            let bound = model.store.bind(&mut tape, true);
            let x = tape.constant(wb.input);
            let target = tape.constant(wb.target);
            let recon = model.reconstruct(&mut tape, &bound, x, &wb.channels, &wb.hours)?;
            let predict = tape.mse_loss(recon, target, &wb.future_mask)?;
            let rebuild = tape.mse_loss(recon, target, &wb.past_mask)?;
            let loss = tape.add(predict, rebuild)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Training(format!(
                    "pretraining loss diverged at epoch {epoch}"
                )));
            }
            tape.backward(loss)?;
            model.store.accumulate_grads(&tape, &bound);
            adam.step(&mut model.store)?;
            total += value;
            batches += 1;
        }
        loss_curve.push(total / batches as f64);
    }
    Ok(PretrainReport { loss_curve })
}

/// Decoder output for each window, past positions followed by future
/// ones, with the future inputs masked.
pub fn predict_windows(
    model: &VitalAutoencoder,
    windows: &[WindowSample],
    mask_value: f64,
) -> Result<Vec<Vec<f64>>> {
    let refs: Vec<Vec<&WindowSample>> = windows.iter().map(|w| vec![w]).collect();
    let mut out = Vec::with_capacity(windows.len());
    for chunk in refs.chunks(256) {
        let wb = assemble(chunk, mask_value)?;
        let len = wb.input.shape()[2];
        let mut tape = Tape::new();
        let bound = model.store.bind(&mut tape, false);
        let x = tape.constant(wb.input);
        let recon = model.reconstruct(&mut tape, &bound, x, &wb.channels, &wb.hours)?;
        out.extend(tape.value(recon).data().chunks(len).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// Mean squared error of the model's future predictions over `windows`.
pub fn future_mse(
    model: &VitalAutoencoder,
    windows: &[WindowSample],
    mask_value: f64,
) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Training("no windows to evaluate".into()));
    }
    let mut total = 0.0;
    let mut count = 0.0;
    for (w, pred) in windows
        .iter()
        .zip(predict_windows(model, windows, mask_value)?)
    {
        for (v, p) in w.future.iter().zip(&pred[w.past.len()..]) {
            total += (p - v) * (p - v);
            count += 1.0;
        }
    }
    Ok(total / count)
}

/// Mean squared error of repeating the last past value over the future.
pub fn persistence_mse(windows: &[WindowSample]) -> f64 {
    let mut total = 0.0;
    let mut count = 0.0;
    for w in windows {
        let last = *w.past.last().expect("non-empty past");
        for v in &w.future {
            total += (v - last) * (v - last);
            count += 1.0;
        }
    }
    total / count
}
