use serde::{Deserialize, Serialize};

use crate::dataset::record::{Cohort, Stage};
use crate::error::{Error, Result};

pub const PAST_HOURS: usize = 12;
pub const FUTURE_HOURS: usize = 8;

/// One channel's slice of a stay: `past` covers hours `start..start+past-1`,
/// `future` the hours right after.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSample {
    pub stay_id: String,
    pub channel: usize,
    /// 1-based first hour of the past segment.
    pub start: usize,
    pub past: Vec<f64>,
    pub future: Vec<f64>,
}

/// Twelve-hour past, eight-hour future windows at every start hour that
/// fits (1..=5 on a 24-hour grid), for every record and channel.
pub fn make_windows(cohort: &Cohort) -> Result<Vec<WindowSample>> {
    make_windows_with(cohort, PAST_HOURS, FUTURE_HOURS)
}

pub fn make_windows_with(cohort: &Cohort, past: usize, future: usize) -> Result<Vec<WindowSample>> {
    cohort.require_stage("windowing", &[Stage::Normalized])?;
    let l = cohort.layout;
    if past == 0 || future == 0 || past + future > l.hours {
        return Err(Error::Config(format!(
            "windows of {past} + {future} hours do not fit a {}-hour grid",
            l.hours
        )));
    }
    let starts = l.hours - past - future + 1;
    let mut out = Vec::with_capacity(cohort.len() * l.channels * starts);
    for r in &cohort.records {
        for channel in 0..l.channels {
            let series: Vec<f64> = (1..=l.hours)
                .map(|h| {
                    r.vital(&l, channel, h).ok_or_else(|| {
                        Error::Input(format!("stay {} has missing vitals", r.stay_id))
                    })
                })
                .collect::<Result<_>>()?;
            for start in 1..=starts {
                let s = start - 1;
                out.push(WindowSample {
                    stay_id: r.stay_id.clone(),
                    channel,
                    start,
                    past: series[s..s + past].to_vec(),
                    future: series[s + past..s + past + future].to_vec(),
                });
            }
        }
    }
    Ok(out)
}
