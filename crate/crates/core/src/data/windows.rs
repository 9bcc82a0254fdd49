use chrono::{NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use super::{Dataset, NormStats, TimeFeature};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One forecasting sample anchored at the last observed hour `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesWindow {
    /// Timestamp of `u`.
    pub origin: NaiveDateTime,
    /// Row of `u` in the source dataset.
    pub origin_row: usize,
    /// `B x p` normalised history, row `t` is hour `u - B + 1 + t`.
    pub x: Tensor,
    /// Calendar features for the `B` history hours followed by the `tau`
    /// forecast hours.
    pub times: Vec<TimeFeature>,
    /// Normalised target at `u + 1 ..= u + tau`, when known.
    pub y: Option<Vec<f64>>,
}

impl SeriesWindow {
    pub fn history(&self) -> usize {
        self.x.rows()
    }

    pub fn horizon(&self) -> usize {
        self.times.len() - self.x.rows()
    }

    /// Timestamp of forecast step `k` (1-based).
    pub fn forecast_time(&self, k: usize) -> NaiveDateTime {
        self.origin + TimeDelta::hours(k as i64)
    }

    /// Every hour the window touches, history and future.
    pub fn span(&self) -> (NaiveDateTime, NaiveDateTime) {
        let b = self.history() as i64;
        (
            self.origin - TimeDelta::hours(b - 1),
            self.origin + TimeDelta::hours(self.horizon() as i64),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSet {
    pub windows: Vec<SeriesWindow>,
    pub variables: Vec<String>,
    pub target_index: usize,
    pub stats: NormStats,
    pub history: usize,
    pub horizon: usize,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// Target values of a window in original units.
    pub fn target_raw(&self, w: &SeriesWindow) -> Option<Vec<f64>> {
        w.y.as_ref().map(|y| {
            y.iter()
                .map(|v| self.stats.denormalize(self.target_index, *v))
                .collect()
        })
    }

    /// Last observed target value of a window in original units.
    pub fn last_observed_raw(&self, w: &SeriesWindow) -> f64 {
        let b = w.history();
        self.stats
            .denormalize(self.target_index, w.x.get(b - 1, self.target_index))
    }

    /// History of the target in original units, oldest first.
    pub fn target_history_raw(&self, w: &SeriesWindow) -> Vec<f64> {
        (0..w.history())
            .map(|t| self.stats.denormalize(self.target_index, w.x.get(t, self.target_index)))
            .collect()
    }
}

/// Emits one window per admissible anchor `u` inside every segment: the
/// `B` rows ending at `u` and the `tau` rows after it must all lie in the same
/// segment. Values are normalised with the dataset statistics, or left raw
/// when none are attached.
pub fn make_windows(
    ds: &Dataset,
    target: &str,
    history: usize,
    horizon: usize,
    stride: usize,
) -> Result<WindowSet> {
    if history == 0 || horizon == 0 || stride == 0 {
        return Err(Error::config("history, horizon and stride must be positive"));
    }
    let target_index = ds
        .variable_index(target)
        .ok_or_else(|| Error::Schema(format!("target {target:?} is not a dataset column")))?;
    let stats = ds
        .stats()
        .cloned()
        .unwrap_or_else(|| NormStats::identity(ds.variables()));
    let p = ds.variables().len();
    let span = history + horizon;
    let mut windows = Vec::new();
    for seg in ds.segments() {
        if seg.len() < span {
            continue;
        }
        let mut start = seg.start;
        while start + span <= seg.end {
            let u = start + history - 1;
            let x = Tensor::from_fn(history, p, |t, k| stats.normalize(k, ds.column(k)[start + t]));
            let times = (start..start + span)
                .map(|r| TimeFeature::from_timestamp(&ds.timestamps()[r]))
                .collect();
            let y = (u + 1..=u + horizon)
                .map(|r| stats.normalize(target_index, ds.column(target_index)[r]))
                .collect();
            windows.push(SeriesWindow {
                origin: ds.timestamps()[u],
                origin_row: u,
                x,
                times,
                y: Some(y),
            });
            start += stride;
        }
    }
    if windows.is_empty() {
        return Err(Error::data(format!(
            "cannot form a window: no segment holds {span} consecutive hours (history {history} + horizon {horizon})"
        )));
    }
    Ok(WindowSet {
        windows,
        variables: ds.variables().to_vec(),
        target_index,
        stats,
        history,
        horizon,
    })
}
