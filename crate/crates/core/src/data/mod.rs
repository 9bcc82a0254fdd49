//! Hourly multivariate series: loading, gap repair, normalisation, splitting,
//! windowing and a synthetic generator with a planted cause structure.

mod csv_io;
mod split;
pub mod synth;
mod windows;

use std::ops::Range;

use chrono::{Datelike, NaiveDateTime, TimeDelta, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{parse_csv, write_csv, TIMESTAMP_FORMAT};
pub use split::{split, split_by_year, SplitSpec};
pub use synth::{synth_generate, SpikeEvent, SynthSpec};
pub use windows::{make_windows, SeriesWindow, WindowSet};

/// Calendar position of one hourly step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeFeature {
    /// 1..=12
    pub month: u32,
    /// 1..=31
    pub day: u32,
    /// 0..=23
    pub hour: u32,
}

impl TimeFeature {
    pub fn new(month: u32, day: u32, hour: u32) -> Result<Self> {
        let t = Self { month, day, hour };
        t.validate()?;
        Ok(t)
    }

    pub fn from_timestamp(ts: &NaiveDateTime) -> Self {
        Self {
            month: ts.month(),
            day: ts.day(),
            hour: ts.hour(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=12).contains(&self.month) || !(1..=31).contains(&self.day) || self.hour > 23 {
            return Err(Error::Input(format!(
                "time feature out of range: month {} day {} hour {}",
                self.month, self.day, self.hour
            )));
        }
        Ok(())
    }
}

/// Per-variable mean and standard deviation fitted on a training span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub variables: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Population statistics of every column. A constant column gets std 1
    /// so that normalisation stays finite.
    pub fn fit(ds: &Dataset) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::data("cannot fit normalisation on an empty dataset"));
        }
        let n = ds.len() as f64;
        let mut mean = Vec::with_capacity(ds.variables.len());
        let mut std = Vec::with_capacity(ds.variables.len());
        for col in &ds.columns {
            let m = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let s = var.sqrt();
            mean.push(m);
            std.push(if s > 0.0 && s.is_finite() { s } else { 1.0 });
        }
        Ok(Self {
            variables: ds.variables.clone(),
            mean,
            std,
        })
    }

    pub fn identity(variables: &[String]) -> Self {
        Self {
            variables: variables.to_vec(),
            mean: vec![0.0; variables.len()],
            std: vec![1.0; variables.len()],
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    #[inline]
    pub fn normalize(&self, var: usize, value: f64) -> f64 {
        (value - self.mean[var]) / self.std[var]
    }

    #[inline]
    pub fn denormalize(&self, var: usize, value: f64) -> f64 {
        value * self.std[var] + self.mean[var]
    }
}

/// Aligned hourly columns. Rows are strictly increasing in time; `segments`
/// lists the maximal runs of consecutive hours, and no window is ever cut
/// across two segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    timestamps: Vec<NaiveDateTime>,
    variables: Vec<String>,
    columns: Vec<Vec<f64>>,
    segments: Vec<Range<usize>>,
    stats: Option<NormStats>,
}

fn hour() -> TimeDelta {
    TimeDelta::hours(1)
}

impl Dataset {
    /// Validates ordering and alignment; `columns[k]` holds `variables[k]`.
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        variables: Vec<String>,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if variables.len() != columns.len() {
            return Err(Error::data(format!(
                "{} variable names for {} columns",
                variables.len(),
                columns.len()
            )));
        }
        if let Some((k, _)) = columns
            .iter()
            .enumerate()
            .find(|(_, c)| c.len() != timestamps.len())
        {
            return Err(Error::data(format!(
                "column {:?} has {} values for {} timestamps",
                variables[k],
                columns[k].len(),
                timestamps.len()
            )));
        }
        for (i, w) in timestamps.windows(2).enumerate() {
            let step = w[1] - w[0];
            if step <= TimeDelta::zero() {
                return Err(Error::data(format!(
                    "timestamps not strictly increasing at row {}: {} then {}",
                    i + 1,
                    w[0],
                    w[1]
                )));
            }
            if step.num_seconds() % 3600 != 0 {
                return Err(Error::data(format!(
                    "row {} is not on the hourly grid ({} after {})",
                    i + 1,
                    w[1],
                    w[0]
                )));
            }
        }
        let segments = contiguous_runs(&timestamps);
        Ok(Self {
            timestamps,
            variables,
            columns,
            segments,
            stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.columns[k]
    }

    pub fn column_by_name(&self, name: &str) -> Result<&[f64]> {
        let k = self
            .variable_index(name)
            .ok_or_else(|| Error::Schema(format!("no column {name:?}")))?;
        Ok(&self.columns[k])
    }

    pub fn segments(&self) -> &[Range<usize>] {
        &self.segments
    }

    pub fn stats(&self) -> Option<&NormStats> {
        self.stats.as_ref()
    }

    pub fn with_stats(mut self, stats: NormStats) -> Result<Self> {
        if stats.variables != self.variables {
            return Err(Error::Schema(
                "normalisation statistics cover different variables".into(),
            ));
        }
        self.stats = Some(stats);
        Ok(self)
    }

    /// The named columns in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<Dataset> {
        let mut columns = Vec::with_capacity(names.len());
        for name in names {
            columns.push(self.column_by_name(name)?.to_vec());
        }
        let stats = match &self.stats {
            Some(s) => {
                let idx: Vec<usize> = names.iter().map(|n| s.index_of(n).unwrap()).collect();
                Some(NormStats {
                    variables: names.to_vec(),
                    mean: idx.iter().map(|&i| s.mean[i]).collect(),
                    std: idx.iter().map(|&i| s.std[i]).collect(),
                })
            }
            None => None,
        };
        Ok(Dataset {
            timestamps: self.timestamps.clone(),
            variables: names.to_vec(),
            columns,
            segments: self.segments.clone(),
            stats,
        })
    }

    /// Rows whose index satisfies `keep`, preserving order; segments are
    /// recomputed and never join rows that were not adjacent here.
    pub fn select(&self, keep: impl Fn(usize, &NaiveDateTime) -> bool) -> Dataset {
        let rows: Vec<usize> = (0..self.len())
            .filter(|&i| keep(i, &self.timestamps[i]))
            .collect();
        self.take_rows(&rows)
    }

    fn take_rows(&self, rows: &[usize]) -> Dataset {
        let timestamps: Vec<NaiveDateTime> = rows.iter().map(|&i| self.timestamps[i]).collect();
        let columns = self
            .columns
            .iter()
            .map(|c| rows.iter().map(|&i| c[i]).collect())
            .collect();
        // A run must be consecutive both in time and in the parent's segments.
        let mut segments = Vec::new();
        let mut start = 0;
        for k in 1..=rows.len() {
            let breaks = k == rows.len()
                || timestamps[k] - timestamps[k - 1] != hour()
                || self.segment_of(rows[k]) != self.segment_of(rows[k - 1]);
            if breaks {
                if k > start {
                    segments.push(start..k);
                }
                start = k;
            }
        }
        Dataset {
            timestamps,
            variables: self.variables.clone(),
            columns,
            segments,
            stats: self.stats.clone(),
        }
    }

    fn segment_of(&self, row: usize) -> usize {
        self.segments
            .partition_point(|s| s.end <= row)
    }

    /// Fills holes of at most `max_gap` missing hours by linear
    /// interpolation between the bracketing rows. Longer holes stay open and
    /// separate segments.
    pub fn repair_gaps(&self, max_gap: usize) -> Dataset {
        let mut timestamps = Vec::with_capacity(self.len());
        let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(self.len()); self.columns.len()];
        for i in 0..self.len() {
            if i > 0 {
                let missing = ((self.timestamps[i] - self.timestamps[i - 1]).num_hours() - 1) as usize;
                if missing > 0 && missing <= max_gap {
                    for h in 1..=missing {
                        let frac = h as f64 / (missing + 1) as f64;
                        timestamps.push(self.timestamps[i - 1] + TimeDelta::hours(h as i64));
                        for (out, col) in columns.iter_mut().zip(&self.columns) {
                            out.push(col[i - 1] + frac * (col[i] - col[i - 1]));
                        }
                    }
                }
            }
            timestamps.push(self.timestamps[i]);
            for (out, col) in columns.iter_mut().zip(&self.columns) {
                out.push(col[i]);
            }
        }
        let segments = contiguous_runs(&timestamps);
        Dataset {
            timestamps,
            variables: self.variables.clone(),
            columns,
            segments,
            stats: self.stats.clone(),
        }
    }

    /// Value of variable `k` at `row` in normalised units (raw when no
    /// statistics are attached).
    pub fn normalized(&self, k: usize, row: usize) -> f64 {
        let v = self.columns[k][row];
        match &self.stats {
            Some(s) => s.normalize(k, v),
            None => v,
        }
    }
}

fn contiguous_runs(timestamps: &[NaiveDateTime]) -> Vec<Range<usize>> {
    let mut segments = Vec::new();
    let mut start = 0;
    for k in 1..=timestamps.len() {
        if k == timestamps.len() || timestamps[k] - timestamps[k - 1] != hour() {
            if k > start {
                segments.push(start..k);
            }
            start = k;
        }
    }
    segments
}

/// Free-function form of [`Dataset::repair_gaps`].
pub fn repair_gaps(ds: &Dataset, max_gap: usize) -> Dataset {
    ds.repair_gaps(max_gap)
}
