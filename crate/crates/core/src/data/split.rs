use std::collections::BTreeSet;

use chrono::{Datelike, NaiveDateTime};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// How a dataset is cut into train, validation and test parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SplitSpec {
    /// `[start, train_end)`, `[train_end, validation_end)`, `[validation_end, end]`.
    Chronological {
        train_end: NaiveDateTime,
        validation_end: NaiveDateTime,
    },
    /// Same as `Chronological` with boundaries at fractions of the row count.
    ChronologicalFraction { train: f64, validation: f64 },
    /// May and June train, July and August test, for every year present. The
    /// last `validation_fraction` of each year's May-June rows is held out
    /// for validation.
    MonthlyShift { validation_fraction: f64 },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::ChronologicalFraction {
            train: 0.7,
            validation: 0.15,
        }
    }
}

impl SplitSpec {
    pub fn monthly_shift() -> Self {
        SplitSpec::MonthlyShift {
            validation_fraction: 0.1,
        }
    }
}

fn non_empty(name: &str, ds: &Dataset) -> Result<()> {
    if ds.is_empty() {
        Err(Error::config(format!("{name} split is empty")))
    } else {
        Ok(())
    }
}

/// Returns `(train, validation, test)`.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    if ds.is_empty() {
        return Err(Error::config("cannot split an empty dataset"));
    }
    let first = ds.timestamps()[0];
    let last = *ds.timestamps().last().unwrap();
    let (train, val, test) = match *spec {
        SplitSpec::Chronological {
            train_end,
            validation_end,
        } => {
            if train_end <= first || validation_end > last || validation_end <= train_end {
                return Err(Error::config(format!(
                    "boundaries {train_end} / {validation_end} must satisfy {first} < train_end < validation_end <= {last}"
                )));
            }
            (
                ds.select(|_, t| *t < train_end),
                ds.select(|_, t| train_end <= *t && *t < validation_end),
                ds.select(|_, t| validation_end <= *t),
            )
        }
        SplitSpec::ChronologicalFraction { train, validation } => {
            if !(train > 0.0 && validation >= 0.0 && train + validation < 1.0) {
                return Err(Error::config(format!(
                    "fractions train {train} validation {validation} must be positive and sum below 1"
                )));
            }
            let n = ds.len() as f64;
            let a = (n * train).round() as usize;
            let b = (n * (train + validation)).round() as usize;
            (
                ds.select(|i, _| i < a),
                ds.select(|i, _| a <= i && i < b),
                ds.select(|i, _| b <= i),
            )
        }
        SplitSpec::MonthlyShift {
            validation_fraction,
        } => {
            if !(validation_fraction > 0.0 && validation_fraction < 1.0) {
                return Err(Error::config(format!(
                    "validation fraction {validation_fraction} must lie in (0, 1)"
                )));
            }
            // first held-out row index per year
            let mut cut = std::collections::BTreeMap::new();
            for year in years(ds) {
                let rows: Vec<usize> = (0..ds.len())
                    .filter(|&i| {
                        let t = ds.timestamps()[i];
                        t.year() == year && matches!(t.month(), 5 | 6)
                    })
                    .collect();
                if rows.is_empty() {
                    continue;
                }
                let keep = ((rows.len() as f64) * (1.0 - validation_fraction)).round() as usize;
                cut.insert(year, rows.get(keep).copied().unwrap_or(usize::MAX));
            }
            let is_early =
                |t: &NaiveDateTime| matches!(t.month(), 5 | 6);
            (
                ds.select(|i, t| is_early(t) && i < cut[&t.year()]),
                ds.select(|i, t| is_early(t) && i >= cut[&t.year()]),
                ds.select(|_, t| matches!(t.month(), 7 | 8)),
            )
        }
    };
    non_empty("train", &train)?;
    non_empty("validation", &val)?;
    non_empty("test", &test)?;
    Ok((train, val, test))
}

fn years(ds: &Dataset) -> BTreeSet<i32> {
    ds.timestamps().iter().map(|t| t.year()).collect()
}

/// The dataset cut into calendar years, oldest first.
pub fn split_by_year(ds: &Dataset) -> Vec<(i32, Dataset)> {
    years(ds)
        .into_iter()
        .map(|y| (y, ds.select(|_, t| t.year() == y)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{NaiveDate, TimeDelta};

    fn span(from: NaiveDateTime, to: NaiveDateTime) -> Dataset {
        let hours = (to - from).num_hours() as usize;
        let stamps: Vec<_> = (0..hours).map(|h| from + TimeDelta::hours(h as i64)).collect();
        let col = (0..hours).map(|h| h as f64).collect();
        Dataset::new(stamps, vec!["a".into()], vec![col]).unwrap()
    }

    fn at(y: i32, m: u32, d: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(y, m, d).unwrap().and_hms_opt(0, 0, 0).unwrap()
    }

    #[test]
    fn chronological_test_year() {
        let ds = span(at(2016, 1, 1), at(2022, 1, 1));
        let spec = SplitSpec::Chronological {
            train_end: at(2020, 1, 1),
            validation_end: at(2021, 1, 1),
        };
        let (train, val, test) = split(&ds, &spec).unwrap();
        assert_eq!(test.len(), 365 * 24);
        assert_eq!(test.timestamps()[0], at(2021, 1, 1));
        assert_eq!(val.len(), 366 * 24);
        assert_eq!(train.len() + val.len() + test.len(), ds.len());
        assert!(train.timestamps().last().unwrap() < &val.timestamps()[0]);
    }

    #[test]
    fn monthly_shift_single_year() {
        let ds = span(at(2021, 1, 1), at(2022, 1, 1));
        let (train, val, test) = split(&ds, &SplitSpec::monthly_shift()).unwrap();
        assert_eq!(train.len() + val.len(), 61 * 24);
        assert_eq!(test.len(), 62 * 24);
        assert!(train.timestamps().last().unwrap() < &val.timestamps()[0]);
        assert!(val.timestamps().iter().all(|t| t.month() == 6));
    }

    #[test]
    fn monthly_shift_per_year_does_not_join_years() {
        let ds = span(at(2020, 5, 1), at(2021, 9, 1));
        let (train, _, test) = split(&ds, &SplitSpec::monthly_shift()).unwrap();
        assert_eq!(train.segments().len(), 2);
        assert_eq!(test.segments().len(), 2);
        assert_eq!(split_by_year(&ds).len(), 2);
    }

    #[test]
    fn out_of_range_boundaries() {
        let ds = span(at(2021, 1, 1), at(2021, 2, 1));
        let spec = SplitSpec::Chronological {
            train_end: at(2021, 1, 10),
            validation_end: at(2021, 3, 1),
        };
        assert!(matches!(split(&ds, &spec), Err(Error::Config(_))));
        // no summer months at all
        assert!(matches!(split(&ds, &SplitSpec::monthly_shift()), Err(Error::Config(_))));
    }

    #[test]
    fn spec_json_shape() {
        let s: SplitSpec = serde_json::from_str(r#"{"mode":"monthly-shift","validation_fraction":0.2}"#).unwrap();
        assert_eq!(s, SplitSpec::MonthlyShift { validation_fraction: 0.2 });
        let back: SplitSpec = serde_json::from_str(&serde_json::to_string(&SplitSpec::default()).unwrap()).unwrap();
        assert_eq!(back, SplitSpec::default());
    }
}
