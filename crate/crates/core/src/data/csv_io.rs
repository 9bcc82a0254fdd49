use std::path::Path;

use chrono::NaiveDateTime;

use super::Dataset;
use crate::error::{Error, Result};

/// Format used when writing; reading also accepts a space separator and
/// missing seconds.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

const ACCEPTED: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    ACCEPTED
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Reads a header-first CSV whose first column is `timestamp`. Columns are
/// looked up by name in `schema` order; columns not in the schema are
/// ignored. Rows must already be in strictly increasing hourly order.
pub fn parse_csv(path: impl AsRef<Path>, schema: &[String]) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("timestamp") {
        return Err(Error::Schema(format!(
            "first column must be \"timestamp\", found {:?}",
            headers.get(0).unwrap_or("")
        )));
    }
    let mut index = Vec::with_capacity(schema.len());
    for name in schema {
        let pos = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))?;
        index.push(pos);
    }

    let mut timestamps = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); schema.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let raw = record.get(0).unwrap_or("");
        let ts = parse_timestamp(raw)
            .ok_or_else(|| Error::data(format!("row {row}: bad timestamp {raw:?}")))?;
        if let Some(prev) = timestamps.last() {
            if ts <= *prev {
                return Err(Error::data(format!(
                    "row {row}: timestamp {ts} does not follow {prev}"
                )));
            }
        }
        timestamps.push(ts);
        for (k, &pos) in index.iter().enumerate() {
            let cell = record.get(pos).unwrap_or("");
            let v: f64 = cell.parse().map_err(|_| {
                Error::data(format!("row {row}: non-numeric value {cell:?} in {:?}", schema[k]))
            })?;
            if !v.is_finite() {
                return Err(Error::data(format!(
                    "row {row}: non-finite value in {:?}",
                    schema[k]
                )));
            }
            columns[k].push(v);
        }
    }
    Dataset::new(timestamps, schema.to_vec(), columns)
}

pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(ds.variables().iter().cloned());
    w.write_record(&header)?;
    for (i, ts) in ds.timestamps().iter().enumerate() {
        let mut rec = vec![ts.format(TIMESTAMP_FORMAT).to_string()];
        rec.extend((0..ds.variables().len()).map(|k| ds.column(k)[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(f.path(), text).unwrap();
        f
    }

    fn schema(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn three_rows() {
        let f = file(
            "timestamp,WL_B4,extra,P1\n\
             2021-01-01T00:00:00,1.5,x,0\n\
             2021-01-01T01:00:00,1.6,y,0.2\n\
             2021-01-01 02:00,1.7,z,0\n",
        );
        let ds = parse_csv(f.path(), &schema(&["P1", "WL_B4"])).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.variables(), &["P1".to_string(), "WL_B4".to_string()]);
        assert_eq!(ds.column(1), &[1.5, 1.6, 1.7]);
        assert_eq!(ds.segments(), &[0..3]);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let f = file("timestamp,P1\n2021-01-01T00:00:00,1\n");
        assert!(matches!(
            parse_csv(f.path(), &schema(&["P1", "WL_B4"])),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn duplicate_timestamp_is_data_error() {
        let f = file("timestamp,a\n2021-01-01T00:00:00,1\n2021-01-01T00:00:00,2\n");
        assert!(matches!(parse_csv(f.path(), &schema(&["a"])), Err(Error::Data(_))));
    }

    #[test]
    fn non_numeric_cell_reports_row() {
        let f = file("timestamp,a\n2021-01-01T00:00:00,1\n2021-01-01T01:00:00,abc\n");
        match parse_csv(f.path(), &schema(&["a"])) {
            Err(Error::Data(msg)) => assert!(msg.contains("row 1"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn write_then_read_is_lossless() {
        let f = file("timestamp,a,b\n2021-01-01T00:00:00,0.1,-3e-7\n2021-01-01T01:00:00,2.000000001,4\n");
        let ds = parse_csv(f.path(), &schema(&["a", "b"])).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ds, out.path()).unwrap();
        let back = parse_csv(out.path(), &schema(&["a", "b"])).unwrap();
        assert_eq!(ds, back);
    }
}
