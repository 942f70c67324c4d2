//! CSV and JSON artifact writers.
//!
//! Numbers are written with 17 significant digits so every double survives
//! a round trip through the file. CSV fields never need quoting here (plain
//! numbers and identifiers), so rows are comma-joined with a trailing
//! newline per record and a header row up front.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// Lossless decimal rendering of a double.
pub fn number(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a header plus rows as CSV. Every row must match the header width.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::Data(format!(
                "csv row width {} does not match header width {}",
                row.len(),
                header.len()
            )));
        }
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes a serializable value as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Structured one-line error record for stderr.
pub fn error_record(err: &Error) -> String {
    serde_json::json!({
        "error": {
            "kind": err.kind(),
            "message": err.to_string(),
        }
    })
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_round_trips_doubles() {
        for &x in &[
            0.0,
            1.0,
            -1.5,
            std::f64::consts::PI,
            1.0 / 3.0,
            6.02e23,
            -2.2250738585072014e-308,
        ] {
            let s = number(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }

    #[test]
    fn csv_rejects_ragged_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let err = write_csv(&path, &["a", "b"], &[vec!["1".into()]]).unwrap_err();
        assert!(matches!(err, Error::Data(_)));

        write_csv(&path, &["node", "value"], &[vec![number(0.5), number(1.0)]]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("node,value\n"));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn error_record_is_json_with_kind() {
        let rec = error_record(&Error::Config("bad".into()));
        let v: serde_json::Value = serde_json::from_str(&rec).unwrap();
        assert_eq!(v["error"]["kind"], "config");
        assert!(v["error"]["message"].as_str().unwrap().contains("bad"));
    }
}
