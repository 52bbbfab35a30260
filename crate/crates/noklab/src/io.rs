//! CSV matrices and JSON documents.
//!
//! Matrix files hold one sample per row. In memory samples are columns, so a
//! file with `S` rows of `d` values loads as a `d x S` matrix.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use noklab_core::Matrix;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(path, &text)
}

pub(crate) fn parse_matrix(path: &Path, text: &str) -> Result<Matrix> {
    let csv_err = |row: usize, col: usize, msg: String| Error::Csv {
        path: path.to_path_buf(),
        row,
        col,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_err(row, 1, e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let parsed: Vec<std::result::Result<f64, usize>> = record
            .iter()
            .enumerate()
            .map(|(j, cell)| cell.parse::<f64>().map_err(|_| j + 1))
            .collect();
        // a non-numeric first row is a header
        if i == 0 && parsed.iter().all(|c| c.is_err()) {
            width = Some(record.len());
            continue;
        }
        let mut values = Vec::with_capacity(record.len());
        for (j, cell) in parsed.into_iter().enumerate() {
            match cell {
                Ok(v) if v.is_finite() => values.push(v),
                Ok(_) => return Err(csv_err(row, j + 1, format!("non-finite value {:?}", &record[j]))),
                Err(col) => return Err(csv_err(row, col, format!("not a number: {:?}", &record[col - 1]))),
            }
        }
        match width {
            Some(w) if w != values.len() => {
                return Err(csv_err(
                    row,
                    values.len().min(w) + 1,
                    format!("row has {} columns, expected {w}", values.len()),
                ))
            }
            _ => width = Some(values.len()),
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(csv_err(1, 1, "no numeric rows".into()));
    }
    let d = rows[0].len();
    Ok(Matrix::from_fn(d, rows.len(), |i, s| rows[s][i]))
}

/// Writes a `d x S` matrix as `S` rows of `d` values.
pub fn save_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let rows = (0..m.ncols()).map(|s| m.column(s).iter().copied().collect::<Vec<_>>());
    write_rows(path, None, rows)
}

/// Writes each row as one CSV line, with an optional header.
pub fn write_rows<I>(path: impl AsRef<Path>, header: Option<&[String]>, rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = || -> std::io::Result<()> {
        if let Some(h) = header {
            writeln!(out, "{}", h.join(","))?;
        }
        for row in rows {
            let line: Vec<String> = row.into_iter().map(format_real).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types always serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_json_string(value)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Matrix> {
        parse_matrix(Path::new("t.csv"), text)
    }

    #[test]
    fn rows_become_columns() {
        let m = parse("1,2,3,4\n5,6,7,8\n9,10,11,12\n").unwrap();
        assert_eq!((m.nrows(), m.ncols()), (4, 3));
        assert_eq!(m[(3, 1)], 8.0);
    }

    #[test]
    fn header_is_skipped() {
        let m = parse("x0,x1\n1.5,-2\n").unwrap();
        assert_eq!(m.as_slice(), &[1.5, -2.0]);
    }

    #[test]
    fn locations_are_reported() {
        let err = parse("1,2\n3,abc\n").unwrap_err().to_string();
        assert!(err.contains("t.csv:2:2"), "{err}");
        let err = parse("1,2\n3\n").unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("expected 2"), "{err}");
        let err = parse("1,NaN\n").unwrap_err().to_string();
        assert!(err.contains(":1:2"), "{err}");
        assert!(parse("").is_err());
        assert!(parse("a,b\n").is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = Matrix::from_fn(3, 4, |i, j| (i as f64 + 0.1).powf(j as f64 + 0.3) * 1e-7 - 1.0 / 3.0);
        save_matrix(&path, &m).unwrap();
        let back = load_matrix(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(format_real(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
