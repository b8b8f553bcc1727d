//! CSV and JSON file helpers. Every write goes through a temporary file in
//! the destination directory followed by a rename.

use std::io::Write;
use std::path::Path;

use crate::data::DataMatrix;
use crate::error::{Error, Result};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Numbers in output files: 17 significant digits, locale independent.
pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

/// Reads a numeric CSV with a header row. Returns the header and the rows;
/// an empty file yields no header and no rows.
pub fn read_numeric_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: shown.clone(),
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: shown.clone(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(Error::Parse {
                path: shown,
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let mut row = Vec::with_capacity(record.len());
        for (c, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: shown.clone(),
                line,
                message: format!("column {}: cannot parse {field:?} as a number", c + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: shown.clone(),
                    line,
                    message: format!("column {}: non-finite value", c + 1),
                });
            }
            row.push(v);
        }
        rows.push(row);
    }
    Ok((header, rows))
}

/// Reads an input matrix; `None` when the file holds no data rows.
pub fn read_matrix(path: &Path) -> Result<Option<DataMatrix>> {
    let (_, rows) = read_numeric_csv(path)?;
    if rows.is_empty() {
        return Ok(None);
    }
    DataMatrix::from_rows(&rows).map(Some)
}

/// Reads a single-column target file.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let (header, rows) = read_numeric_csv(path)?;
    if header.len() > 1 {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("expected a single column, found {}", header.len()),
        });
    }
    Ok(rows.into_iter().map(|r| r[0]).collect())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

/// Writes rows of pre-formatted fields as CSV.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let shown = path.display().to_string();
    let to_err = |e: csv::Error| Error::Parse {
        path: shown.clone(),
        line: 0,
        message: e.to_string(),
    };
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(r).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse {
        path: shown.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    write_atomic(path, &bytes)
}
