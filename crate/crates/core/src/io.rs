//! CSV ingestion and atomic file output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// A numeric table with named columns.
#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub data: Matrix<f64>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::input(format!("missing column '{name}'")))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.data.col_values(self.column_index(name)?))
    }

    /// Sub-matrix of the named columns, in the given order.
    pub fn columns(&self, names: &[String]) -> Result<Matrix<f64>> {
        let idx = names.iter().map(|n| self.column_index(n)).collect::<Result<Vec<_>>>()?;
        let rows: Vec<Vec<f64>> =
            self.data.iter_rows().map(|r| idx.iter().map(|&j| r[j]).collect()).collect();
        Matrix::from_vec(rows.len(), idx.len(), rows.concat())
    }
}

/// Reads a comma-separated file with a header row and numeric cells.
pub fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if headers.is_empty() {
        return Err(Error::input(format!("{}: no header row", path.display())));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::input(format!(
                "{}: row {} has {} fields, header has {}",
                path.display(),
                line + 2,
                rec.len(),
                headers.len()
            )));
        }
        for (col, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::input(format!(
                    "{}: row {}, column '{}': not a number: '{cell}'",
                    path.display(),
                    line + 2,
                    headers[col]
                ))
            })?;
            data.push(v);
        }
        rows += 1;
    }
    Ok(Table { data: Matrix::from_vec(rows, headers.len(), data)?, headers })
}

/// Formats a float with 17 significant digits; parses back bit-exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `contents` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    let result = (|| -> Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

/// Serializes a header plus rows of cells to CSV and writes it atomically.
pub fn write_csv_atomic(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}
