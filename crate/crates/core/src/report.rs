//! Report CSV emission with stable schemas.
//!
//! All floats are written with 17 significant digits (`{:.16e}`) so that
//! re-running an experiment produces byte-identical files and readers can
//! recover the exact f64 bits.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("refusing to write an empty report to {0}")]
    Empty(String),
}

/// 17-significant-digit float formatting shared by every writer.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// A report table: a fixed header plus preformatted rows.
pub struct Table {
    pub header: &'static str,
    pub rows: Vec<String>,
}

impl Table {
    pub fn new(header: &'static str) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push_row(&mut self, fields: &[String]) {
        debug_assert!(
            fields.iter().all(|f| !f.contains(',') && !f.contains('\n')),
            "table fields must not contain delimiters: {fields:?}"
        );
        self.rows.push(fields.join(","));
    }

    /// Writes header + rows; empty tables are rejected.
    pub fn write(&self, path: &Path) -> Result<(), ReportError> {
        if self.rows.is_empty() {
            return Err(ReportError::Empty(path.display().to_string()));
        }
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{}", self.header)?;
        for row in &self.rows {
            writeln!(out, "{row}")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Reads a table back as raw string records (header checked exactly).
pub fn read_table(path: &Path, expected_header: &str) -> Result<Vec<Vec<String>>, ReportError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != expected_header {
        return Err(ReportError::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("header mismatch in {}: got '{header}'", path.display()),
        )));
    }
    Ok(lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|s| s.to_string()).collect())
        .collect())
}
