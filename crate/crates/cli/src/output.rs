use std::io::Write;
use std::path::Path;

use crate::args::Format;

/// A command result in every output format.
pub struct Report {
    pub csv: String,
    pub json: serde_json::Value,
    pub table: String,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or values; exit 2.
    Usage(String),
    /// Failure inside the estimation pipeline; exit 1.
    Core(qrshrink::Error),
    /// Output could not be written; exit 1.
    Io(String),
}

impl From<qrshrink::Error> for CliError {
    fn from(e: qrshrink::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// `error[<category>]: <detail>` on one line.
    pub fn line(&self) -> String {
        let (cat, detail) = match self {
            CliError::Usage(m) => ("usage", m.clone()),
            CliError::Core(e) => (e.category(), e.to_string()),
            CliError::Io(m) => ("io", m.clone()),
        };
        format!("error[{cat}]: {}", detail.replace('\n', " "))
    }
}

pub fn emit(report: &Report, format: Format, out: Option<&Path>) -> Result<(), CliError> {
    let body = match format {
        Format::Csv => report.csv.clone(),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&report.json).map_err(|e| CliError::Io(e.to_string()))?;
            s.push('\n');
            s
        }
        Format::Table => report.table.clone(),
    };
    match out {
        Some(p) => write_atomic(p, body.as_bytes()),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(body.as_bytes()).and_then(|_| so.flush()).map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}
