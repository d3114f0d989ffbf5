//! CSV and JSON emission. Floats are written with 17 significant digits so
//! every value parses back to the same double.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use csv::{Terminator, Writer, WriterBuilder};
use serde::Serialize;

use crate::error::{CliError, Result};

pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn opt_float(x: Option<f64>) -> String {
    x.map(float).unwrap_or_default()
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub struct CsvOut {
    path: PathBuf,
    writer: Writer<File>,
}

impl CsvOut {
    pub fn create(path: PathBuf, header: &[&str]) -> Result<Self> {
        let writer = WriterBuilder::new()
            .terminator(Terminator::Any(b'\n'))
            .from_path(&path)
            .map_err(|source| CliError::Csv {
                path: path.clone(),
                source,
            })?;
        let mut out = Self { path, writer };
        out.row(header)?;
        Ok(out)
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer
            .write_record(fields)
            .map_err(|source| CliError::Csv {
                path: self.path.clone(),
                source,
            })
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.writer
            .flush()
            .map_err(|e| CliError::io(&self.path, e))?;
        Ok(self.path)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Config(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}
