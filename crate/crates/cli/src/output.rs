//! Error classification and file emission. Files are staged in memory and
//! written only once a command has fully succeeded.

use std::fs;
use std::path::{Path, PathBuf};

use qnd_core::config::OutputFormat;
use qnd_core::report::Report;
use qnd_core::Error;
use serde_json::Value;

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            message: message.into(),
        }
    }

    pub fn missing(flag: &str, key: &str) -> Self {
        Failure::config(format!(
            "missing required value: pass {flag} or set {key} in the config"
        ))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config_error() {
            Failure::config(e.to_string())
        } else {
            Failure::runtime(e.to_string())
        }
    }
}

pub struct Outputs {
    format: OutputFormat,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(format: OutputFormat) -> Self {
        Outputs {
            format,
            files: Vec::new(),
        }
    }

    pub fn json(&mut self, name: &str, report: &Report<Value>) -> Result<(), Failure> {
        if self.format == OutputFormat::Csv {
            return Ok(());
        }
        let mut buf = Vec::new();
        report.write_json(&mut buf)?;
        self.files.push((name.to_owned(), buf));
        Ok(())
    }

    /// Stages a CSV produced by `write` into a buffer.
    pub fn csv(
        &mut self,
        name: &str,
        write: impl FnOnce(&mut Vec<u8>) -> qnd_core::Result<()>,
    ) -> Result<(), Failure> {
        if self.format == OutputFormat::Json {
            return Ok(());
        }
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.files.push((name.to_owned(), buf));
        Ok(())
    }

    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>, Failure> {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", dir.display())))?;
        let mut written = Vec::new();
        for (name, bytes) in self.files {
            let path = dir.join(name);
            fs::write(&path, bytes)
                .map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))
}
