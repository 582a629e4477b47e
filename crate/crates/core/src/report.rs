//! Versioned JSON envelope shared by every command report.

use std::io::Write;

use serde::Serialize;

use crate::error::Result;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// JSON Schema of [`Report`], also shipped as `schema/report.schema.json`.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

#[derive(Debug, Clone, Serialize)]
pub struct Report<T: Serialize> {
    pub schema_version: u32,
    pub tool: &'static str,
    pub tool_version: &'static str,
    pub command: String,
    pub seed: Option<u64>,
    pub warnings: Vec<String>,
    pub result: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(command: &str, seed: Option<u64>, result: T) -> Self {
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            tool: "qnd",
            tool_version: env!("CARGO_PKG_VERSION"),
            command: command.to_owned(),
            seed,
            warnings: Vec::new(),
            result,
        }
    }

    pub fn with_warnings(mut self, warnings: Vec<String>) -> Self {
        self.warnings = warnings;
        self
    }

    pub fn write_json<W: Write>(&self, mut writer: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut writer, self)?;
        writer.write_all(b"\n")?;
        Ok(())
    }
}
