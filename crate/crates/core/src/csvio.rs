//! Two-column CSV series and per-run outcome dumps.
//!
//! Headers are fixed: spectra are `frequency_Hz,signal_au`, time profiles
//! `time_ms,<quantity>`.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::montecarlo::{MemoryOutcome, PulseOutcomes};

pub const SPECTRUM_HEADER: [&str; 2] = ["frequency_Hz", "signal_au"];

/// Reads a two-column series, checking the header names.
pub fn read_series<R: Read>(reader: R, header: [&str; 2]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(Error::Config(format!(
            "expected CSV header '{}', found '{}'",
            header.join(","),
            found.join(",")
        )));
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            return Err(Error::Config(format!(
                "row {} has {} fields",
                line + 2,
                record.len()
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            let v: f64 = s
                .parse()
                .map_err(|_| Error::Config(format!("row {}: '{s}' is not a number", line + 2)))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Config(format!("row {}: non-finite value", line + 2)))
            }
        };
        xs.push(parse(&record[0])?);
        ys.push(parse(&record[1])?);
    }
    Ok((xs, ys))
}

pub fn write_series<W: Write>(writer: W, header: [&str; 2], xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("series columns differ in length"));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for (x, y) in xs.iter().zip(ys) {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_spectrum<R: Read>(reader: R) -> Result<(Vec<f64>, Vec<f64>)> {
    read_series(reader, SPECTRUM_HEADER)
}

pub fn write_spectrum<W: Write>(writer: W, freq_hz: &[f64], signal: &[f64]) -> Result<()> {
    write_series(writer, SPECTRUM_HEADER, freq_hz, signal)
}

/// Writes a table of numeric rows under the given header.
pub fn write_table<W: Write>(writer: W, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::invalid("table row width does not match header"));
        }
        w.write_record(row.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pulse_outcomes<W: Write>(writer: W, outcomes: &[PulseOutcomes]) -> Result<()> {
    let rows: Vec<Vec<f64>> = outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| vec![i as f64, o.a1, o.b1, o.a2, o.b2])
        .collect();
    write_table(writer, &["run", "a1", "b1", "a2", "b2"], &rows)
}

pub fn write_memory_outcomes<W: Write>(writer: W, outcomes: &[MemoryOutcome]) -> Result<()> {
    let rows: Vec<Vec<f64>> = outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| vec![i as f64, o.x0, o.p0, f64::from(u8::from(o.read_x)), o.readout])
        .collect();
    write_table(writer, &["run", "x0", "p0", "read_x", "readout"], &rows)
}
