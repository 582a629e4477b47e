//! Parameter grids written as `start:stop:step` (stop inclusive) or as a
//! comma-separated list.

use crate::error::{Error, Result};

/// Refuse grids larger than this.
pub const MAX_GRID_POINTS: usize = 1_000_000;

pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let spec = spec.trim();
    if spec.is_empty() {
        return Err(Error::invalid("empty grid"));
    }
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        let [start, stop, step] = parts.as_slice() else {
            return Err(Error::invalid(format!("grid '{spec}' is not start:stop:step")));
        };
        let (start, stop, step) = (number(start)?, number(stop)?, number(step)?);
        return range(start, stop, step);
    }
    let values = spec.split(',').map(number).collect::<Result<Vec<_>>>()?;
    if values.len() > MAX_GRID_POINTS {
        return Err(Error::invalid("grid has too many points"));
    }
    Ok(values)
}

fn number(s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("'{}' is not a number", s.trim())))?;
    if !v.is_finite() {
        return Err(Error::invalid(format!("grid value '{}' is not finite", s.trim())));
    }
    Ok(v)
}

/// `start, start + step, ...` up to `stop`, which is included when it lies
/// on the lattice to within a relative 1e-9 of a step.
pub fn range(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::invalid(format!("grid step must be positive, got {step}")));
    }
    if stop < start {
        return Err(Error::invalid(format!("grid stop {stop} is below start {start}")));
    }
    let span = (stop - start) / step;
    if !span.is_finite() || span + 1.0 > MAX_GRID_POINTS as f64 {
        return Err(Error::invalid("grid has too many points"));
    }
    let count = (span + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}
