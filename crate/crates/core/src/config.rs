//! TOML run configuration. One optional section per subsystem; physical
//! keys carry their unit in the name. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoherence::{LinewidthModel, MotionGeometry};
use crate::error::{Error, Result};
use crate::interface::PhysicalParams;
use crate::spectroscopy::QzFormula;
use crate::stark::StarkConfig;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

const REFERENCE_PARAMS: &str = include_str!("../data/reference_params.toml");

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub output: Option<OutputSection>,
    #[serde(default)]
    pub calibration: Option<PhysicalParams>,
    #[serde(default)]
    pub motion: Option<MotionSection>,
    #[serde(default)]
    pub entanglement: Option<EntanglementSection>,
    #[serde(default)]
    pub memory: Option<MemorySection>,
    #[serde(default)]
    pub montecarlo: Option<MonteCarloSection>,
    #[serde(default)]
    pub linewidth: Option<LinewidthSection>,
    #[serde(default)]
    pub mors: Option<MorsSection>,
    #[serde(default)]
    pub stark: Option<StarkConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSection {
    pub beam_area_cm2: f64,
    pub cell_area_cm2: f64,
    pub cell_length_cm: f64,
    pub rms_speed_cm_per_ms: f64,
    pub duration_ms: f64,
    /// Multiplier on σ² (1 for the simple estimate).
    #[serde(default = "one")]
    pub sigma_sq_correction: f64,
}

fn one() -> f64 {
    1.0
}

impl MotionSection {
    pub fn geometry(&self) -> MotionGeometry {
        MotionGeometry {
            beam_area_cm2: self.beam_area_cm2,
            cell_area_cm2: self.cell_area_cm2,
            cell_length_cm: self.cell_length_cm,
            rms_speed: self.rms_speed_cm_per_ms,
            duration_ms: self.duration_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntanglementSection {
    pub kappa_sq: f64,
    pub beta: f64,
    #[serde(default)]
    pub feedback_gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorySection {
    pub kappa: f64,
    pub feedback_gain: f64,
    pub beta: f64,
    pub zeta: f64,
    #[serde(default = "default_n0")]
    pub n0: Vec<f64>,
    #[serde(default = "one")]
    pub readout_kappa: f64,
}

fn default_n0() -> Vec<f64> {
    vec![2.0, 4.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub runs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinewidthSection {
    #[serde(rename = "a_Hz")]
    pub a: f64,
    #[serde(rename = "b_Hz_per_density")]
    pub b: f64,
    #[serde(rename = "c_Hz_per_mW")]
    pub c: f64,
    #[serde(rename = "d_Hz_per_density_mW", default)]
    pub d: f64,
    pub density: f64,
    #[serde(rename = "power_mW")]
    pub power_mw: f64,
}

impl LinewidthSection {
    pub fn model(&self) -> LinewidthModel {
        LinewidthModel {
            a: self.a,
            b: self.b,
            c: self.c,
            d: self.d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorsSection {
    #[serde(rename = "larmor_kHz")]
    pub larmor_khz: f64,
    #[serde(rename = "linewidth_Hz")]
    pub linewidth_hz: f64,
    /// `2F+1` populations from `m = -F`; fully pumped when absent.
    #[serde(default)]
    pub populations: Option<Vec<f64>>,
    #[serde(default)]
    pub qz_formula: QzFormula,
    #[serde(rename = "scan_span_Hz")]
    pub scan_span_hz: f64,
    #[serde(rename = "scan_step_Hz")]
    pub scan_step_hz: f64,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported config schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::from_toml_str(&text)
    }

    /// Parameters of the reference experiment shipped with the crate.
    pub fn reference() -> Self {
        RunConfig::from_toml_str(REFERENCE_PARAMS).expect("bundled parameter file is valid")
    }

    /// Range checks that do not need the atomic constants.
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = &self.calibration {
            c.validate().map_err(as_config)?;
        }
        if let Some(m) = &self.motion {
            m.geometry().validate().map_err(as_config)?;
            if !(m.sigma_sq_correction > 0.0) {
                return Err(Error::Config("sigma_sq_correction must be positive".into()));
            }
        }
        if let Some(e) = &self.entanglement {
            if !(e.kappa_sq >= 0.0 && e.kappa_sq.is_finite()) {
                return Err(Error::Config("entanglement.kappa_sq must be >= 0".into()));
            }
            unit("entanglement.beta", e.beta)?;
        }
        if let Some(m) = &self.memory {
            unit("memory.beta", m.beta)?;
            unit("memory.zeta", m.zeta)?;
            if m.n0.iter().any(|n| !(*n >= 0.0)) {
                return Err(Error::Config("memory.n0 values must be >= 0".into()));
            }
        }
        if let Some(m) = &self.montecarlo {
            if m.runs < 2 {
                return Err(Error::Config("montecarlo.runs must be at least 2".into()));
            }
        }
        if let Some(l) = &self.linewidth {
            l.model().validate().map_err(as_config)?;
        }
        if let Some(m) = &self.mors {
            if !(m.larmor_khz > 0.0 && m.linewidth_hz > 0.0 && m.scan_span_hz > 0.0 && m.scan_step_hz > 0.0) {
                return Err(Error::Config("mors frequencies must be positive".into()));
            }
        }
        Ok(())
    }
}

fn unit(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

fn as_config(e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    }
}
