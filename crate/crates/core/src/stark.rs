//! Tensor Stark shifts of the Zeeman sublevels under the probe, their
//! compensation by a bias-field pulse, and the tensor-noise ratio.
//!
//! Angles are in degrees at the API.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interface::{coupling_coefficients, AtomicConstants, BOHR_MAGNETON, PLANCK};

/// Polarization angle where `1 + 3 cos 2α` vanishes.
pub fn magic_angle_deg() -> f64 {
    0.5 * (-1.0f64 / 3.0).acos().to_degrees()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StarkConfig {
    /// Probe polarization angle from the x axis.
    pub polarization_angle_deg: f64,
    /// Photon flux (photons/s).
    pub photon_flux: f64,
    pub beam_area_cm2: f64,
    #[serde(rename = "detuning_MHz")]
    pub detuning_mhz: f64,
    pub f: u32,
    pub m: i32,
}

impl StarkConfig {
    fn validate(&self, constants: &AtomicConstants) -> Result<()> {
        if !(self.beam_area_cm2 > 0.0 && self.beam_area_cm2.is_finite()) {
            return Err(Error::invalid("beam area must be positive"));
        }
        if !(self.photon_flux.is_finite() && self.polarization_angle_deg.is_finite()) {
            return Err(Error::invalid("flux and angle must be finite"));
        }
        if self.m.unsigned_abs() > self.f {
            return Err(Error::invalid(format!(
                "|m| = {} exceeds F = {}",
                self.m.abs(),
                self.f
            )));
        }
        if self.f != constants.f {
            return Err(Error::invalid(format!(
                "config F={} does not match constants F={}",
                self.f, constants.f
            )));
        }
        Ok(())
    }

    fn cos2a(&self) -> f64 {
        (2.0 * self.polarization_angle_deg.to_radians()).cos()
    }

    /// `γ λ² a₂ φ / (A Δ)` in 1/s.
    fn rate(&self, constants: &AtomicConstants) -> Result<f64> {
        let a2 = coupling_coefficients(self.detuning_mhz, constants)?.a2;
        let area = self.beam_area_cm2 * 1e-4;
        Ok(
            constants.gamma_mhz() / self.detuning_mhz * constants.wavelength.powi(2) / area
                * a2
                * self.photon_flux,
        )
    }
}

/// Shift (Hz) of the `m ↔ m+1` Zeeman resonance:
/// `γ λ² a₂ φ (1 + 3 cos 2α)(2m + 1) / (64 π² A Δ)`.
pub fn stark_line_shift(cfg: &StarkConfig, constants: &AtomicConstants) -> Result<f64> {
    cfg.validate(constants)?;
    if cfg.m >= cfg.f as i32 {
        return Err(Error::invalid(format!(
            "no m={} -> m+1 transition for F={}",
            cfg.m, cfg.f
        )));
    }
    let geometry = (1.0 + 3.0 * cfg.cos2a()) * (2 * cfg.m + 1) as f64;
    Ok(cfg.rate(constants)? * geometry / (64.0 * PI * PI))
}

/// Level shift `E_m / ħ` (rad/s):
/// `γ λ² a₂ φ / (16 π A Δ) [ (1+3cos 2α)/2 m² - (1+cos 2α)/2 F(F+1) ]`.
pub fn stark_level_shift(cfg: &StarkConfig, constants: &AtomicConstants) -> Result<f64> {
    cfg.validate(constants)?;
    let c = cfg.cos2a();
    let (m, f) = (cfg.m as f64, cfg.f as f64);
    let bracket = 0.5 * (1.0 + 3.0 * c) * m * m - 0.5 * (1.0 + c) * f * (f + 1.0);
    Ok(cfg.rate(constants)? * bracket / (16.0 * PI))
}

/// Line shift for each sample of a photon-flux time series.
pub fn stark_line_shift_series(
    cfg: &StarkConfig,
    flux: &[f64],
    constants: &AtomicConstants,
) -> Result<Vec<f64>> {
    flux.iter()
        .map(|&phi| {
            stark_line_shift(
                &StarkConfig {
                    photon_flux: phi,
                    ..cfg.clone()
                },
                constants,
            )
        })
        .collect()
}

/// Share of tensor (`S_y`-driven) noise relative to the wanted `S_z` noise,
/// `4 (2F-1)² (a₂/a₁)² · Noise(S_y)/Noise(S_z)`.
pub fn laser_noise_ratio(f: u32, a1: f64, a2: f64, noise_sy_over_sz: f64) -> Result<f64> {
    if a1 == 0.0 || !a1.is_finite() || !a2.is_finite() {
        return Err(Error::invalid("a1 must be finite and non-zero"));
    }
    if !(noise_sy_over_sz >= 0.0) {
        return Err(Error::invalid("noise ratio must be non-negative"));
    }
    let k = 2.0 * f as f64 - 1.0;
    Ok(4.0 * k * k * (a2 / a1).powi(2) * noise_sy_over_sz)
}

/// Bias-field change (T) along x whose Larmor shift cancels each sampled
/// line shift: `ΔB = -h δν / (g_F μ_B)`.
pub fn compensation_bias_field(shifts_hz: &[f64], g_f: f64) -> Result<Vec<f64>> {
    if !(g_f != 0.0 && g_f.is_finite()) {
        return Err(Error::invalid("g_F must be finite and non-zero"));
    }
    shifts_hz
        .iter()
        .map(|&s| {
            if s.is_finite() {
                Ok(-PLANCK * s / (g_f * BOHR_MAGNETON))
            } else {
                Err(Error::invalid("shift series contains a non-finite value"))
            }
        })
        .collect()
}
