//! Physical parametrization of the Faraday interface.
//!
//! Units at the API boundary follow the lab's habits (mW, ms, MHz, degrees,
//! cm²). Frequencies given in MHz are `f = ω/2π`. Detunings are signed from
//! the F=4 → F'=5 line with red detuning positive.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{ModeLabel, SymplecticMap};

pub const HBAR: f64 = 1.054_571_817e-34;
pub const PLANCK: f64 = 6.626_070_15e-34;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;

const CESIUM_D2: &str = include_str!("../data/cesium_d2.toml");

/// Relative agreement required between the tabulated κ² prefactor and the
/// one derived from the other constants.
pub const PREFACTOR_TOLERANCE: f64 = 0.01;

/// On-disk form of the constants table. Units live in the key names.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsFile {
    pub schema_version: u32,
    pub name: String,
    #[serde(rename = "gamma_MHz")]
    pub gamma_mhz: f64,
    pub wavelength_nm: f64,
    #[serde(rename = "delta35_MHz")]
    pub delta35_mhz: f64,
    #[serde(rename = "delta45_MHz")]
    pub delta45_mhz: f64,
    pub f: u32,
    #[serde(rename = "hyperfine_GHz")]
    pub hyperfine_ghz: f64,
    pub g_f: f64,
    pub convenient_prefactor: f64,
}

/// Atomic constants converted to SI (angular frequencies in rad/s).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtomicConstants {
    pub name: String,
    pub gamma: f64,
    pub wavelength: f64,
    pub delta35: f64,
    pub delta45: f64,
    pub f: u32,
    pub hyperfine_splitting: f64,
    pub g_f: f64,
    pub convenient_prefactor: f64,
}

impl AtomicConstants {
    /// The shipped cesium D2 table.
    pub fn cesium() -> Self {
        AtomicConstants::from_toml_str(CESIUM_D2).expect("bundled constants table is valid")
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ConstantsFile = toml::from_str(text)?;
        AtomicConstants::from_file(file)
    }

    pub fn from_file(file: ConstantsFile) -> Result<Self> {
        if file.schema_version != 1 {
            return Err(Error::Config(format!(
                "unsupported constants schema_version {}",
                file.schema_version
            )));
        }
        let positive = [
            ("gamma_MHz", file.gamma_mhz),
            ("wavelength_nm", file.wavelength_nm),
            ("delta35_MHz", file.delta35_mhz),
            ("delta45_MHz", file.delta45_mhz),
            ("hyperfine_GHz", file.hyperfine_ghz),
            ("g_f", file.g_f),
            ("convenient_prefactor", file.convenient_prefactor),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{key} must be positive, got {v}")));
            }
        }
        if file.f == 0 {
            return Err(Error::Config("f must be at least 1".into()));
        }
        let two_pi = 2.0 * PI;
        let c = AtomicConstants {
            name: file.name,
            gamma: two_pi * file.gamma_mhz * 1e6,
            wavelength: file.wavelength_nm * 1e-9,
            delta35: two_pi * file.delta35_mhz * 1e6,
            delta45: two_pi * file.delta45_mhz * 1e6,
            f: file.f,
            hyperfine_splitting: two_pi * file.hyperfine_ghz * 1e9,
            g_f: file.g_f,
            convenient_prefactor: file.convenient_prefactor,
        };
        c.check_prefactor()?;
        Ok(c)
    }

    pub fn gamma_mhz(&self) -> f64 {
        self.gamma / (2.0 * PI * 1e6)
    }

    pub fn delta35_mhz(&self) -> f64 {
        self.delta35 / (2.0 * PI * 1e6)
    }

    pub fn delta45_mhz(&self) -> f64 {
        self.delta45 / (2.0 * PI * 1e6)
    }

    /// κ² prefactor in mW·ms·deg / (cm²·MHz) derived from γ, λ, ħ and c.
    pub fn derived_prefactor(&self) -> f64 {
        let units = 1e-3 * 1e-3 * (PI / 180.0) / 1e-4;
        self.gamma_mhz() * self.wavelength.powi(3) * units / (32.0 * PI * PI * HBAR * SPEED_OF_LIGHT)
    }

    /// Fails when the tabulated prefactor is off by more than 1% from the
    /// derived one; this catches unit slips in either.
    pub fn check_prefactor(&self) -> Result<()> {
        let derived = self.derived_prefactor();
        let rel = (self.convenient_prefactor - derived).abs() / derived;
        if rel > PREFACTOR_TOLERANCE {
            return Err(Error::Config(format!(
                "convenient_prefactor {} disagrees with derived {derived:.3} ({:.2}%)",
                self.convenient_prefactor,
                100.0 * rel
            )));
        }
        Ok(())
    }
}

/// Dimensionless coupling coefficients `(a0, a1, a2)` of the F=4 effective
/// Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Couplings {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
}

/// Evaluates `a0, a1, a2` at a signed detuning (MHz, red positive).
pub fn coupling_coefficients(detuning_mhz: f64, constants: &AtomicConstants) -> Result<Couplings> {
    if constants.f != 4 {
        return Err(Error::invalid(format!(
            "coupling coefficients are tabulated for F=4 only, constants have F={}",
            constants.f
        )));
    }
    if !detuning_mhz.is_finite() {
        if detuning_mhz.is_infinite() {
            return Ok(Couplings {
                a0: 4.0,
                a1: 1.0,
                a2: 0.0,
            });
        }
        return Err(Error::invalid("detuning is NaN"));
    }
    if detuning_mhz == 0.0 {
        return Err(Error::invalid("detuning must be non-zero"));
    }
    let d35 = constants.delta35_mhz();
    let d45 = constants.delta45_mhz();
    for pole in [d35, d45] {
        if (detuning_mhz - pole).abs() <= 1e-9 * pole {
            return Err(Error::Pole { detuning_mhz });
        }
    }
    let t35 = 1.0 / (1.0 - d35 / detuning_mhz);
    let t45 = 1.0 / (1.0 - d45 / detuning_mhz);
    Ok(Couplings {
        a0: (t35 + 7.0 * t45 + 8.0) / 4.0,
        a1: (-35.0 * t35 - 21.0 * t45 + 176.0) / 120.0,
        a2: (5.0 * t35 - 21.0 * t45 + 16.0) / 240.0,
    })
}

/// Experimental inputs of the projection-noise prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParams {
    #[serde(rename = "power_mW")]
    pub power_mw: f64,
    pub duration_ms: f64,
    #[serde(rename = "detuning_MHz")]
    pub detuning_mhz: f64,
    pub faraday_angle_deg: f64,
    pub cell_area_cm2: f64,
    #[serde(default)]
    pub sigma_sq: f64,
    #[serde(default)]
    pub jx: Option<f64>,
    #[serde(default)]
    pub sx: Option<f64>,
}

impl PhysicalParams {
    /// Power may be zero (no probe, κ² = 0); everything else that divides or
    /// scales must be strictly positive.
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.power_mw,
            self.duration_ms,
            self.detuning_mhz,
            self.faraday_angle_deg,
            self.cell_area_cm2,
            self.sigma_sq,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("physical parameters must be finite"));
        }
        if self.power_mw < 0.0 {
            return Err(Error::invalid("power_mW must be non-negative"));
        }
        if self.duration_ms <= 0.0 {
            return Err(Error::invalid("duration_ms must be positive"));
        }
        if self.cell_area_cm2 <= 0.0 {
            return Err(Error::invalid("cell_area_cm2 must be positive"));
        }
        if self.detuning_mhz == 0.0 {
            return Err(Error::invalid("detuning_MHz must be non-zero"));
        }
        if self.sigma_sq < 0.0 {
            return Err(Error::invalid("sigma_sq must be non-negative"));
        }
        Ok(())
    }
}

/// Projection-to-shot-noise ratio κ² in convenient units:
/// `C · P · T · θ_F · a1(Δ) · (1 + σ²) / (A_cell · Δ)`.
///
/// The sign of `a1 θ_F / Δ` is dropped; the Faraday angle of a spin
/// oriented against the probe flips sign together with the detuning.
pub fn kappa_squared(params: &PhysicalParams, constants: &AtomicConstants) -> Result<f64> {
    params.validate()?;
    let a1 = coupling_coefficients(params.detuning_mhz, constants)?.a1;
    Ok(constants.convenient_prefactor
        * params.power_mw
        * params.duration_ms
        * (params.faraday_angle_deg * a1 / params.detuning_mhz).abs()
        * (1.0 + params.sigma_sq)
        / params.cell_area_cm2)
}

/// κ² per degree of Faraday rotation for otherwise fixed parameters.
pub fn kappa_squared_slope(params: &PhysicalParams, constants: &AtomicConstants) -> Result<f64> {
    let unit = PhysicalParams {
        faraday_angle_deg: 1.0,
        ..params.clone()
    };
    kappa_squared(&unit, constants)
}

/// Faraday rotation angle in degrees produced by a macroscopic spin `jx`
/// along the probe: `θ_F = -a1 γ λ² J_x / (32 π A_cell Δ)`.
pub fn faraday_angle(
    jx: f64,
    cell_area_cm2: f64,
    detuning_mhz: f64,
    constants: &AtomicConstants,
) -> Result<f64> {
    if !(cell_area_cm2 > 0.0) {
        return Err(Error::invalid("cell area must be positive"));
    }
    let a1 = coupling_coefficients(detuning_mhz, constants)?.a1;
    let area = cell_area_cm2 * 1e-4;
    let ratio = constants.gamma_mhz() / detuning_mhz;
    let theta = -a1 * ratio * constants.wavelength.powi(2) * jx / (32.0 * PI * area);
    Ok(theta.to_degrees())
}

/// Photon-flux Stokes component `S_x = P λ / (4π ħ c)` in photons/s for a
/// power in watts.
pub fn stokes_x(power_w: f64, constants: &AtomicConstants) -> f64 {
    power_w * constants.wavelength / (4.0 * PI * HBAR * SPEED_OF_LIGHT)
}

/// κ² from the macroscopic spin, all in SI:
/// `(γ λ² a1 / (16 π A Δ))² J_x S_x T (1 + σ²)`.
pub fn kappa_squared_from_spin(
    jx: f64,
    power_w: f64,
    duration_s: f64,
    cell_area_m2: f64,
    detuning_mhz: f64,
    sigma_sq: f64,
    constants: &AtomicConstants,
) -> Result<f64> {
    let a1 = coupling_coefficients(detuning_mhz, constants)?.a1;
    let a =
        constants.gamma_mhz() / detuning_mhz * constants.wavelength.powi(2) * a1 / (16.0 * PI * cell_area_m2);
    Ok(a * a * jx.abs() * stokes_x(power_w, constants) * duration_s * (1.0 + sigma_sq))
}

/// κ² from the Faraday angle (radians), all in SI:
/// `(1 + σ²) γ λ³ a1 P T θ_F / (32 π² A Δ ħ c)`, sign dropped as in
/// [`kappa_squared`].
pub fn kappa_squared_from_faraday(
    theta_rad: f64,
    power_w: f64,
    duration_s: f64,
    cell_area_m2: f64,
    detuning_mhz: f64,
    sigma_sq: f64,
    constants: &AtomicConstants,
) -> Result<f64> {
    let a1 = coupling_coefficients(detuning_mhz, constants)?.a1;
    let ratio = constants.gamma_mhz() / detuning_mhz;
    Ok(
        ((1.0 + sigma_sq) * ratio * constants.wavelength.powi(3) * a1 * power_w * duration_s * theta_rad
            / (32.0 * PI * PI * cell_area_m2 * HBAR * SPEED_OF_LIGHT))
            .abs(),
    )
}

/// Symplectic map of the QND Faraday interaction on `(atomic, light)`:
/// `X_L += κ P_A`, `X_A += κ P_L`, both `P` unchanged.
pub fn qnd_map(kappa: f64, atomic_mode: &ModeLabel, light_mode: &ModeLabel) -> Result<SymplecticMap> {
    if !kappa.is_finite() {
        return Err(Error::invalid("kappa must be finite"));
    }
    #[rustfmt::skip]
    let m = DMatrix::from_row_slice(4, 4, &[
        1.0, 0.0,   0.0, kappa,
        0.0, 1.0,   0.0, 0.0,
        0.0, kappa, 1.0, 0.0,
        0.0, 0.0,   0.0, 1.0,
    ]);
    SymplecticMap::new(vec![atomic_mode.clone(), light_mode.clone()], m, None)
}

/// Labels of the canonical modes of the two-cell setup.
///
/// For two oppositely oriented cells with `J_x1 = -J_x2 = J_x`:
///
/// ```text
/// X_A1 =  (J'_y1 - J'_y2) / sqrt(2 J_x)    P_A1 = (J'_z1 + J'_z2) / sqrt(2 J_x)
/// X_A2 = -(J'_z1 - J'_z2) / sqrt(2 J_x)    P_A2 = (J'_y1 + J'_y2) / sqrt(2 J_x)
/// ```
///
/// and the light modes are the cos/sin lock-in components of `S_y`
/// (`X_L`) and `S_z` (`P_L`) scaled by `sqrt(2 / (S_x T))`. Each atomic
/// mode couples only to the light mode with the same index.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalModes {
    pub pairs: Vec<(ModeLabel, ModeLabel)>,
}

impl CanonicalModes {
    pub fn two_cell() -> Self {
        CanonicalModes {
            pairs: vec![
                (ModeLabel::atomic(1), ModeLabel::light(1)),
                (ModeLabel::atomic(2), ModeLabel::light(2)),
            ],
        }
    }

    /// Single sample without bias field: `X_As = J_y/√J_x`, `P_As = J_z/√J_x`.
    pub fn single() -> Self {
        CanonicalModes {
            pairs: vec![(
                ModeLabel::new(crate::gaussian::ModeKind::Atomic, 0, "As"),
                ModeLabel::new(crate::gaussian::ModeKind::Light, 0, "Ls"),
            )],
        }
    }

    pub fn all_modes(&self) -> Vec<ModeLabel> {
        self.pairs
            .iter()
            .flat_map(|(a, l)| [a.clone(), l.clone()])
            .collect()
    }
}

/// Rotating-frame spin components of the two cells mapped to
/// `(X_A1, P_A1, X_A2, P_A2)`.
pub fn atomic_canonical(jy1: f64, jz1: f64, jy2: f64, jz2: f64, jx: f64) -> Result<[f64; 4]> {
    if !(jx > 0.0) {
        return Err(Error::invalid("J_x must be positive"));
    }
    let norm = (2.0 * jx).sqrt();
    Ok([
        (jy1 - jy2) / norm,
        (jz1 + jz2) / norm,
        -(jz1 - jz2) / norm,
        (jy1 + jy2) / norm,
    ])
}

/// Minimum `Ω T` for the cos²/sin² ≈ T/2 orthogonality approximation.
pub const LOCKIN_MIN_PHASE: f64 = 20.0 * 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LockinComponents {
    /// `∫ s(t) cos(Ω t) dt`
    pub cos_component: f64,
    /// `∫ s(t) sin(Ω t) dt`
    pub sin_component: f64,
    /// Set when `Ω T` is below [`LOCKIN_MIN_PHASE`].
    pub short_window: bool,
}

impl LockinComponents {
    /// Canonical light quadratures `sqrt(2 / (S_x T))` times the overlaps.
    pub fn canonical(&self, stokes_x: f64, duration: f64) -> Result<(f64, f64)> {
        if !(stokes_x > 0.0 && duration > 0.0) {
            return Err(Error::invalid("S_x and T must be positive"));
        }
        let scale = (2.0 / (stokes_x * duration)).sqrt();
        Ok((scale * self.cos_component, scale * self.sin_component))
    }
}

/// Lock-in demodulation of a uniformly sampled signal over `[0, duration)`.
///
/// Samples sit at `t_k = k dt` with `dt = duration / len`; the overlap
/// integrals are left Riemann sums.
pub fn lockin_components(signal: &[f64], larmor: f64, duration: f64) -> Result<LockinComponents> {
    if signal.is_empty() {
        return Err(Error::invalid("signal is empty"));
    }
    if !(duration > 0.0 && duration.is_finite() && larmor.is_finite()) {
        return Err(Error::invalid("duration must be positive and larmor finite"));
    }
    let dt = duration / signal.len() as f64;
    let (mut c, mut s) = (0.0, 0.0);
    for (k, &v) in signal.iter().enumerate() {
        let (sin, cos) = (larmor * k as f64 * dt).sin_cos();
        c += v * cos;
        s += v * sin;
    }
    Ok(LockinComponents {
        cos_component: c * dt,
        sin_component: s * dt,
        short_window: larmor.abs() * duration < LOCKIN_MIN_PHASE,
    })
}
