//! Noise and decay models: vacuum admixture, linewidths, thermal spin noise
//! and the atomic-motion statistics of a partially illuminated cell.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{GaussianState, ModeLabel};

/// Atomic retention `β` between pulses and optical transmission `ζ` of the
/// feedback path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecoherenceParams {
    pub beta: f64,
    #[serde(default = "one")]
    pub zeta: f64,
}

fn one() -> f64 {
    1.0
}

pub(crate) fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

impl DecoherenceParams {
    pub fn new(beta: f64, zeta: f64) -> Result<Self> {
        let p = DecoherenceParams { beta, zeta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_unit_interval("beta", self.beta)?;
        check_unit_interval("zeta", self.zeta)
    }
}

/// Decay of one mode toward the vacuum: `X -> β X + sqrt(1-β²) V`.
///
/// The target is always the vacuum (the fully polarized spin state), never a
/// thermal state.
pub fn admix_vacuum(state: &GaussianState, mode: &ModeLabel, beta: f64) -> Result<GaussianState> {
    check_unit_interval("beta", beta)?;
    state.attenuate(mode, beta)
}

/// `Γ = a + b n + c P + d n P` (FWHM, Hz) with density `n` in the model's
/// density unit and probe power `P` in mW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinewidthModel {
    #[serde(rename = "a_Hz")]
    pub a: f64,
    #[serde(rename = "b_Hz_per_density")]
    pub b: f64,
    #[serde(rename = "c_Hz_per_mW")]
    pub c: f64,
    #[serde(rename = "d_Hz_per_density_mW", default)]
    pub d: f64,
}

impl LinewidthModel {
    pub fn validate(&self) -> Result<()> {
        if ![self.a, self.b, self.c, self.d].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("linewidth coefficients must be finite"));
        }
        Ok(())
    }

    /// The model without light-assisted collisions.
    pub fn ideal(&self) -> Self {
        LinewidthModel { d: 0.0, ..*self }
    }

    /// Contribution of the `d n P` term alone.
    pub fn collision_broadening(&self, density: f64, power_mw: f64) -> f64 {
        self.d * density * power_mw
    }
}

pub fn linewidth(model: &LinewidthModel, density: f64, power_mw: f64) -> Result<f64> {
    model.validate()?;
    if !(density >= 0.0 && power_mw >= 0.0) {
        return Err(Error::invalid("density and power must be non-negative"));
    }
    let g = model.a + model.b * density + model.c * power_mw + model.d * density * power_mw;
    if g < 0.0 {
        return Err(Error::invalid(format!(
            "linewidth model is negative ({g} Hz) at n={density}, P={power_mw} mW"
        )));
    }
    Ok(g)
}

/// `T₂ [ms]` from a transverse linewidth `Γ [Hz]` via `Γ = 1/(π T₂)`.
pub fn t2_from_linewidth(gamma_hz: f64) -> Result<f64> {
    if !(gamma_hz > 0.0 && gamma_hz.is_finite()) {
        return Err(Error::invalid(format!(
            "linewidth must be positive, got {gamma_hz}"
        )));
    }
    Ok(1e3 / (std::f64::consts::PI * gamma_hz))
}

/// `Γ [Hz]` from `T₂ [ms]`.
pub fn linewidth_from_t2(t2_ms: f64) -> Result<f64> {
    if !(t2_ms > 0.0 && t2_ms.is_finite()) {
        return Err(Error::invalid(format!("T2 must be positive, got {t2_ms}")));
    }
    Ok(1e3 / (std::f64::consts::PI * t2_ms))
}

/// Noise per atom of an F=4 ensemble that starts in the coherent spin state
/// and relaxes toward the unpolarized mixture at rate `decay_rate` (1/ms):
/// `2 e^{-Γt} + (20/3)(9/16)(1 - e^{-Γt})`.
pub fn thermal_noise_evolution(t_ms: f64, decay_rate: f64) -> Result<f64> {
    if !(t_ms >= 0.0) || !(decay_rate >= 0.0) {
        return Err(Error::invalid("time and decay rate must be non-negative"));
    }
    let e = (-decay_rate * t_ms).exp();
    Ok(2.0 * e + THERMAL_NOISE_LIMIT * (1.0 - e))
}

/// Unpolarized-state noise per atom: the `F=4` value 20/3 weighted by the
/// 9/16 of atoms that remain in `F=4`.
pub const THERMAL_NOISE_LIMIT: f64 = 20.0 / 3.0 * 9.0 / 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionGeometry {
    pub beam_area_cm2: f64,
    pub cell_area_cm2: f64,
    pub cell_length_cm: f64,
    #[serde(rename = "rms_speed_cm_per_ms")]
    pub rms_speed: f64,
    pub duration_ms: f64,
}

impl MotionGeometry {
    pub fn validate(&self) -> Result<()> {
        let v = [
            self.beam_area_cm2,
            self.cell_area_cm2,
            self.cell_length_cm,
            self.rms_speed,
            self.duration_ms,
        ];
        if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::invalid("motion geometry values must be positive"));
        }
        if self.beam_area_cm2 > self.cell_area_cm2 {
            return Err(Error::invalid("beam area exceeds cell area"));
        }
        Ok(())
    }

    /// Number of independent passes through the cell, `round(T v₀ / L)`,
    /// at least one.
    pub fn journeys(&self) -> u64 {
        (self.duration_ms * self.rms_speed / self.cell_length_cm)
            .round()
            .max(1.0) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MotionStatistics {
    /// Mean fraction of time an atom spends in the beam.
    pub p: f64,
    /// Relative variance of that fraction.
    pub sigma_sq: f64,
}

/// `p = A_beam / A_cell`, `σ² = (A_cell - A_beam) L / (A_beam T v₀)`.
pub fn motion_statistics(geom: &MotionGeometry) -> Result<MotionStatistics> {
    motion_statistics_scaled(geom, 1.0)
}

/// As [`motion_statistics`] with `σ²` multiplied by `correction`. Full
/// simulations of the cell come out about four times lower than the simple
/// estimate, so `0.25` is the usual alternative to `1.0`.
pub fn motion_statistics_scaled(geom: &MotionGeometry, correction: f64) -> Result<MotionStatistics> {
    geom.validate()?;
    if !(correction > 0.0 && correction.is_finite()) {
        return Err(Error::invalid("correction factor must be positive"));
    }
    let p = geom.beam_area_cm2 / geom.cell_area_cm2;
    let sigma_sq = correction * (geom.cell_area_cm2 - geom.beam_area_cm2) * geom.cell_length_cm
        / (geom.beam_area_cm2 * geom.duration_ms * geom.rms_speed);
    Ok(MotionStatistics { p, sigma_sq })
}

/// Effective retention from motional averaging, `β = 1/(1+σ²)`.
pub fn motion_effective_beta(sigma_sq: f64) -> Result<f64> {
    if !(sigma_sq >= 0.0 && sigma_sq.is_finite()) {
        return Err(Error::invalid("sigma_sq must be non-negative"));
    }
    Ok(1.0 / (1.0 + sigma_sq))
}

/// Measured coherent-spin-state variance with partial illumination,
/// `(J/2) p² (1+σ²)`.
pub fn motion_css_variance(j: f64, p: f64, sigma_sq: f64) -> Result<f64> {
    if !(j >= 0.0 && (0.0..=1.0).contains(&p) && sigma_sq >= 0.0) {
        return Err(Error::invalid("need J >= 0, 0 <= p <= 1, sigma_sq >= 0"));
    }
    Ok(0.5 * j * p * p * (1.0 + sigma_sq))
}

/// Sample estimate of `(p, σ²)` from simulated walkers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JourneyEstimate {
    pub p: f64,
    pub p_se: f64,
    pub sigma_sq: f64,
    pub sigma_sq_se: f64,
}

/// Each walker makes `journeys` independent passes and is in the beam on
/// each with probability `p`; its illuminated fraction is `k / journeys`.
pub fn simulate_journeys(p: f64, journeys: u64, walkers: usize, seed: u64) -> Result<JourneyEstimate> {
    if !(p > 0.0 && p <= 1.0) || journeys == 0 || walkers < 2 {
        return Err(Error::invalid("need 0 < p <= 1, journeys >= 1, walkers >= 2"));
    }
    let dist = Binomial::new(journeys, p).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = journeys as f64;
    let fractions: Vec<f64> = (0..walkers).map(|_| dist.sample(&mut rng) as f64 / n).collect();
    let w = walkers as f64;
    let mean = fractions.iter().sum::<f64>() / w;
    let m2 = fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (w - 1.0);
    let m4 = fractions.iter().map(|f| (f - mean).powi(4)).sum::<f64>() / w;
    let var_se = ((m4 - m2 * m2).max(0.0) / w).sqrt();
    let sigma_sq = m2 / (mean * mean);
    // Delta method on m2 / mean², dominated by the m2 term.
    let p_se = (m2 / w).sqrt();
    let sigma_sq_se = ((var_se / (mean * mean)).powi(2) + (2.0 * m2 / mean.powi(3) * p_se).powi(2)).sqrt();
    Ok(JourneyEstimate {
        p: mean,
        p_se,
        sigma_sq,
        sigma_sq_se,
    })
}
