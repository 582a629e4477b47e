//! Direct-mapping quantum memory: one light quadrature is written onto the
//! atoms by back-action, the other by measurement and feedback.
//!
//! Inputs are canonical Gaussian states; reported variances are in shot-noise
//! units (vacuum = 1). For a stored coherent state `(x₀, p₀)` the atomic means
//! are `X_A = g_BA p₀` and `P_A = -g_F x₀`.

use std::f64::consts::FRAC_PI_2;

use serde::Serialize;

use crate::decoherence::{admix_vacuum, check_unit_interval};
use crate::error::{Error, Result};
use crate::gaussian::{GaussianState, ModeKind, ModeLabel, SymplecticMap, VACUUM_VARIANCE};
use crate::interface::qnd_map;

use super::feedback_map;

/// Mean photon numbers reported by default.
pub const DEFAULT_PHOTON_NUMBERS: [f64; 4] = [0.0, 1.0, 2.0, 4.0];

/// Largest feedback gain searched when optimizing fidelity.
pub const MAX_FEEDBACK_GAIN: f64 = 4.0;

fn to_snu(canonical: f64) -> f64 {
    canonical / VACUUM_VARIANCE
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FidelityPoint {
    pub n0: f64,
    pub fidelity: f64,
    pub classical_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryReport {
    /// Back-action gain `g'_BA = β κ`.
    pub gain_ba: f64,
    /// Feedback gain `g'_F = g sqrt(ζ)`.
    pub gain_f: f64,
    pub var_x: f64,
    pub var_p: f64,
    /// Noise added on top of the gain-scaled input, referred to the input:
    /// `Var / g² - 1`. Infinite for zero gain.
    pub added_noise_x: f64,
    pub added_noise_p: f64,
    pub fidelity: Vec<FidelityPoint>,
}

impl MemoryReport {
    pub fn new(gain_ba: f64, gain_f: f64, var_x: f64, var_p: f64, photon_numbers: &[f64]) -> Result<Self> {
        let added = |v: f64, g: f64| {
            if g == 0.0 {
                f64::INFINITY
            } else {
                v / (g * g) - 1.0
            }
        };
        let fidelity = photon_numbers
            .iter()
            .map(|&n0| {
                Ok(FidelityPoint {
                    n0,
                    fidelity: memory_fidelity(gain_ba, gain_f, var_x, var_p, n0)?,
                    classical_bound: classical_fidelity_bound(n0)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MemoryReport {
            gain_ba,
            gain_f,
            var_x,
            var_p,
            added_noise_x: added(var_x, gain_ba),
            added_noise_p: added(var_p, gain_f),
            fidelity,
        })
    }

    pub fn fidelity_at(&self, n0: f64) -> Result<f64> {
        memory_fidelity(self.gain_ba, self.gain_f, self.var_x, self.var_p, n0)
    }
}

fn check_inputs(kappa: f64, gain: f64, beta: f64, zeta: f64) -> Result<()> {
    if !(kappa.is_finite() && gain.is_finite()) {
        return Err(Error::invalid("kappa and feedback gain must be finite"));
    }
    check_unit_interval("beta", beta)?;
    check_unit_interval("zeta", zeta)
}

/// Stored variances (SNU) for a vacuum or coherent input:
/// `Var(X) = 1 + g'_BA²`,
/// `Var(P) = 1 + g'_F²/ζ + g'_F² g'_BA²/β² - 2 g'_F g'_BA`.
pub fn memory_variances(gain_ba: f64, gain_f: f64, beta: f64, zeta: f64) -> Result<(f64, f64)> {
    if !(beta > 0.0 && zeta > 0.0) {
        return Err(Error::invalid(
            "beta and zeta must be positive to express Var(P) in gains",
        ));
    }
    let var_x = 1.0 + gain_ba * gain_ba;
    let var_p = 1.0 + gain_f * gain_f / zeta + (gain_f * gain_ba / beta).powi(2) - 2.0 * gain_f * gain_ba;
    Ok((var_x, var_p))
}

/// Closed-form counterpart of [`memory_store`] for coherent inputs.
pub fn memory_store_closed_form(kappa: f64, gain: f64, beta: f64, zeta: f64) -> Result<MemoryReport> {
    check_inputs(kappa, gain, beta, zeta)?;
    let gain_ba = beta * kappa;
    let gain_f = gain * zeta.sqrt();
    // Direct form, valid also at β = 0 or ζ = 0.
    let var_x = 1.0 + gain_ba * gain_ba;
    let var_p = (beta - gain_f * kappa).powi(2) + 1.0 - beta * beta + gain * gain;
    MemoryReport::new(gain_ba, gain_f, var_x, var_p, &DEFAULT_PHOTON_NUMBERS)
}

fn single_light_mode(input: &GaussianState) -> Result<ModeLabel> {
    match input.modes() {
        [m] if m.kind == ModeKind::Light => Ok(m.clone()),
        _ => Err(Error::invalid("memory input must be a single light mode")),
    }
}

/// Writes a light state into a fresh atomic ensemble.
///
/// Sequence: QND interaction, atomic decay `β`, transmission loss `ζ` of the
/// measured light, feedback `P_A -= g X_L`, light discarded.
pub fn memory_store(
    input: &GaussianState,
    kappa: f64,
    gain: f64,
    beta: f64,
    zeta: f64,
) -> Result<(GaussianState, MemoryReport)> {
    check_inputs(kappa, gain, beta, zeta)?;
    let light = single_light_mode(input)?;
    let atom = ModeLabel::atomic(1);
    let state = GaussianState::vacuum(vec![atom.clone()])?
        .tensor(input)?
        .apply_symplectic(&qnd_map(kappa, &atom, &light)?)?;
    let state = admix_vacuum(&state, &atom, beta)?.attenuate(&light, zeta.sqrt())?;
    let stored = state
        .apply_symplectic(&feedback_map(gain, &atom, &light)?)?
        .trace_out(&light)?;
    let report = MemoryReport::new(
        beta * kappa,
        gain * zeta.sqrt(),
        to_snu(stored.variance(&atom.x())?),
        to_snu(stored.variance(&atom.p())?),
        &DEFAULT_PHOTON_NUMBERS,
    )?;
    Ok((stored, report))
}

/// Average fidelity over a Gaussian ensemble of coherent inputs with mean
/// photon number `n0`:
/// `F = 2 / sqrt((2 n0 (1-g_BA)² + 1 + σ_x)(2 n0 (1-g_F)² + 1 + σ_p))`.
pub fn memory_fidelity(gain_ba: f64, gain_f: f64, var_x: f64, var_p: f64, n0: f64) -> Result<f64> {
    if !(n0 >= 0.0 && var_x >= 0.0 && var_p >= 0.0) {
        return Err(Error::invalid("n0 and variances must be non-negative"));
    }
    let ax = 2.0 * n0 * (1.0 - gain_ba).powi(2) + 1.0 + var_x;
    let ap = 2.0 * n0 * (1.0 - gain_f).powi(2) + 1.0 + var_p;
    Ok((2.0 / (ax * ap).sqrt()).min(1.0))
}

/// Best fidelity reachable by measure-and-prepare for the same ensemble,
/// `(1 + n̄)/(1 + 2n̄)`.
pub fn classical_fidelity_bound(n_bar: f64) -> Result<f64> {
    if !(n_bar >= 0.0 && n_bar.is_finite()) {
        return Err(Error::invalid("mean photon number must be non-negative"));
    }
    Ok((1.0 + n_bar) / (1.0 + 2.0 * n_bar))
}

/// Feedback gain `g` maximizing the fidelity at `n0` for fixed `κ, β, ζ`,
/// with the fidelity it reaches.
pub fn optimize_feedback_gain(kappa: f64, beta: f64, zeta: f64, n0: f64) -> Result<(f64, f64)> {
    check_inputs(kappa, 0.0, beta, zeta)?;
    let fid = |g: f64| -> Result<f64> { memory_store_closed_form(kappa, g, beta, zeta)?.fidelity_at(n0) };
    // The fidelity denominator is a product of a constant and a convex
    // quadratic in g, so golden-section search finds the single optimum.
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, MAX_FEEDBACK_GAIN);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (fid(c)?, fid(d)?);
    while b - a > 1e-10 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = fid(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = fid(d)?;
        }
    }
    let g = 0.5 * (a + b);
    Ok((g, fid(g)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReadoutStats {
    /// Mean of the readout `X_L` (canonical).
    pub mean: f64,
    /// Readout variance in SNU, shot noise included.
    pub var_snu: f64,
    /// Atomic variance inferred by removing one SNU of shot noise and the
    /// `κ²` scaling.
    pub atomic_var_snu: f64,
}

/// Destructive readout of a stored state by a fresh QND pulse.
///
/// Without rotation the pulse reads `P_A`; with `rotate_pi_half` the atoms
/// are first turned by -π/2 (`X' = -P`, `P' = X`) so the pulse reads `X_A`.
pub fn memory_readout(atomic: &GaussianState, kappa: f64, rotate_pi_half: bool) -> Result<ReadoutStats> {
    if !(kappa.is_finite() && kappa != 0.0) {
        return Err(Error::invalid("readout kappa must be finite and non-zero"));
    }
    let atom = atomic
        .modes()
        .iter()
        .find(|m| m.kind == ModeKind::Atomic)
        .cloned()
        .ok_or_else(|| Error::invalid("state has no atomic mode"))?;
    let mut state = atomic.clone();
    if rotate_pi_half {
        state = state.apply_symplectic(&SymplecticMap::rotation(atom.clone(), -FRAC_PI_2)?)?;
    }
    let probe = (1..=u8::MAX)
        .map(ModeLabel::light)
        .find(|l| !state.contains(l))
        .ok_or_else(|| Error::invalid("no free light label"))?;
    let out = state
        .with_vacuum_mode(probe.clone())?
        .apply_symplectic(&qnd_map(kappa, &atom, &probe)?)?;
    let var_snu = to_snu(out.variance(&probe.x())?);
    Ok(ReadoutStats {
        mean: out.mean_of(&probe.x())?,
        var_snu,
        atomic_var_snu: (var_snu - 1.0) / (kappa * kappa),
    })
}
