//! Magneto-optical resonance spectra, their least-squares fit, and RF spin
//! steering.
//!
//! All spectral quantities are ordinary frequencies in Hz. Populations are
//! indexed from `m = -F` (index 0) to `m = F` (index 2F); coherence `k`
//! couples `m = k - F` and `m + 1`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the population normalization.
pub const POPULATION_TOLERANCE: f64 = 1e-9;

/// Minimum `Γ · dwell` for the spins to follow a swept drive adiabatically.
pub const ADIABATIC_MIN: f64 = 5.0;

/// How the quadratic Zeeman splitting between adjacent coherences is
/// computed from the Larmor and hyperfine frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QzFormula {
    /// `2 ν_L² / ν_hfs`, the dimensionally consistent second-order shift.
    #[default]
    Quadratic,
    /// `2 ν_L / ν_hfs` taken literally (dimensionless, reported as Hz).
    Linear,
}

/// Splitting between adjacent coherence frequencies, in Hz.
pub fn qz_splitting(larmor_hz: f64, hyperfine_hz: f64, formula: QzFormula) -> Result<f64> {
    if !(larmor_hz >= 0.0 && larmor_hz.is_finite()) {
        return Err(Error::invalid("larmor frequency must be non-negative"));
    }
    if !(hyperfine_hz > 0.0 && hyperfine_hz.is_finite()) {
        return Err(Error::invalid("hyperfine splitting must be positive"));
    }
    Ok(match formula {
        QzFormula::Quadratic => 2.0 * larmor_hz * larmor_hz / hyperfine_hz,
        QzFormula::Linear => 2.0 * larmor_hz / hyperfine_hz,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MorsModel {
    pub f: u32,
    /// `2F + 1` sublevel populations, `m = -F ..= F`.
    pub populations: Vec<f64>,
    /// `2F` coherence linewidths (FWHM, Hz).
    pub linewidths_hz: Vec<f64>,
    pub larmor_hz: f64,
    pub qz_splitting_hz: f64,
    pub amplitude: f64,
}

impl MorsModel {
    /// Model with every coherence sharing one linewidth.
    pub fn uniform(
        f: u32,
        populations: Vec<f64>,
        linewidth_hz: f64,
        larmor_hz: f64,
        qz_splitting_hz: f64,
    ) -> Result<Self> {
        let m = MorsModel {
            f,
            populations,
            linewidths_hz: vec![linewidth_hz; 2 * f as usize],
            larmor_hz,
            qz_splitting_hz,
            amplitude: 1.0,
        };
        m.validate()?;
        Ok(m)
    }

    /// All atoms in `m = F`.
    pub fn fully_pumped(f: u32, linewidth_hz: f64, larmor_hz: f64, qz_splitting_hz: f64) -> Result<Self> {
        let mut pops = vec![0.0; 2 * f as usize + 1];
        pops[2 * f as usize] = 1.0;
        MorsModel::uniform(f, pops, linewidth_hz, larmor_hz, qz_splitting_hz)
    }

    pub fn n_coherences(&self) -> usize {
        2 * self.f as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.f == 0 {
            return Err(Error::invalid("F must be at least 1"));
        }
        let n = self.n_coherences();
        if self.populations.len() != n + 1 {
            return Err(Error::invalid(format!(
                "F={} needs {} populations, got {}",
                self.f,
                n + 1,
                self.populations.len()
            )));
        }
        if self.linewidths_hz.len() != n {
            return Err(Error::invalid(format!(
                "F={} needs {n} linewidths, got {}",
                self.f,
                self.linewidths_hz.len()
            )));
        }
        if self.populations.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid("populations must be finite and non-negative"));
        }
        let total: f64 = self.populations.iter().sum();
        if (total - 1.0).abs() > POPULATION_TOLERANCE {
            return Err(Error::invalid(format!("populations sum to {total}, not 1")));
        }
        if self.linewidths_hz.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::invalid("linewidths must be positive"));
        }
        if ![self.larmor_hz, self.qz_splitting_hz, self.amplitude]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::invalid("larmor, splitting and amplitude must be finite"));
        }
        Ok(())
    }

    /// Magnetic quantum number of the lower level of coherence `k`.
    fn lower_m(&self, k: usize) -> f64 {
        k as f64 - self.f as f64
    }

    /// Resonance frequency of coherence `k`: `ν_L - (m + 1/2) ν_QZ`.
    pub fn coherence_frequency(&self, k: usize) -> f64 {
        self.larmor_hz - (self.lower_m(k) + 0.5) * self.qz_splitting_hz
    }

    /// Matrix-element weight `F(F+1) - m(m+1)`.
    pub fn coherence_weight(&self, k: usize) -> f64 {
        let f = self.f as f64;
        let m = self.lower_m(k);
        f * (f + 1.0) - m * (m + 1.0)
    }

    /// Population difference `σ_{m+1,m+1} - σ_{m,m}`.
    pub fn population_difference(&self, k: usize) -> f64 {
        self.populations[k + 1] - self.populations[k]
    }

    fn lorentz(&self, k: usize, nu: f64) -> Complex64 {
        let d = Complex64::new(-0.5 * self.linewidths_hz[k], self.coherence_frequency(k) - nu);
        d.inv()
    }

    /// Complex response: real part drives `J_y`, imaginary part `J_z`.
    pub fn response(&self, nu: f64) -> Complex64 {
        (0..self.n_coherences())
            .map(|k| self.coherence_weight(k) * self.population_difference(k) * self.lorentz(k, nu))
            .sum()
    }
}

/// Squared-modulus MORS signal on a frequency grid (Hz).
pub fn mors_spectrum(model: &MorsModel, scan_hz: &[f64]) -> Result<Vec<f64>> {
    model.validate()?;
    Ok(scan_hz
        .iter()
        .map(|&nu| model.amplitude * model.response(nu).norm_sqr())
        .collect())
}

/// In-phase and quadrature parts of the demodulated response.
pub fn mors_quadratures(model: &MorsModel, scan_hz: &[f64]) -> Result<Vec<(f64, f64)>> {
    model.validate()?;
    Ok(scan_hz
        .iter()
        .map(|&nu| {
            let r = model.response(nu) * model.amplitude.sqrt();
            (r.re, r.im)
        })
        .collect())
}

/// True when the narrowest line satisfies `Γ · dwell > 5` for a drive that
/// dwells `dwell_s` seconds per scan point.
pub fn scan_is_adiabatic(model: &MorsModel, dwell_s: f64) -> bool {
    let narrowest = model.linewidths_hz.iter().copied().fold(f64::INFINITY, f64::min);
    narrowest * dwell_s > ADIABATIC_MIN
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Relative parameter-step tolerance.
    pub x_tolerance: f64,
    pub fit_amplitude: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        // Amplitude stays fixed by default: with normalized populations an
        // overall scale of the population differences trades off exactly
        // against the amplitude.
        FitOptions {
            max_iterations: 500,
            x_tolerance: 1e-12,
            fit_amplitude: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorsFit {
    pub model: MorsModel,
    /// Sum of squared residuals.
    pub residual: f64,
    pub rms: f64,
    pub iterations: usize,
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &mut [f64]) {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut shift = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (i as f64 + 1.0);
        if u - t > 0.0 {
            shift = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - shift).max(0.0);
    }
}

struct Layout {
    n_pop: usize,
    n_coh: usize,
    fit_amplitude: bool,
}

impl Layout {
    fn len(&self) -> usize {
        self.n_pop + self.n_coh + 1 + usize::from(self.fit_amplitude)
    }

    fn pack(&self, m: &MorsModel) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&m.populations);
        v.extend_from_slice(&m.linewidths_hz);
        v.push(m.larmor_hz);
        if self.fit_amplitude {
            v.push(m.amplitude);
        }
        DVector::from_vec(v)
    }

    fn unpack(&self, v: &DVector<f64>, template: &MorsModel) -> MorsModel {
        let mut m = template.clone();
        m.populations = v.rows(0, self.n_pop).iter().copied().collect();
        m.linewidths_hz = v.rows(self.n_pop, self.n_coh).iter().copied().collect();
        m.larmor_hz = v[self.n_pop + self.n_coh];
        if self.fit_amplitude {
            m.amplitude = v[self.n_pop + self.n_coh + 1];
        }
        m
    }
}

fn residuals(model: &MorsModel, scan: &[f64], measured: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        scan.len(),
        scan.iter()
            .zip(measured)
            .map(|(&nu, &y)| model.amplitude * model.response(nu).norm_sqr() - y),
    )
}

fn jacobian(model: &MorsModel, scan: &[f64], layout: &Layout) -> DMatrix<f64> {
    let n_coh = layout.n_coh;
    let mut jac = DMatrix::zeros(scan.len(), layout.len());
    let mut lor = vec![Complex64::new(0.0, 0.0); n_coh];
    for (row, &nu) in scan.iter().enumerate() {
        for (k, l) in lor.iter_mut().enumerate() {
            *l = model.lorentz(k, nu);
        }
        let s: Complex64 = (0..n_coh)
            .map(|k| model.coherence_weight(k) * model.population_difference(k) * lor[k])
            .sum();
        let sc = s.conj();
        let a2 = 2.0 * model.amplitude;
        for j in 0..layout.n_pop {
            let mut ds = Complex64::new(0.0, 0.0);
            if j >= 1 {
                ds += model.coherence_weight(j - 1) * lor[j - 1];
            }
            if j < n_coh {
                ds -= model.coherence_weight(j) * lor[j];
            }
            jac[(row, j)] = a2 * (sc * ds).re;
        }
        let mut d_larmor = Complex64::new(0.0, 0.0);
        for k in 0..n_coh {
            let c = model.coherence_weight(k) * model.population_difference(k);
            let l2 = lor[k] * lor[k];
            jac[(row, layout.n_pop + k)] = a2 * (sc * (0.5 * c * l2)).re;
            d_larmor += c * Complex64::new(0.0, -1.0) * l2;
        }
        jac[(row, layout.n_pop + n_coh)] = a2 * (sc * d_larmor).re;
        if layout.fit_amplitude {
            jac[(row, layout.n_pop + n_coh + 1)] = s.norm_sqr();
        }
    }
    jac
}

/// Levenberg-Marquardt fit of populations, linewidths and Larmor frequency
/// (and optionally amplitude) to a measured spectrum.
///
/// Populations are projected back onto the simplex after every step. A
/// spectrum with no structure is rejected rather than fitted.
pub fn fit_mors(
    scan_hz: &[f64],
    measured: &[f64],
    initial: &MorsModel,
    options: &FitOptions,
) -> Result<MorsFit> {
    initial.validate()?;
    if scan_hz.len() != measured.len() {
        return Err(Error::invalid(format!(
            "scan has {} points but signal has {}",
            scan_hz.len(),
            measured.len()
        )));
    }
    if measured.iter().chain(scan_hz).any(|v| !v.is_finite()) {
        return Err(Error::invalid("spectrum contains non-finite values"));
    }
    let layout = Layout {
        n_pop: initial.populations.len(),
        n_coh: initial.n_coherences(),
        fit_amplitude: options.fit_amplitude,
    };
    if scan_hz.len() < layout.len() {
        return Err(Error::invalid(format!(
            "need at least {} scan points to fit {} parameters",
            layout.len(),
            layout.len()
        )));
    }
    let hi = measured.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = measured.iter().copied().fold(f64::INFINITY, f64::min);
    if hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE) {
        return Err(Error::FitFailure {
            iterations: 0,
            reason: "signal is flat; it carries no population information".into(),
            best: None,
        });
    }

    let data_scale: f64 = measured.iter().map(|y| y * y).sum();
    let mut model = initial.clone();
    let mut theta = layout.pack(&model);
    let mut r = residuals(&model, scan_hz, measured);
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;

    while iterations < options.max_iterations {
        iterations += 1;
        if cost <= 1e-30 * data_scale {
            break;
        }
        let jac = jacobian(&model, scan_hz, &layout);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let diag = jtj.diagonal().map(|d| d.max(1e-12 * jtj.diagonal().amax()));
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * diag[i];
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut trial = &theta + &step;
            let (pops, rest) = trial.as_mut_slice().split_at_mut(layout.n_pop);
            project_simplex(pops);
            if rest[..layout.n_coh].iter().any(|g| *g <= 0.0) {
                lambda *= 10.0;
                continue;
            }
            let trial_model = layout.unpack(&trial, &model);
            let trial_r = residuals(&trial_model, scan_hz, measured);
            let trial_cost = trial_r.norm_squared();
            if trial_cost.is_finite() && trial_cost < cost {
                let small = (&trial - &theta)
                    .iter()
                    .zip(theta.iter())
                    .all(|(d, t)| d.abs() <= options.x_tolerance * (t.abs() + options.x_tolerance));
                theta = trial;
                model = trial_model;
                r = trial_r;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-15);
                accepted = true;
                if small {
                    return Ok(finish(model, cost, scan_hz.len(), iterations));
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            if iterations == 1 {
                // Equal populations give a zero signal and a zero gradient;
                // nothing can move off such a start.
                return Err(Error::FitFailure {
                    iterations,
                    reason: "initial guess is a stationary point".into(),
                    best: Some(Box::new(finish(model, cost, scan_hz.len(), iterations))),
                });
            }
            // No descent direction left at machine precision.
            return Ok(finish(model, cost, scan_hz.len(), iterations));
        }
    }
    if iterations >= options.max_iterations && cost > 1e-30 * data_scale {
        return Err(Error::FitFailure {
            iterations,
            reason: "iteration limit reached".into(),
            best: Some(Box::new(finish(model, cost, scan_hz.len(), iterations))),
        });
    }
    Ok(finish(model, cost, scan_hz.len(), iterations))
}

fn finish(mut model: MorsModel, cost: f64, n: usize, iterations: usize) -> MorsFit {
    let total: f64 = model.populations.iter().sum();
    for p in &mut model.populations {
        *p /= total;
    }
    MorsFit {
        model,
        residual: cost,
        rms: (cost / n as f64).sqrt(),
        iterations,
    }
}

/// Largest `ω τ` of either RF amplitude for the small-rotation picture.
pub const RF_MAX_ROTATION: f64 = 0.1;
/// Smallest `Ω τ` for the rotating-wave averaging.
pub const RF_MIN_PHASE: f64 = 20.0 * 2.0 * PI;

/// RF pulse with amplitudes given as angular rates (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfPulse {
    pub omega_c: f64,
    pub omega_s: f64,
    /// Drive phase φ (rad).
    pub phase: f64,
    /// Drive angular frequency Ω (rad/s).
    pub drive: f64,
    /// Duration τ (s).
    pub duration: f64,
}

impl RfPulse {
    pub fn resonant(omega_c: f64, omega_s: f64, drive: f64, duration: f64) -> Self {
        RfPulse {
            omega_c,
            omega_s,
            phase: 0.0,
            drive,
            duration,
        }
    }

    fn validate(&self) -> Result<()> {
        let v = [self.omega_c, self.omega_s, self.phase, self.drive, self.duration];
        if v.iter().any(|x| !x.is_finite()) || self.duration < 0.0 {
            return Err(Error::invalid(
                "RF pulse parameters must be finite, duration >= 0",
            ));
        }
        Ok(())
    }

    /// True when `ω τ ≪ 1 ≪ Ω τ` holds with the thresholds above.
    pub fn is_valid_regime(&self) -> bool {
        self.omega_c.abs() * self.duration < RF_MAX_ROTATION
            && self.omega_s.abs() * self.duration < RF_MAX_ROTATION
            && self.drive.abs() * self.duration > RF_MIN_PHASE
    }
}

/// Rotating-frame transverse spin means after a pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpinMeans {
    pub jy: f64,
    pub jz: f64,
    pub jx: f64,
    /// Set when the pulse lies outside the small-rotation, many-cycle regime.
    pub regime_warning: bool,
}

/// Resonant RF steering of the rotating-frame spin:
/// `ΔJ'_y = -(ω_s cos φ - ω_c sin φ) J_x τ / 2`,
/// `ΔJ'_z = -(ω_c cos φ + ω_s sin φ) J_x τ / 2`. `J_x` is untouched.
pub fn rf_steer(jy: f64, jz: f64, pulse: &RfPulse, jx: f64) -> Result<SpinMeans> {
    pulse.validate()?;
    let (s, c) = pulse.phase.sin_cos();
    let half = 0.5 * jx * pulse.duration;
    Ok(SpinMeans {
        jy: jy - (pulse.omega_s * c - pulse.omega_c * s) * half,
        jz: jz - (pulse.omega_c * c + pulse.omega_s * s) * half,
        jx,
        regime_warning: !pulse.is_valid_regime(),
    })
}

/// Simpson intervals per drive or Larmor period.
const SIMPSON_PER_PERIOD: f64 = 64.0;
/// Refuse integrations that would need more intervals than this.
pub const SIMPSON_MAX_INTERVALS: usize = 50_000_000;

/// Steering by a drive at `Ω ≠ Ω_L`, integrated numerically without the
/// rotating-wave average:
/// `dJ'_y/dt = -sin(Ω_L t) ω_y(t) J_x`, `dJ'_z/dt = -cos(Ω_L t) ω_y(t) J_x`,
/// `ω_y(t) = ω_c cos(Ω t + φ) + ω_s sin(Ω t + φ)`.
pub fn rf_offresonant(jy: f64, jz: f64, pulse: &RfPulse, larmor: f64, jx: f64) -> Result<SpinMeans> {
    pulse.validate()?;
    if !larmor.is_finite() {
        return Err(Error::invalid("larmor frequency must be finite"));
    }
    let tau = pulse.duration;
    let fastest = pulse.drive.abs().max(larmor.abs());
    let wanted = (tau * fastest / (2.0 * PI) * SIMPSON_PER_PERIOD)
        .ceil()
        .max(1000.0);
    if wanted > SIMPSON_MAX_INTERVALS as f64 {
        return Err(Error::Integration(format!(
            "pulse needs {wanted:.0} integration steps, limit is {SIMPSON_MAX_INTERVALS}"
        )));
    }
    let n = (wanted as usize + 1) & !1;
    let h = tau / n as f64;
    let (mut dy, mut dz) = (0.0, 0.0);
    for i in 0..=n {
        let t = i as f64 * h;
        let phase = pulse.drive * t + pulse.phase;
        let wy = pulse.omega_c * phase.cos() + pulse.omega_s * phase.sin();
        let (sl, cl) = (larmor * t).sin_cos();
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        dy += w * sl * wy;
        dz += w * cl * wy;
    }
    let scale = -jx * h / 3.0;
    Ok(SpinMeans {
        jy: jy + scale * dy,
        jz: jz + scale * dz,
        jx,
        regime_warning: !pulse.is_valid_regime(),
    })
}
