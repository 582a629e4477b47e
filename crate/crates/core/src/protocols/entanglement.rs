//! Two-ensemble entanglement by QND measurement, conditional and with
//! feedback.
//!
//! Variances of summed pairs are quoted so that the shot noise of the two
//! light pulses together is one: the canonical sum over both pairs is already
//! in those units.

use serde::Serialize;

use crate::decoherence::{admix_vacuum, check_unit_interval};
use crate::error::{Error, Result};
use crate::gaussian::{GaussianState, ModeLabel, DEGENERATE_VARIANCE};
use crate::interface::qnd_map;

use super::feedback_map;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Evaluation {
    ClosedForm,
    Engine,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntanglementReport {
    pub kappa_sq: f64,
    pub beta: f64,
    /// Prediction coefficient `α` for the second pulse from the first.
    pub alpha_used: f64,
    /// `Var(A₁) + Var(B₁)` of the first pulse.
    pub first_pulse_var_sum: f64,
    /// `Var(A₂|A₁) + Var(B₂|B₁)` (or the feedback second-pulse variance).
    pub cond_var_sum: f64,
    /// Same, in units of the pair's shot noise.
    pub cond_var_sum_snu: f64,
    /// Inferred `Var(P_A1) + Var(P_A2)` of the entangled atoms.
    pub var_p_sum: f64,
    /// `1 - Var(P_A1) - Var(P_A2)`; positive means entangled.
    pub duan_margin: f64,
    pub entangled: bool,
    pub feedback_gain: Option<f64>,
}

fn check_inputs(kappa: f64, beta: f64) -> Result<()> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::invalid(format!(
            "kappa must be finite and >= 0, got {kappa}"
        )));
    }
    check_unit_interval("beta", beta)
}

/// Shot noise of two light pulses in canonical units.
const PAIR_SHOT_NOISE: f64 = 1.0;

/// `α = β κ² / (1 + κ²)`.
pub fn optimal_alpha(kappa: f64, beta: f64) -> f64 {
    let k2 = kappa * kappa;
    beta * k2 / (1.0 + k2)
}

/// Closed-form `Var(A₂|A₁) + Var(B₂|B₁) = 1 + κ²(1 + (1-β²)κ²)/(1+κ²)`.
pub fn conditional_variance_sum(kappa: f64, beta: f64) -> f64 {
    let k2 = kappa * kappa;
    1.0 + k2 * (1.0 + (1.0 - beta * beta) * k2) / (1.0 + k2)
}

/// Closed-form `Var(P_A1) + Var(P_A2) = (1 + (1-β²)κ²)/(1+κ²)`.
pub fn atomic_variance_sum(kappa: f64, beta: f64) -> f64 {
    let k2 = kappa * kappa;
    (1.0 + (1.0 - beta * beta) * k2) / (1.0 + k2)
}

/// Second-pulse variance sum when the first outcome is fed back with gain
/// `g`: `cond + (α - g κ)² (1 + κ²)`.
pub fn feedback_variance_sum(kappa: f64, beta: f64, gain: f64) -> f64 {
    let k2 = kappa * kappa;
    let miss = optimal_alpha(kappa, beta) - gain * kappa;
    conditional_variance_sum(kappa, beta) + miss * miss * (1.0 + k2)
}

/// Atomic `Var(P_A1) + Var(P_A2)` after feedback with gain `g`:
/// `(β - g κ)² + 1 - β² + g²`.
pub fn feedback_atomic_variance_sum(kappa: f64, beta: f64, gain: f64) -> f64 {
    (beta - gain * kappa).powi(2) + 1.0 - beta * beta + gain * gain
}

/// Feedback gain that cancels the conditional mean, `α / κ`.
pub fn optimal_feedback_gain(kappa: f64, beta: f64) -> f64 {
    if kappa == 0.0 {
        0.0
    } else {
        optimal_alpha(kappa, beta) / kappa
    }
}

fn report(
    kappa: f64,
    beta: f64,
    alpha: f64,
    cond_var_sum: f64,
    var_p_sum: f64,
    feedback_gain: Option<f64>,
) -> EntanglementReport {
    let duan_margin = 1.0 - var_p_sum;
    EntanglementReport {
        kappa_sq: kappa * kappa,
        beta,
        alpha_used: alpha,
        first_pulse_var_sum: 1.0 + kappa * kappa,
        cond_var_sum,
        cond_var_sum_snu: cond_var_sum / PAIR_SHOT_NOISE,
        var_p_sum,
        duan_margin,
        entangled: var_p_sum < 1.0,
        feedback_gain,
    }
}

struct Pair {
    atom: ModeLabel,
    first: ModeLabel,
    second: ModeLabel,
}

fn pairs() -> [Pair; 2] {
    [1u8, 2].map(|i| Pair {
        atom: ModeLabel::atomic(i),
        first: ModeLabel::light(2 * i - 1),
        second: ModeLabel::light(2 * i),
    })
}

/// Entangling pulse on both pairs; returns the joint state of atoms and
/// first-pulse light.
fn first_pulse(kappa: f64) -> Result<GaussianState> {
    let ps = pairs();
    let mut state = GaussianState::vacuum(
        ps.iter()
            .flat_map(|p| [p.atom.clone(), p.first.clone()])
            .collect(),
    )?;
    for p in &ps {
        state = state.apply_symplectic(&qnd_map(kappa, &p.atom, &p.first)?)?;
    }
    Ok(state)
}

/// Verifying pulse on already-entangled atoms; returns the summed variance
/// of the two second-pulse `X_L` and of the two atomic `P`.
fn verify(mut state: GaussianState, kappa: f64) -> Result<(GaussianState, f64, f64)> {
    let mut var_p = 0.0;
    for p in pairs() {
        var_p += state.variance(&p.atom.p())?;
        state = state
            .with_vacuum_mode(p.second.clone())?
            .apply_symplectic(&qnd_map(kappa, &p.atom, &p.second)?)?;
    }
    let var_x = pairs()
        .iter()
        .map(|p| state.variance(&p.second.x()))
        .sum::<Result<f64>>()?;
    Ok((state, var_x, var_p))
}

/// Conditional entanglement: measure, decay between pulses, verify.
pub fn entangle_conditional(kappa: f64, beta: f64, mode: Evaluation) -> Result<EntanglementReport> {
    check_inputs(kappa, beta)?;
    match mode {
        Evaluation::ClosedForm => Ok(report(
            kappa,
            beta,
            optimal_alpha(kappa, beta),
            conditional_variance_sum(kappa, beta),
            atomic_variance_sum(kappa, beta),
            None,
        )),
        Evaluation::Engine => {
            let mut state = first_pulse(kappa)?;
            // A unit first outcome shows up as α in the predicted second
            // outcome, which is how the engine reads off α.
            for p in pairs() {
                state = state.homodyne_condition(&p.first.x(), 1.0)?;
                state = admix_vacuum(&state, &p.atom, beta)?;
            }
            let (state, cond, var_p) = verify(state, kappa)?;
            let alpha = state.mean_of(&pairs()[0].second.x())?;
            Ok(report(kappa, beta, alpha, cond, var_p, None))
        }
    }
}

/// Unconditional entanglement: the first outcome is fed back onto the
/// atomic `P` (after the decay step) as `P_A -= g X_L`.
pub fn entangle_unconditional(
    kappa: f64,
    beta: f64,
    feedback_gain: f64,
    mode: Evaluation,
) -> Result<EntanglementReport> {
    check_inputs(kappa, beta)?;
    if !feedback_gain.is_finite() {
        return Err(Error::invalid("feedback gain must be finite"));
    }
    let alpha = optimal_alpha(kappa, beta);
    match mode {
        Evaluation::ClosedForm => Ok(report(
            kappa,
            beta,
            alpha,
            feedback_variance_sum(kappa, beta, feedback_gain),
            feedback_atomic_variance_sum(kappa, beta, feedback_gain),
            Some(feedback_gain),
        )),
        Evaluation::Engine => {
            let mut state = first_pulse(kappa)?;
            for p in pairs() {
                state = admix_vacuum(&state, &p.atom, beta)?;
                state = state
                    .apply_symplectic(&feedback_map(feedback_gain, &p.atom, &p.first)?)?
                    .trace_out(&p.first)?;
            }
            let (_, second, var_p) = verify(state, kappa)?;
            Ok(report(kappa, beta, alpha, second, var_p, Some(feedback_gain)))
        }
    }
}

/// Second-pulse variance sum for each gain of a scan.
pub fn feedback_gain_scan(kappa: f64, beta: f64, gains: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_inputs(kappa, beta)?;
    Ok(gains
        .iter()
        .map(|&g| (g, feedback_variance_sum(kappa, beta, g)))
        .collect())
}

/// Displacement applied to the atomic `P` mean for a measured outcome.
pub fn feedback_displacement(outcome: f64, gain: f64) -> f64 {
    -gain * outcome
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionalEstimate {
    pub alpha: f64,
    pub cond_var: f64,
}

/// Least-squares prediction of second outcomes from first ones,
/// `min_α Σ (y - α x)² / (N - 1)`.
///
/// Outcomes have zero mean by construction, so the fit has no intercept.
pub fn minimize_conditional_variance(first: &[f64], second: &[f64]) -> Result<ConditionalEstimate> {
    minimize_conditional_variance_paired(&[(first, second)])
}

/// Joint estimate over several `(first, second)` series sharing one `α`,
/// e.g. the `A` and `B` outcomes of two cells. `cond_var` is the sum over
/// series.
pub fn minimize_conditional_variance_paired(series: &[(&[f64], &[f64])]) -> Result<ConditionalEstimate> {
    let n = series.first().map(|s| s.0.len()).unwrap_or(0);
    if n < 2 {
        return Err(Error::invalid("need at least two outcomes"));
    }
    for (a, b) in series {
        if a.len() != n || b.len() != n {
            return Err(Error::invalid("outcome series differ in length"));
        }
    }
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (a, b) in series {
        for (x, y) in a.iter().zip(b.iter()) {
            sxy += x * y;
            sxx += x * x;
        }
    }
    let var_first = sxx / (n as f64 - 1.0);
    if !(var_first > DEGENERATE_VARIANCE) {
        return Err(Error::DegenerateMeasurement {
            variance: var_first,
            tolerance: DEGENERATE_VARIANCE,
        });
    }
    let alpha = sxy / sxx;
    let mut ss = 0.0;
    for (a, b) in series {
        for (x, y) in a.iter().zip(b.iter()) {
            ss += (y - alpha * x).powi(2);
        }
    }
    Ok(ConditionalEstimate {
        alpha,
        cond_var: ss / (n as f64 - 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    const KAPPAS: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 5.0];
    const BETAS: [f64; 4] = [0.0, 0.5, 0.619, 1.0];

    #[test]
    fn ideal_unit_coupling() {
        let r = entangle_conditional(1.0, 1.0, Evaluation::ClosedForm).unwrap();
        assert_eq!(r.cond_var_sum, 1.5);
        assert_eq!(r.var_p_sum, 0.5);
        assert_eq!(r.alpha_used, 0.5);
        assert_eq!(r.first_pulse_var_sum, 2.0);
        assert!(r.entangled);
    }

    #[test]
    fn engine_matches_closed_form() {
        for k in KAPPAS {
            for b in BETAS {
                let c = entangle_conditional(k, b, Evaluation::ClosedForm).unwrap();
                let e = entangle_conditional(k, b, Evaluation::Engine).unwrap();
                assert_abs_diff_eq!(c.cond_var_sum, e.cond_var_sum, epsilon = 1e-9);
                assert_abs_diff_eq!(c.var_p_sum, e.var_p_sum, epsilon = 1e-9);
                assert_abs_diff_eq!(c.alpha_used, e.alpha_used, epsilon = 1e-9);
                for g in [0.0, 0.3, optimal_feedback_gain(k, b), 1.2] {
                    let c = entangle_unconditional(k, b, g, Evaluation::ClosedForm).unwrap();
                    let e = entangle_unconditional(k, b, g, Evaluation::Engine).unwrap();
                    assert_abs_diff_eq!(c.cond_var_sum, e.cond_var_sum, epsilon = 1e-9);
                    assert_abs_diff_eq!(c.var_p_sum, e.var_p_sum, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn full_decay_is_separable() {
        let r = entangle_conditional(1.3, 0.0, Evaluation::Engine).unwrap();
        assert_eq!(r.alpha_used, 0.0);
        assert_abs_diff_eq!(r.duan_margin, 0.0, epsilon = 1e-15);
        assert!(!r.entangled);
    }

    #[test]
    fn no_coupling_no_information() {
        let r = entangle_conditional(0.0, 0.8, Evaluation::Engine).unwrap();
        assert_abs_diff_eq!(r.cond_var_sum, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.alpha_used, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn any_coupling_entangles_without_decay() {
        let mut last = 0.0;
        for k in [1e-3, 0.01, 0.1, 0.5, 1.0, 3.0, 10.0] {
            let r = entangle_conditional(k, 1.0, Evaluation::ClosedForm).unwrap();
            assert!(r.var_p_sum < 1.0);
            assert!(r.duan_margin > last);
            last = r.duan_margin;
        }
    }

    #[test]
    fn conditioning_keeps_minimum_uncertainty() {
        for k in KAPPAS {
            let mut s = first_pulse(k).unwrap();
            for p in pairs() {
                s = s.homodyne_condition(&p.first.x(), 0.4).unwrap();
            }
            let a = ModeLabel::atomic(1);
            let prod = s.variance(&a.x()).unwrap() * s.variance(&a.p()).unwrap();
            assert_relative_eq!(prod, 0.25, max_relative = 1e-12);
        }
    }

    #[test]
    fn fitted_decay_reaches_observed_reduction() {
        let r = entangle_conditional(1.0, 0.619, Evaluation::ClosedForm).unwrap();
        assert!(r.duan_margin > 0.19, "{}", r.duan_margin);
    }

    #[test]
    fn feedback_gain_limits() {
        for k in KAPPAS {
            for b in BETAS {
                let cond = conditional_variance_sum(k, b);
                let best = feedback_variance_sum(k, b, optimal_feedback_gain(k, b));
                assert_relative_eq!(best, cond, max_relative = 1e-14);
                assert_relative_eq!(
                    feedback_variance_sum(k, b, 0.0),
                    1.0 + k * k,
                    max_relative = 1e-14
                );
            }
        }
        let scan = feedback_gain_scan(1.0, 0.619, &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let min = scan.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        assert!(min >= conditional_variance_sum(1.0, 0.619) - 1e-15);
    }

    #[test]
    fn optimal_feedback_zeroes_the_conditional_mean() {
        let (k, b) = (1.4, 0.7);
        let (a, l) = (ModeLabel::atomic(1), ModeLabel::light(1));
        let outcome = 0.83;
        let s = GaussianState::vacuum(vec![a.clone(), l.clone()])
            .unwrap()
            .apply_symplectic(&qnd_map(k, &a, &l).unwrap())
            .unwrap()
            .homodyne_condition(&l.x(), outcome)
            .unwrap();
        let s = admix_vacuum(&s, &a, b).unwrap();
        let kick = feedback_displacement(outcome, optimal_feedback_gain(k, b));
        let s = s.displace(&a.p(), kick).unwrap();
        assert_abs_diff_eq!(s.mean_of(&a.p()).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn conditional_estimator_basics() {
        let x = [1.0, -2.0, 0.5, 3.0];
        let e = minimize_conditional_variance(&x, &x).unwrap();
        assert_eq!(e.alpha, 1.0);
        assert_eq!(e.cond_var, 0.0);
        let y = [0.5, -1.0, 0.25, 1.5];
        assert_relative_eq!(minimize_conditional_variance(&x, &y).unwrap().alpha, 0.5);
        assert!(matches!(
            minimize_conditional_variance(&[0.0, 0.0], &[1.0, 2.0]),
            Err(Error::DegenerateMeasurement { .. })
        ));
        assert!(minimize_conditional_variance(&[1.0], &[1.0]).is_err());
        assert!(minimize_conditional_variance(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn paired_estimator_pools_both_cells() {
        let a1 = [1.0, 2.0, -1.0];
        let a2 = [0.5, 1.0, -0.5];
        let b1 = [2.0, -1.0, 1.0];
        let b2 = [1.0, -0.5, 0.5];
        let e = minimize_conditional_variance_paired(&[(&a1, &a2), (&b1, &b2)]).unwrap();
        assert_relative_eq!(e.alpha, 0.5);
        assert_abs_diff_eq!(e.cond_var, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn invalid_inputs() {
        assert!(entangle_conditional(-1.0, 1.0, Evaluation::ClosedForm).is_err());
        assert!(entangle_conditional(1.0, 1.5, Evaluation::Engine).is_err());
        assert!(entangle_unconditional(1.0, 1.0, f64::NAN, Evaluation::Engine).is_err());
    }
}
