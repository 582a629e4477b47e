//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use qnd_core::config::RunConfig;
use qnd_core::decoherence::{linewidth_from_t2, t2_from_linewidth};
use qnd_core::decoherence::{
    motion_css_variance, motion_effective_beta, motion_statistics, simulate_journeys,
    thermal_noise_evolution, MotionGeometry,
};
use qnd_core::interface::{
    coupling_coefficients, kappa_squared, kappa_squared_slope, qnd_map, AtomicConstants,
};
use qnd_core::montecarlo::{run_trajectories, run_trajectories_with_threads, Protocol, TrajectoryConfig};
use qnd_core::protocols::entanglement::{
    entangle_conditional, entangle_unconditional, optimal_feedback_gain, Evaluation,
};
use qnd_core::protocols::feedback_map;
use qnd_core::protocols::memory::{classical_fidelity_bound, memory_store, memory_store_closed_form};
use qnd_core::spectroscopy::{fit_mors, mors_spectrum, FitOptions, MorsModel};
use qnd_core::stark::{laser_noise_ratio, magic_angle_deg, stark_line_shift, StarkConfig};
use qnd_core::{GaussianState, ModeLabel, SymplecticMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn within_se(name: &str, est: f64, se: f64, truth: f64) -> Result<(), String> {
    ensure(
        (est - truth).abs() < 3.0 * se,
        format!("{name} = {est:.5} +- {se:.5} is more than 3 SE from {truth}"),
    )
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for ik in 0..=8 {
        let kappa = 0.25 * ik as f64;
        for ib in 0..=10 {
            let beta = 0.1 * ib as f64;
            let pairs = [
                (
                    entangle_conditional(kappa, beta, Evaluation::ClosedForm).map_err(err)?,
                    entangle_conditional(kappa, beta, Evaluation::Engine).map_err(err)?,
                ),
                (
                    entangle_unconditional(
                        kappa,
                        beta,
                        optimal_feedback_gain(kappa, beta),
                        Evaluation::ClosedForm,
                    )
                    .map_err(err)?,
                    entangle_unconditional(
                        kappa,
                        beta,
                        optimal_feedback_gain(kappa, beta),
                        Evaluation::Engine,
                    )
                    .map_err(err)?,
                ),
            ];
            for (c, e) in pairs {
                worst = worst
                    .max((c.alpha_used - e.alpha_used).abs())
                    .max((c.cond_var_sum - e.cond_var_sum).abs())
                    .max((c.var_p_sum - e.var_p_sum).abs())
                    .max((c.first_pulse_var_sum - e.first_pulse_var_sum).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(worst < 1e-9, format!("engine deviates by {worst:e}"))?;
    ensure(elapsed < Duration::from_secs(1), format!("took {elapsed:?}"))?;
    Ok(format!(
        "9x11 kappa x beta grid, max deviation {worst:.1e}, {elapsed:.2?}"
    ))
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let cfg = TrajectoryConfig::entangle(1.0, 1.0, 100_000, 7);
    let stats = run_trajectories(&cfg).map_err(err)?;
    let elapsed = start.elapsed();
    let e = stats.entanglement.ok_or("no entanglement stats")?;
    within_se("Var(A1)", e.var_a1, e.var_a1_se, 1.0)?;
    within_se("alpha", e.alpha_hat, e.alpha_se, 0.5)?;
    within_se("conditional variance sum", e.cond_var_sum, e.cond_var_sum_se, 1.5)?;
    ensure(elapsed < Duration::from_secs(30), format!("took {elapsed:?}"))?;
    Ok(format!(
        "N=1e5 seed 7: Var(A1) {:.4}+-{:.4}, alpha {:.4}+-{:.4}, cond {:.4}+-{:.4}, {elapsed:.2?}",
        e.var_a1, e.var_a1_se, e.alpha_hat, e.alpha_se, e.cond_var_sum, e.cond_var_sum_se
    ))
}

fn criterion_3() -> Check {
    let (a1, a2) = (ModeLabel::atomic(1), ModeLabel::atomic(2));
    let css = GaussianState::vacuum(vec![a1.clone(), a2.clone()]).map_err(err)?;
    let sum = css.variance(&a1.p()).map_err(err)? + css.variance(&a2.p()).map_err(err)?;
    ensure((sum - 1.0).abs() <= 1e-12, format!("CSS sum {sum}"))?;
    let unmeasured = entangle_conditional(0.0, 1.0, Evaluation::Engine).map_err(err)?;
    ensure(
        (unmeasured.var_p_sum - 1.0).abs() <= 1e-12,
        "kappa = 0 leaves the CSS boundary",
    )?;
    ensure(!unmeasured.entangled, "boundary must not count as entangled")?;
    Ok(format!("Var(P_A1)+Var(P_A2) = {sum:.15}"))
}

fn criterion_4() -> Check {
    let beta = 0.619;
    let mut prev: Option<(f64, f64)> = None;
    let mut at_one = 0.0;
    for i in 0..=40 {
        let k2 = 0.05 * i as f64;
        let c = entangle_conditional(k2.sqrt(), beta, Evaluation::ClosedForm).map_err(err)?;
        let e = entangle_conditional(k2.sqrt(), beta, Evaluation::Engine).map_err(err)?;
        ensure(
            (c.cond_var_sum - e.cond_var_sum).abs() < 1e-9,
            format!("engine mismatch at {k2}"),
        )?;
        ensure(
            (c.var_p_sum - e.var_p_sum).abs() < 1e-9,
            format!("engine mismatch at {k2}"),
        )?;
        let ratio = c.cond_var_sum / (1.0 + k2);
        if let Some((pr, pm)) = prev {
            ensure(
                ratio <= pr + 1e-15 && c.duan_margin >= pm - 1e-15,
                format!("not monotone at {k2}"),
            )?;
        }
        prev = Some((ratio, c.duan_margin));
        if i == 20 {
            at_one = c.duan_margin;
        }
    }
    ensure(
        at_one >= 0.19,
        format!("reduction at kappa^2 = 1 is only {at_one:.4}"),
    )?;
    Ok(format!(
        "beta 0.619: reduction {:.2}% at kappa^2 = 1, monotone on [0, 2]",
        100.0 * at_one
    ))
}

fn criterion_5() -> Check {
    let start = Instant::now();
    let (beta, zeta) = (0.61f64, 0.75f64);
    let kappa = 0.836 / beta;
    let g = 0.797 / zeta.sqrt();
    let r = memory_store_closed_form(kappa, g, beta, zeta).map_err(err)?;
    let vacuum = GaussianState::vacuum(vec![ModeLabel::light(1)]).map_err(err)?;
    let (_, engine) = memory_store(&vacuum, kappa, g, beta, zeta).map_err(err)?;
    ensure(
        (r.var_x - 1.70).abs() < 0.01 && (r.var_p - 1.71).abs() < 0.01,
        format!("variances {} {}", r.var_x, r.var_p),
    )?;
    ensure(
        (engine.var_x - r.var_x).abs() < 1e-9 && (engine.var_p - r.var_p).abs() < 1e-9,
        "engine and closed form differ",
    )?;
    let f4 = r.fidelity_at(4.0).map_err(err)?;
    let f2 = r.fidelity_at(2.0).map_err(err)?;
    let (b4, b2) = (
        classical_fidelity_bound(4.0).map_err(err)?,
        classical_fidelity_bound(2.0).map_err(err)?,
    );
    ensure((f4 - 0.667).abs() <= 0.02, format!("F(4) = {f4}"))?;
    ensure((f2 - 0.700).abs() <= 0.025, format!("F(2) = {f2}"))?;
    ensure(f4 > b4 && f2 > b2, "fidelity below the classical bound")?;
    ensure(
        (b4 - 0.556).abs() < 5e-4 && (b2 - 0.6).abs() < 1e-12,
        "classical bounds",
    )?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), format!("took {elapsed:?}"))?;
    Ok(format!(
        "Var = ({:.3}, {:.3}) SNU, F(4) = {:.3} > {:.3}, F(2) = {:.3} > {:.3}, {elapsed:.2?}",
        r.var_x, r.var_p, f4, b4, f2, b2
    ))
}

fn criterion_6() -> Check {
    let cfg = RunConfig::reference();
    let cal = cfg.calibration.ok_or("reference config has no calibration")?;
    let c = AtomicConstants::cesium();
    ensure(
        cal.power_mw == 4.5 && cal.duration_ms == 2.0 && cal.detuning_mhz.abs() == 700.0,
        "reference inputs",
    )?;
    ensure(cal.sigma_sq == 0.0, "reference sigma^2 must be zero")?;
    let slope = kappa_squared_slope(&cal, &c).map_err(err)?;
    ensure((slope - 0.140).abs() < 5e-4, format!("slope {slope}"))?;
    let base = kappa_squared(&cal, &c).map_err(err)?;
    for factor in [2.0, 4.0, 0.5] {
        let scaled = |f: &dyn Fn(&mut qnd_core::interface::PhysicalParams)| {
            let mut p = cal.clone();
            f(&mut p);
            kappa_squared(&p, &c)
        };
        let by_p = scaled(&|p| p.power_mw *= factor).map_err(err)?;
        let by_t = scaled(&|p| p.duration_ms *= factor).map_err(err)?;
        let by_theta = scaled(&|p| p.faraday_angle_deg *= factor).map_err(err)?;
        ensure(
            by_p == factor * base && by_t == factor * base && by_theta == factor * base,
            format!("not exactly linear under x{factor}"),
        )?;
    }
    let a1 = coupling_coefficients(cal.detuning_mhz, &c).map_err(err)?.a1;
    Ok(format!(
        "slope {slope:.4}/deg with A_cell = {} cm^2, a1 = {a1:.4}; linear in P, T, theta_F",
        cal.cell_area_cm2
    ))
}

fn criterion_7() -> Check {
    let start = thermal_noise_evolution(0.0, 1.0).map_err(err)?;
    let end = thermal_noise_evolution(1e6, 1.0).map_err(err)?;
    let ratio = end / start;
    ensure(ratio == 15.0 / 8.0, format!("ratio {ratio}"))?;
    ensure(
        (2.05f64 - ratio).abs() < 2.0 * 0.09,
        "outside two standard errors of the measurement",
    )?;
    Ok(format!("final/initial = {ratio} (measured 2.05 +- 0.09)"))
}

fn criterion_8() -> Check {
    let geom = |t: f64| MotionGeometry {
        beam_area_cm2: 2.0,
        cell_area_cm2: 9.0,
        cell_length_cm: 3.0,
        rms_speed: 13.7,
        duration_ms: t,
    };
    let base = motion_statistics(&geom(1.0)).map_err(err)?.sigma_sq;
    for t in [0.25, 0.5, 2.0, 3.0, 7.5] {
        let s = motion_statistics(&geom(t)).map_err(err)?.sigma_sq;
        ensure(
            ((s * t - base) / base).abs() < 1e-12,
            format!("sigma^2 T drifts at T = {t}"),
        )?;
    }
    let g = geom(1.0);
    let p = g.beam_area_cm2 / g.cell_area_cm2;
    let n = g.journeys();
    let est = simulate_journeys(p, n, 10_000, 3).map_err(err)?;
    let expect = (1.0 - p) / (n as f64 * p);
    within_se("simulated sigma^2", est.sigma_sq, est.sigma_sq_se, expect)?;
    for s2 in [0.0, 0.1, 0.44, 0.77, 2.0] {
        let beta = motion_effective_beta(s2).map_err(err)?;
        let (j, pp) = (1e12, 0.3);
        let var = motion_css_variance(j, pp, s2).map_err(err)?;
        // Variance of the difference of two cells' projections sheds the
        // motional excess exactly when weighted by beta.
        let lhs = 2.0 * var * beta;
        let rhs = j * pp * pp;
        ensure(
            ((lhs - rhs) / rhs).abs() < 1e-12,
            format!("beta identity fails at sigma^2 = {s2}"),
        )?;
    }
    let reference = RunConfig::reference().motion.ok_or("no motion section")?;
    let s_ref = motion_statistics(&reference.geometry()).map_err(err)?.sigma_sq;
    ensure(
        (s_ref - 0.44).abs() < 0.005,
        format!("effective-area sigma^2 = {s_ref}"),
    )?;
    Ok(format!(
        "sigma^2 T constant; walkers {:.4}+-{:.4} vs {expect:.4}; 0.44 reproduced only with A_cell = {} cm^2 (9 cm^2 gives {base:.2})",
        est.sigma_sq, est.sigma_sq_se, reference.cell_area_cm2
    ))
}

fn count_peaks(signal: &[f64]) -> usize {
    let max = signal.iter().copied().fold(0.0, f64::max);
    signal
        .windows(3)
        .filter(|w| w[1] > w[0] && w[1] >= w[2] && w[1] > 1e-6 * max)
        .count()
}

fn criterion_9() -> Check {
    let larmor = 322_000.0;
    let truth = MorsModel {
        f: 4,
        populations: vec![0.01, 0.015, 0.02, 0.03, 0.05, 0.08, 0.12, 0.22, 0.455],
        linewidths_hz: vec![10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 16.0, 17.0],
        larmor_hz: larmor,
        qz_splitting_hz: 22.6,
        amplitude: 1.0,
    };
    let scan: Vec<f64> = (0..1200).map(|i| larmor - 150.0 + 0.25 * i as f64).collect();
    let data = mors_spectrum(&truth, &scan).map_err(err)?;
    let mut start = truth.clone();
    start.populations = vec![0.02, 0.02, 0.03, 0.04, 0.06, 0.09, 0.13, 0.2, 0.41];
    start.linewidths_hz = vec![12.0; 8];
    start.larmor_hz += 1.5;
    let fit = fit_mors(&scan, &data, &start, &FitOptions::default()).map_err(err)?;
    let mut worst = 0.0f64;
    for (a, b) in fit
        .model
        .populations
        .iter()
        .zip(&truth.populations)
        .chain(fit.model.linewidths_hz.iter().zip(&truth.linewidths_hz))
    {
        worst = worst.max(((a - b) / b).abs());
    }
    ensure(worst < 1e-6, format!("round trip relative error {worst:e}"))?;

    let pumped = MorsModel::fully_pumped(4, 12.0, larmor, 22.6).map_err(err)?;
    let peaks = count_peaks(&mors_spectrum(&pumped, &scan).map_err(err)?);
    ensure(peaks == 1, format!("fully pumped spectrum has {peaks} peaks"))?;

    let gamma = linewidth_from_t2(27.0).map_err(err)?;
    ensure((gamma - 11.79).abs() < 0.005, format!("Gamma(27 ms) = {gamma}"))?;
    ensure(
        (t2_from_linewidth(gamma).map_err(err)? - 27.0).abs() < 1e-12,
        "T2 round trip",
    )?;
    Ok(format!(
        "round trip {worst:.1e} relative, fully pumped: 1 peak, T2 = 27 ms <-> {gamma:.2} Hz"
    ))
}

fn criterion_10() -> Check {
    let c = AtomicConstants::cesium();
    let cfg = |angle: f64, m: i32| StarkConfig {
        polarization_angle_deg: angle,
        photon_flux: 2e16,
        beam_area_cm2: 2.0,
        detuning_mhz: -700.0,
        f: 4,
        m,
    };
    let shift = |angle: f64| stark_line_shift(&cfg(angle, 3), &c).map_err(err);
    let (mut lo, mut hi) = (40.0, 70.0);
    let s_lo = shift(lo)?;
    ensure(s_lo * shift(hi)? < 0.0, "no sign change on [40, 70] degrees")?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if shift(mid)? * s_lo > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let crossing = 0.5 * (lo + hi);
    let exact = (-1.0f64 / 3.0).acos().to_degrees() / 2.0;
    ensure((crossing - exact).abs() < 1e-6, format!("crossing at {crossing}"))?;
    ensure((magic_angle_deg() - exact).abs() < 1e-12, "magic angle constant")?;
    ensure(
        format!("{crossing:.4}") == "54.7356",
        format!("crossing {crossing} does not round to 54.7356"),
    )?;

    for angle in [0.0, 20.0, 80.0] {
        let outer_hi = stark_line_shift(&cfg(angle, 3), &c).map_err(err)?;
        let outer_lo = stark_line_shift(&cfg(angle, -4), &c).map_err(err)?;
        let inner = stark_line_shift(&cfg(angle, 0), &c).map_err(err)?;
        ensure(
            ((outer_hi + outer_lo) / outer_hi).abs() < 1e-12,
            "outer lines not antisymmetric",
        )?;
        ensure(
            ((outer_hi / inner) - 7.0).abs() < 1e-12,
            "outer/inner ratio is not 7",
        )?;
    }
    let ratio = laser_noise_ratio(4, 1.0, 0.01, 1.0).map_err(err)?;
    ensure((ratio - 0.0196).abs() < 1e-12, format!("noise ratio {ratio}"))?;
    Ok(format!(
        "zero crossing {crossing:.9} deg, outer lines +-7, noise ratio {ratio:.4}"
    ))
}

/// Applies `ops` random Gaussian operations to a two-cell state, checking
/// physicality after each one. Returns the smallest symplectic eigenvalue
/// and Heisenberg product seen.
fn random_sequence(seed: u64, ops: usize) -> Result<(f64, f64), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atoms = [ModeLabel::atomic(1), ModeLabel::atomic(2)];
    let lights = [ModeLabel::light(1), ModeLabel::light(2)];
    let mut modes = atoms.to_vec();
    modes.extend(lights.iter().cloned());
    let mut state = GaussianState::vacuum(modes).map_err(err)?;
    let (mut min_eig, mut min_product) = (f64::INFINITY, f64::INFINITY);
    for step in 0..ops {
        let a = &atoms[rng.random_range(0..2)];
        let l = &lights[rng.random_range(0..2)];
        let mode = if rng.random_bool(0.5) { a } else { l };
        state = match rng.random_range(0..7) {
            0 => state.apply_symplectic(
                &SymplecticMap::rotation(mode.clone(), rng.random_range(0.0..2.0 * PI)).map_err(err)?,
            ),
            1 => state.apply_symplectic(
                &SymplecticMap::squeezer(mode.clone(), rng.random_range(-0.3f64..0.3).exp()).map_err(err)?,
            ),
            2 => state.apply_symplectic(&qnd_map(rng.random_range(0.0..1.5), a, l).map_err(err)?),
            3 => state.apply_symplectic(&feedback_map(rng.random_range(-1.0..1.0), a, l).map_err(err)?),
            4 => state.attenuate(mode, rng.random_range(0.3..1.0)),
            5 => state.displace(&mode.x(), rng.random_range(-2.0..2.0)),
            _ => {
                // Measure a light quadrature and replace the mode by vacuum.
                let q = if rng.random_bool(0.5) { l.x() } else { l.p() };
                let outcome = rng.random_range(-3.0..3.0);
                state
                    .homodyne_condition(&q, outcome)
                    .and_then(|s| s.with_vacuum_mode(l.clone()))
            }
        }
        .map_err(|e| format!("step {step}: {e}"))?;
        let eig = state
            .symplectic_eigenvalues()
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        min_eig = min_eig.min(eig);
        ensure(
            eig >= 0.5 - 1e-9,
            format!("step {step}: symplectic eigenvalue {eig}"),
        )?;
        for m in state.modes().to_vec() {
            let product = state.variance(&m.x()).map_err(err)? * state.variance(&m.p()).map_err(err)?;
            min_product = min_product.min(product);
            ensure(
                product >= 0.25 - 1e-9,
                format!("step {step}: Var X Var P = {product}"),
            )?;
        }
        state.check_physical().map_err(|e| format!("step {step}: {e}"))?;
    }
    Ok((min_eig, min_product))
}

fn criterion_11() -> Check {
    let mut min_eig = f64::INFINITY;
    let mut min_product = f64::INFINITY;
    for seed in 0..3 {
        let (e, p) = random_sequence(seed, 10_000)?;
        min_eig = min_eig.min(e);
        min_product = min_product.min(p);
    }
    let mut ent = TrajectoryConfig::entangle(1.0, 0.8, 20_000, 42);
    ent.protocol = Protocol::EntangleFeedback;
    ent.feedback_gain = 0.3;
    let mem = TrajectoryConfig {
        n_runs: 20_000,
        seed: 42,
        protocol: Protocol::Memory,
        kappa: 1.370492,
        beta: 0.61,
        zeta: 0.75,
        feedback_gain: 0.920296,
        n0: 4.0,
        readout_kappa: 1.0,
    };
    for cfg in [TrajectoryConfig::entangle(1.0, 1.0, 20_000, 42), ent, mem] {
        let one = run_trajectories_with_threads(&cfg, 1).map_err(err)?;
        for threads in [2, 8] {
            let other = run_trajectories_with_threads(&cfg, threads).map_err(err)?;
            ensure(
                one == other,
                format!("{:?} differs with {threads} threads", cfg.protocol),
            )?;
        }
    }
    Ok(format!(
        "3 x 1e4 random operations: min symplectic eigenvalue {min_eig:.12}, min Var X Var P {min_product:.12}; identical results on 1/2/8 threads"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("closed form vs engine", criterion_1),
        ("Monte Carlo oracle", criterion_2),
        ("Duan boundary", criterion_3),
        ("decohered entanglement", criterion_4),
        ("memory fidelity chain", criterion_5),
        ("calibration", criterion_6),
        ("thermal noise", criterion_7),
        ("atomic motion", criterion_8),
        ("MORS", criterion_9),
        ("Stark", criterion_10),
        ("property suite", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
