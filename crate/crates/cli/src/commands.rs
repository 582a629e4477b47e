use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use qnd_core::config::RunConfig;
use qnd_core::csvio;
use qnd_core::decoherence::{
    linewidth, motion_effective_beta, motion_statistics_scaled, simulate_journeys, t2_from_linewidth,
};
use qnd_core::grid::parse_grid;
use qnd_core::interface::{
    coupling_coefficients, kappa_squared, kappa_squared_slope, AtomicConstants, PhysicalParams,
};
use qnd_core::montecarlo::{run_trajectories, with_threads, Protocol, TrajectoryConfig, TrajectoryStats};
use qnd_core::protocols::entanglement::{
    entangle_conditional, entangle_unconditional, optimal_feedback_gain, EntanglementReport, Evaluation,
};
use qnd_core::protocols::memory::{
    classical_fidelity_bound, memory_store, memory_store_closed_form, optimize_feedback_gain, MemoryReport,
};
use qnd_core::report::Report;
use qnd_core::spectroscopy::{
    fit_mors, mors_spectrum, qz_splitting, scan_is_adiabatic, FitOptions, MorsFit, MorsModel, QzFormula,
};
use qnd_core::stark::{
    compensation_bias_field, laser_noise_ratio, magic_angle_deg, stark_line_shift, StarkConfig,
};
use qnd_core::{GaussianState, ModeLabel};
use serde_json::{json, Value};

use crate::output::{read_file, Failure, Outputs};
use crate::{CalibrateArgs, Context, EntangleArgs, MemoryArgs, MorsArgs, QzArg, StarkArgs};

const DEFAULT_RUNS: usize = 10_000;
const DEFAULT_SEED: u64 = 1;

type CmdResult = Result<(), Failure>;

fn pick<T: Clone>(flag: Option<T>, config: Option<T>, flag_name: &str, key: &str) -> Result<T, Failure> {
    flag.or(config).ok_or_else(|| Failure::missing(flag_name, key))
}

fn grid(spec: &str) -> Result<Vec<f64>, Failure> {
    parse_grid(spec).map_err(|e| Failure::config(e.to_string()))
}

fn constants(path: Option<&Path>) -> Result<AtomicConstants, Failure> {
    match path {
        Some(p) => Ok(AtomicConstants::from_toml_str(&read_file(p)?)?),
        None => Ok(AtomicConstants::cesium()),
    }
}

fn mc_settings(ctx: &Context, runs: Option<usize>) -> Result<(usize, u64), Failure> {
    let section = ctx.config.montecarlo;
    let runs = runs.or(section.map(|s| s.runs)).unwrap_or(DEFAULT_RUNS);
    if runs < 2 {
        return Err(Failure::config("--runs must be at least 2"));
    }
    let seed = ctx.seed.or(section.map(|s| s.seed)).unwrap_or(DEFAULT_SEED);
    Ok((runs, seed))
}

/// Writes the staged files, then the human summary. A closed stdout is not
/// an error: the files are the product.
fn finish(ctx: &Context, out: Outputs, summary: &str) -> CmdResult {
    let written = out.commit(&ctx.out_dir)?;
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(summary.as_bytes());
    for path in written {
        let _ = writeln!(stdout, "wrote {}", path.display());
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EntangleSweep {
    KappaSq,
    ThetaF,
    Beta,
    FeedbackGain,
}

impl EntangleSweep {
    fn parse(s: &str) -> Result<Self, Failure> {
        match s {
            "kappa_sq" => Ok(EntangleSweep::KappaSq),
            "theta_F" | "theta_f" => Ok(EntangleSweep::ThetaF),
            "beta" => Ok(EntangleSweep::Beta),
            "feedback_gain" => Ok(EntangleSweep::FeedbackGain),
            _ => Err(Failure::config(format!(
                "unknown sweep parameter '{s}' (expected kappa_sq, theta_F, beta or feedback_gain)"
            ))),
        }
    }

    fn column(self) -> &'static str {
        match self {
            EntangleSweep::KappaSq => "kappa_sq",
            EntangleSweep::ThetaF => "theta_F_deg",
            EntangleSweep::Beta => "beta",
            EntangleSweep::FeedbackGain => "feedback_gain",
        }
    }
}

/// One point of the entanglement protocol in the requested evaluation.
struct EntanglePoint {
    closed: EntanglementReport,
    engine: EntanglementReport,
    mc: Option<TrajectoryStats>,
}

fn entangle_point(
    kappa_sq: f64,
    beta: f64,
    gain: Option<f64>,
    mc: Option<(usize, u64)>,
) -> Result<EntanglePoint, Failure> {
    if !(kappa_sq >= 0.0 && kappa_sq.is_finite()) {
        return Err(Failure::config(format!(
            "kappa_sq must be finite and >= 0, got {kappa_sq}"
        )));
    }
    let kappa = kappa_sq.sqrt();
    let eval = |mode| match gain {
        Some(g) => entangle_unconditional(kappa, beta, g, mode),
        None => entangle_conditional(kappa, beta, mode),
    };
    let closed = eval(Evaluation::ClosedForm)?;
    let engine = eval(Evaluation::Engine)?;
    let mc = match mc {
        Some((runs, seed)) => {
            let mut cfg = TrajectoryConfig::entangle(kappa, beta, runs, seed);
            if let Some(g) = gain {
                cfg.protocol = Protocol::EntangleFeedback;
                cfg.feedback_gain = g;
            }
            cfg.validate()?;
            Some(run_trajectories(&cfg)?)
        }
        None => None,
    };
    Ok(EntanglePoint { closed, engine, mc })
}

/// Second-pulse variance sum measured in a run and its standard error.
fn mc_second_pulse(stats: &TrajectoryStats) -> (f64, f64, f64, f64) {
    let e = stats.entanglement.as_ref().expect("entanglement run");
    let n = stats.n_runs as f64;
    match stats.protocol {
        Protocol::EntangleFeedback => {
            let v = e.second_pulse_var_sum;
            (v, v * (1.0 / (n - 1.0)).sqrt(), e.alpha_hat, e.alpha_se)
        }
        _ => (e.cond_var_sum, e.cond_var_sum_se, e.alpha_hat, e.alpha_se),
    }
}

pub fn entangle(ctx: &Context, a: &EntangleArgs) -> CmdResult {
    let section = ctx.config.entanglement;
    let sweep = a.sweep.as_deref().map(EntangleSweep::parse).transpose()?;
    let values = a.grid.as_deref().map(grid).transpose()?;
    let mut warnings = Vec::new();

    let needs_kappa = !matches!(sweep, Some(EntangleSweep::KappaSq | EntangleSweep::ThetaF));
    let kappa_sq = if needs_kappa {
        Some(pick(
            a.kappa_sq,
            section.map(|s| s.kappa_sq),
            "--kappa-sq",
            "entanglement.kappa_sq",
        )?)
    } else {
        a.kappa_sq.or(section.map(|s| s.kappa_sq))
    };
    let beta = match (a.beta.or(section.map(|s| s.beta)), sweep) {
        (Some(b), _) => Some(b),
        (None, Some(EntangleSweep::Beta)) => None,
        (None, Some(EntangleSweep::ThetaF)) => {
            // A Faraday-angle scan reproduces the measured data set, so it
            // falls back to the fitted retention of the reference run.
            let b = RunConfig::reference()
                .entanglement
                .map(|s| s.beta)
                .expect("reference beta");
            warnings.push(format!("beta not given; using the reference value {b}"));
            Some(b)
        }
        (None, _) => return Err(Failure::missing("--beta", "entanglement.beta")),
    };
    let slope = if sweep == Some(EntangleSweep::ThetaF) {
        let cal = match &ctx.config.calibration {
            Some(c) => c.clone(),
            None => {
                warnings.push("no [calibration] section; using the reference calibration".into());
                RunConfig::reference().calibration.expect("reference calibration")
            }
        };
        Some(kappa_squared_slope(&cal, &AtomicConstants::cesium())?)
    } else {
        None
    };

    let feedback_mode = a.feedback_gain.is_some()
        || a.optimal_feedback
        || sweep == Some(EntangleSweep::FeedbackGain)
        || section.and_then(|s| s.feedback_gain).is_some();
    let gain_for = |kappa_sq: f64, beta: f64| -> Option<f64> {
        if !feedback_mode {
            return None;
        }
        if a.optimal_feedback {
            return Some(optimal_feedback_gain(kappa_sq.sqrt(), beta));
        }
        a.feedback_gain
            .or(section.and_then(|s| s.feedback_gain))
            .or(Some(optimal_feedback_gain(kappa_sq.sqrt(), beta)))
    };
    let mc = if a.monte_carlo {
        Some(mc_settings(ctx, a.runs)?)
    } else {
        None
    };
    let seed = mc.map(|(_, s)| s);

    let mut out = Outputs::new(ctx.format);
    let mut summary = String::new();
    match (sweep, values) {
        (Some(param), Some(values)) => {
            let rows = with_threads(ctx.threads, || {
                values
                    .iter()
                    .map(|&v| {
                        let (k2, b) = match param {
                            EntangleSweep::KappaSq => (v, beta.unwrap()),
                            EntangleSweep::ThetaF => (slope.unwrap() * v, beta.unwrap()),
                            EntangleSweep::Beta => (kappa_sq.unwrap(), v),
                            EntangleSweep::FeedbackGain => (kappa_sq.unwrap(), beta.unwrap()),
                        };
                        let g = if param == EntangleSweep::FeedbackGain {
                            Some(v)
                        } else {
                            gain_for(k2, b)
                        };
                        Ok((v, entangle_point(k2, b, g, mc)))
                    })
                    .collect::<qnd_core::Result<Vec<_>>>()
            })?
            .into_iter()
            .map(|(v, p)| p.map(|p| (v, p)))
            .collect::<Result<Vec<_>, Failure>>()?;

            let mut header = vec![
                param.column(),
                "kappa_sq",
                "beta",
                "first_pulse_var_sum",
                "cond_var_sum",
                "noise_reduction",
                "duan_margin",
            ];
            if mc.is_some() {
                header.extend([
                    "mc_first_pulse_var_sum",
                    "mc_first_pulse_var_sum_se",
                    "mc_cond_var_sum",
                    "mc_cond_var_sum_se",
                    "mc_alpha",
                    "mc_alpha_se",
                ]);
            }
            let table: Vec<Vec<f64>> = rows
                .iter()
                .map(|(v, p)| {
                    let c = &p.closed;
                    let mut row = vec![
                        *v,
                        c.kappa_sq,
                        c.beta,
                        c.first_pulse_var_sum,
                        c.cond_var_sum,
                        1.0 - c.cond_var_sum / c.first_pulse_var_sum,
                        c.duan_margin,
                    ];
                    if let Some(stats) = &p.mc {
                        let e = stats.entanglement.as_ref().expect("entanglement run");
                        let (v2, se2, al, al_se) = mc_second_pulse(stats);
                        row.extend([
                            e.first_pulse_var_sum,
                            e.first_pulse_var_sum_se,
                            v2,
                            se2,
                            al,
                            al_se,
                        ]);
                    }
                    row
                })
                .collect();
            let result = json!({
                "sweep": param.column(),
                "calibration_slope_per_deg": slope,
                "rows": rows.iter().map(|(v, p)| json!({
                    "value": v,
                    "closed_form": p.closed,
                    "engine_cond_var_sum": p.engine.cond_var_sum,
                    "monte_carlo": p.mc,
                })).collect::<Vec<_>>(),
            });
            out.json(
                "entangle_report.json",
                &Report::new("entangle", seed, result).with_warnings(warnings.clone()),
            )?;
            out.csv("entangle_sweep.csv", |w| csvio::write_table(w, &header, &table))?;
            summary.push_str(&format!(
                "entangle sweep over {} ({} points)\n",
                param.column(),
                rows.len()
            ));
            for (v, p) in &rows {
                summary.push_str(&format!(
                    "  {} = {v:<8} kappa^2 = {:.4}  second pulse = {:.4}  reduction = {:.1}%\n",
                    param.column(),
                    p.closed.kappa_sq,
                    p.closed.cond_var_sum,
                    100.0 * (1.0 - p.closed.cond_var_sum / p.closed.first_pulse_var_sum)
                ));
            }
        }
        _ => {
            let (k2, b) = (kappa_sq.unwrap(), beta.unwrap());
            let g = gain_for(k2, b);
            let p = with_threads(ctx.threads, || Ok(entangle_point(k2, b, g, mc)))??;
            let agreement = (p.engine.cond_var_sum - p.closed.cond_var_sum).abs();
            summary.push_str(&format!(
                "entangle ({})  kappa^2 = {k2}  beta = {b}\n  alpha = {:.6}  first pulse = {:.6}  second pulse = {:.6}\n  Var(P_A1)+Var(P_A2) = {:.6}  Duan margin = {:.6}  entangled: {}\n  engine agreement: {agreement:.2e}\n",
                if g.is_some() { "feedback" } else { "conditional" },
                p.closed.alpha_used,
                p.closed.first_pulse_var_sum,
                p.closed.cond_var_sum,
                p.closed.var_p_sum,
                p.closed.duan_margin,
                p.closed.entangled,
            ));
            if let Some(stats) = &p.mc {
                let e = stats.entanglement.as_ref().expect("entanglement run");
                let (v2, se2, al, al_se) = mc_second_pulse(stats);
                summary.push_str(&format!(
                    "  monte carlo ({} runs, seed {}): first pulse = {:.4} +- {:.4}  second = {:.4} +- {:.4}  alpha = {:.4} +- {:.4}\n",
                    stats.n_runs, stats.seed, e.first_pulse_var_sum, e.first_pulse_var_sum_se, v2, se2, al, al_se
                ));
                if a.dump_outcomes {
                    out.csv("entangle_outcomes.csv", |w| {
                        csvio::write_pulse_outcomes(w, &e.outcomes)
                    })?;
                }
            }
            let result = json!({
                "closed_form": p.closed,
                "engine": p.engine,
                "monte_carlo": p.mc,
            });
            out.json(
                "entangle_report.json",
                &Report::new("entangle", seed, result).with_warnings(warnings),
            )?;
        }
    }
    finish(ctx, out, &summary)
}

pub fn memory(ctx: &Context, a: &MemoryArgs) -> CmdResult {
    let s = ctx.config.memory.as_ref();
    let kappa = pick(a.kappa, s.map(|s| s.kappa), "--kappa", "memory.kappa")?;
    let gain = pick(
        a.feedback_gain,
        s.map(|s| s.feedback_gain),
        "--feedback-gain",
        "memory.feedback_gain",
    )?;
    let beta = pick(a.beta, s.map(|s| s.beta), "--beta", "memory.beta")?;
    let zeta = pick(a.zeta, s.map(|s| s.zeta), "--zeta", "memory.zeta")?;
    let n0s =
        a.n0.clone()
            .or(s.map(|s| s.n0.clone()))
            .unwrap_or_else(|| vec![2.0, 4.0]);
    let readout_kappa = a.readout_kappa.or(s.map(|s| s.readout_kappa)).unwrap_or(1.0);
    if n0s.iter().any(|n| !(*n >= 0.0 && n.is_finite())) {
        return Err(Failure::config("--n0 values must be finite and >= 0"));
    }
    let gains = a.gain_sweep.as_deref().map(grid).transpose()?;

    let closed = memory_store_closed_form(kappa, gain, beta, zeta)?;
    let report = MemoryReport::new(closed.gain_ba, closed.gain_f, closed.var_x, closed.var_p, &n0s)?;
    let vacuum = GaussianState::vacuum(vec![ModeLabel::light(1)])?;
    let (_, engine) = memory_store(&vacuum, kappa, gain, beta, zeta)?;
    let optimized = if a.optimize {
        n0s.iter()
            .map(|&n0| {
                let (g, f) = optimize_feedback_gain(kappa, beta, zeta, n0)?;
                Ok(json!({"n0": n0, "feedback_gain": g, "fidelity": f}))
            })
            .collect::<qnd_core::Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let mc = if a.monte_carlo {
        let (runs, seed) = mc_settings(ctx, a.runs)?;
        let positive: Vec<f64> = n0s.iter().copied().filter(|n| *n > 0.0).collect();
        if positive.is_empty() {
            return Err(Failure::config("memory Monte Carlo needs some n0 > 0"));
        }
        let stats = with_threads(ctx.threads, || {
            positive
                .iter()
                .map(|&n0| {
                    let cfg = TrajectoryConfig {
                        n_runs: runs,
                        seed,
                        protocol: Protocol::Memory,
                        kappa,
                        beta,
                        zeta,
                        feedback_gain: gain,
                        n0,
                        readout_kappa,
                    };
                    cfg.validate()?;
                    run_trajectories(&cfg)
                })
                .collect::<qnd_core::Result<Vec<_>>>()
        })?;
        Some((seed, stats))
    } else {
        None
    };
    let sweep_rows = match &gains {
        Some(gs) => gs
            .iter()
            .map(|&g| {
                let r = memory_store_closed_form(kappa, g, beta, zeta)?;
                let mut row = vec![g, r.gain_ba, r.gain_f, r.var_x, r.var_p];
                for &n0 in &n0s {
                    row.push(r.fidelity_at(n0)?);
                }
                Ok(row)
            })
            .collect::<qnd_core::Result<Vec<_>>>()?,
        None => Vec::new(),
    };

    let mut summary = format!(
        "memory  kappa = {kappa}  g = {gain}  beta = {beta}  zeta = {zeta}\n  g'_BA = {:.4}  g'_F = {:.4}\n  Var(X) = {:.4} SNU  Var(P) = {:.4} SNU  (engine {:.4}, {:.4})\n",
        report.gain_ba, report.gain_f, report.var_x, report.var_p, engine.var_x, engine.var_p
    );
    for p in &report.fidelity {
        summary.push_str(&format!(
            "  n0 = {:<5} fidelity = {:.4}  classical bound = {:.4}\n",
            p.n0, p.fidelity, p.classical_bound
        ));
    }
    for o in &optimized {
        summary.push_str(&format!(
            "  best gain at n0 = {}: g = {:.4}  fidelity = {:.4}\n",
            o["n0"],
            o["feedback_gain"].as_f64().unwrap_or(f64::NAN),
            o["fidelity"].as_f64().unwrap_or(f64::NAN)
        ));
    }
    let mut out = Outputs::new(ctx.format);
    if let Some((_, stats)) = &mc {
        for st in stats {
            let m = st.memory.as_ref().expect("memory run");
            summary.push_str(&format!(
                "  monte carlo ({} runs): Var(X) = {:.4} +- {:.4}  Var(P) = {:.4} +- {:.4}  fidelity = {:.4}\n",
                st.n_runs, m.var_x_hat, m.var_x_se, m.var_p_hat, m.var_p_se, m.fidelity_hat
            ));
        }
        if a.dump_outcomes {
            if let Some(first) = stats.first().and_then(|s| s.memory.as_ref()) {
                out.csv("memory_outcomes.csv", |w| {
                    csvio::write_memory_outcomes(w, &first.outcomes)
                })?;
            }
        }
    }
    let bounds: Vec<Value> = n0s
        .iter()
        .map(|&n| Ok(json!({"n0": n, "classical_bound": classical_fidelity_bound(n)?})))
        .collect::<qnd_core::Result<_>>()?;
    let result = json!({
        "closed_form": report,
        "engine": {"var_x": engine.var_x, "var_p": engine.var_p},
        "classical_bounds": bounds,
        "optimized": optimized,
        "monte_carlo": mc.as_ref().map(|(_, s)| s),
        "gain_sweep_points": sweep_rows.len(),
    });
    out.json(
        "memory_report.json",
        &Report::new("memory", mc.as_ref().map(|(s, _)| *s), result),
    )?;
    if gains.is_some() {
        let fid_cols: Vec<String> = n0s.iter().map(|n| format!("fidelity_n0_{n}")).collect();
        let mut header = vec!["feedback_gain", "gain_ba", "gain_f", "var_x", "var_p"];
        header.extend(fid_cols.iter().map(String::as_str));
        out.csv("memory_gain_sweep.csv", |w| {
            csvio::write_table(w, &header, &sweep_rows)
        })?;
    }
    finish(ctx, out, &summary)
}

pub fn calibrate(ctx: &Context, a: &CalibrateArgs) -> CmdResult {
    let c = ctx.config.calibration.as_ref();
    let params = PhysicalParams {
        power_mw: pick(
            a.power_mw,
            c.map(|c| c.power_mw),
            "--power-mw",
            "calibration.power_mW",
        )?,
        duration_ms: pick(
            a.duration_ms,
            c.map(|c| c.duration_ms),
            "--duration-ms",
            "calibration.duration_ms",
        )?,
        detuning_mhz: pick(
            a.detuning_mhz,
            c.map(|c| c.detuning_mhz),
            "--detuning-mhz",
            "calibration.detuning_MHz",
        )?,
        faraday_angle_deg: pick(
            a.theta_deg,
            c.map(|c| c.faraday_angle_deg),
            "--theta-deg",
            "calibration.faraday_angle_deg",
        )?,
        cell_area_cm2: pick(
            a.cell_area_cm2,
            c.map(|c| c.cell_area_cm2),
            "--cell-area-cm2",
            "calibration.cell_area_cm2",
        )?,
        sigma_sq: a.sigma_sq.or(c.map(|c| c.sigma_sq)).unwrap_or(0.0),
        jx: c.and_then(|c| c.jx),
        sx: c.and_then(|c| c.sx),
    };
    params.validate().map_err(|e| Failure::config(e.to_string()))?;
    let constants = constants(a.constants.as_deref())?;
    let couplings = coupling_coefficients(params.detuning_mhz, &constants)?;
    let kappa_sq = kappa_squared(&params, &constants)?;
    let slope = kappa_squared_slope(&params, &constants)?;

    let mut summary = format!(
        "calibrate  P = {} mW  T = {} ms  Delta = {} MHz  theta_F = {} deg  A = {} cm^2\n  a0 = {:.4}  a1 = {:.4}  a2 = {:.5}\n  kappa^2 = {kappa_sq:.4}  slope = {slope:.4} per degree\n",
        params.power_mw,
        params.duration_ms,
        params.detuning_mhz,
        params.faraday_angle_deg,
        params.cell_area_cm2,
        couplings.a0,
        couplings.a1,
        couplings.a2
    );

    let mut motion_rows = Vec::new();
    let motion = match &ctx.config.motion {
        Some(m) => {
            let durations = match a.durations.as_deref() {
                Some(g) => grid(g)?,
                None => vec![m.duration_ms],
            };
            let seed = ctx.seed.unwrap_or(DEFAULT_SEED);
            let mut rows = Vec::new();
            for (i, &t) in durations.iter().enumerate() {
                let mut geom = m.geometry();
                geom.duration_ms = t;
                let st = motion_statistics_scaled(&geom, m.sigma_sq_correction)
                    .map_err(|e| Failure::config(e.to_string()))?;
                let beta = motion_effective_beta(st.sigma_sq)?;
                let journeys = geom.journeys();
                let sim = if a.walkers > 0 {
                    Some(simulate_journeys(
                        st.p,
                        journeys,
                        a.walkers,
                        seed.wrapping_add(i as u64),
                    )?)
                } else {
                    None
                };
                motion_rows.push(vec![t, journeys as f64, st.p, st.sigma_sq, st.sigma_sq * t, beta]);
                summary.push_str(&format!(
                    "  motion T = {t} ms: p = {:.4}  sigma^2 = {:.4}  beta = {:.4}  journeys = {journeys}\n",
                    st.p, st.sigma_sq, beta
                ));
                rows.push(json!({
                    "duration_ms": t,
                    "journeys": journeys,
                    "p": st.p,
                    "sigma_sq": st.sigma_sq,
                    "beta_motion": beta,
                    "simulation": sim,
                }));
            }
            Some(rows)
        }
        None => None,
    };
    let lw = match &ctx.config.linewidth {
        Some(l) => {
            let g =
                linewidth(&l.model(), l.density, l.power_mw).map_err(|e| Failure::config(e.to_string()))?;
            let t2 = t2_from_linewidth(g)?;
            summary.push_str(&format!("  linewidth = {g:.3} Hz  T2 = {t2:.3} ms\n"));
            Some(json!({"linewidth_Hz": g, "t2_ms": t2}))
        }
        None => None,
    };
    let result = json!({
        "params": params,
        "couplings": couplings,
        "kappa_sq": kappa_sq,
        "kappa_sq_slope_per_deg": slope,
        "prefactor": {
            "tabulated": constants.convenient_prefactor,
            "derived": constants.derived_prefactor(),
        },
        "motion": motion,
        "linewidth": lw,
    });
    let mut out = Outputs::new(ctx.format);
    out.json("calibrate_report.json", &Report::new("calibrate", None, result))?;
    if !motion_rows.is_empty() {
        out.csv("calibrate_motion.csv", |w| {
            csvio::write_table(
                w,
                &[
                    "duration_ms",
                    "journeys",
                    "p",
                    "sigma_sq",
                    "sigma_sq_times_T",
                    "beta_motion",
                ],
                &motion_rows,
            )
        })?;
    }
    finish(ctx, out, &summary)
}

/// Local maxima above 1% of the global maximum.
fn count_peaks(signal: &[f64]) -> usize {
    let max = signal.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0;
    }
    signal
        .windows(3)
        .filter(|w| w[1] > w[0] && w[1] >= w[2] && w[1] > 0.01 * max)
        .count()
}

/// Spin-temperature slopes tried as fit starts, from nearly flat to nearly
/// fully pumped. Equal populations are a stationary point of the fit.
const START_SLOPES: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Best of several deterministic starts; the configured populations, when
/// given, are tried first.
fn fit_multistart(
    model: &MorsModel,
    keep_given: bool,
    freq: &[f64],
    signal: &[f64],
    opts: &FitOptions,
) -> Result<MorsFit, Failure> {
    let mut starts = Vec::new();
    if keep_given {
        starts.push(model.clone());
    }
    for slope in START_SLOPES {
        let w: Vec<f64> = (0..model.populations.len())
            .map(|i| (slope * i as f64).exp())
            .collect();
        let total: f64 = w.iter().sum();
        let mut m = model.clone();
        m.populations = w.iter().map(|x| x / total).collect();
        starts.push(m);
    }
    let mut best: Option<MorsFit> = None;
    let mut last_err = None;
    for start in &starts {
        match fit_mors(freq, signal, start, opts) {
            Ok(fit) => {
                if best.as_ref().is_none_or(|b| fit.residual < b.residual) {
                    best = Some(fit);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some(fit), _) => Ok(fit),
        (None, Some(e)) => Err(e.into()),
        (None, None) => Err(Failure::runtime("no fit start available")),
    }
}

pub fn mors(ctx: &Context, a: &MorsArgs) -> CmdResult {
    let s = ctx.config.mors.as_ref();
    let larmor_khz = pick(
        a.larmor_khz,
        s.map(|s| s.larmor_khz),
        "--larmor-khz",
        "mors.larmor_kHz",
    )?;
    let linewidth_hz = pick(
        a.linewidth_hz,
        s.map(|s| s.linewidth_hz),
        "--linewidth-hz",
        "mors.linewidth_Hz",
    )?;
    let formula = match a.qz_formula {
        Some(QzArg::Quadratic) => QzFormula::Quadratic,
        Some(QzArg::Linear) => QzFormula::Linear,
        None => s.map(|s| s.qz_formula).unwrap_or_default(),
    };
    let span = a.span_hz.or(s.map(|s| s.scan_span_hz)).unwrap_or(400.0);
    let step = a.step_hz.or(s.map(|s| s.scan_step_hz)).unwrap_or(0.5);
    let populations = a.populations.clone().or(s.and_then(|s| s.populations.clone()));
    let constants = constants(a.constants.as_deref())?;
    let larmor = larmor_khz * 1e3;
    let qz = qz_splitting(larmor, constants.hyperfine_splitting / (2.0 * PI), formula)
        .map_err(|e| Failure::config(e.to_string()))?;
    let model = match &populations {
        Some(p) => MorsModel::uniform(constants.f, p.clone(), linewidth_hz, larmor, qz),
        None => MorsModel::fully_pumped(constants.f, linewidth_hz, larmor, qz),
    }
    .map_err(|e| Failure::config(e.to_string()))?;
    let mut warnings = Vec::new();
    if let Some(dwell) = a.dwell_s {
        if !scan_is_adiabatic(&model, dwell) {
            warnings.push(format!(
                "scan is not adiabatic: linewidth x dwell = {:.3} <= 5",
                linewidth_hz * dwell
            ));
        }
    }
    let mut out = Outputs::new(ctx.format);
    let summary;
    match &a.fit {
        Some(path) => {
            let (freq, signal) = csvio::read_spectrum(read_file(path)?.as_bytes())?;
            let opts = FitOptions {
                fit_amplitude: a.fit_amplitude,
                ..FitOptions::default()
            };
            let fit = fit_multistart(&model, populations.is_some(), &freq, &signal, &opts)?;
            let peak = signal.iter().copied().fold(0.0, f64::max);
            if fit.rms > 1e-3 * peak {
                warnings.push(format!(
                    "poor fit: rms residual {:.3e} vs peak {:.3e}",
                    fit.rms, peak
                ));
            }
            let fitted = mors_spectrum(&fit.model, &freq)?;
            let t2: Vec<f64> = fit
                .model
                .linewidths_hz
                .iter()
                .map(|&g| t2_from_linewidth(g))
                .collect::<qnd_core::Result<_>>()?;
            summary = format!(
                "mors fit of {} points: rms residual {:.3e} after {} iterations\n  populations = {:?}\n  linewidths (Hz) = {:?}\n",
                freq.len(),
                fit.rms,
                fit.iterations,
                fit.model.populations.iter().map(|p| (p * 1e4).round() / 1e4).collect::<Vec<_>>(),
                fit.model.linewidths_hz.iter().map(|g| (g * 1e3).round() / 1e3).collect::<Vec<_>>(),
            );
            let result = json!({"fit": fit, "t2_ms": t2});
            out.json(
                "mors_fit.json",
                &Report::new("mors", None, result).with_warnings(warnings),
            )?;
            let rows: Vec<Vec<f64>> = freq
                .iter()
                .zip(&signal)
                .zip(&fitted)
                .map(|((f, m), y)| vec![*f, *m, *y])
                .collect();
            out.csv("mors_fit.csv", |w| {
                csvio::write_table(w, &["frequency_Hz", "measured_au", "fitted_au"], &rows)
            })?;
        }
        None => {
            if !(span > 0.0 && step > 0.0) {
                return Err(Failure::config("scan span and step must be positive"));
            }
            let scan: Vec<f64> = grid(&format!(
                "{}:{}:{}",
                larmor - span / 2.0,
                larmor + span / 2.0,
                step
            ))?;
            let signal = mors_spectrum(&model, &scan)?;
            let peaks = count_peaks(&signal);
            summary = format!(
                "mors synthesis: {} points around {larmor_khz} kHz, qz splitting {qz:.4} Hz, {peaks} peak(s)\n",
                scan.len()
            );
            let result = json!({
                "model": model,
                "scan_points": scan.len(),
                "peaks": peaks,
                "coherence_frequencies_Hz": (0..model.n_coherences()).map(|k| model.coherence_frequency(k)).collect::<Vec<_>>(),
            });
            out.json(
                "mors_report.json",
                &Report::new("mors", None, result).with_warnings(warnings),
            )?;
            out.csv("mors_spectrum.csv", |w| csvio::write_spectrum(w, &scan, &signal))?;
        }
    }
    finish(ctx, out, &summary)
}

pub fn stark(ctx: &Context, a: &StarkArgs) -> CmdResult {
    let s = ctx.config.stark.as_ref();
    let constants = constants(a.constants.as_deref())?;
    let base = StarkConfig {
        polarization_angle_deg: if a.magic_angle {
            magic_angle_deg()
        } else {
            a.angle.or(s.map(|s| s.polarization_angle_deg)).unwrap_or(0.0)
        },
        photon_flux: pick(a.flux, s.map(|s| s.photon_flux), "--flux", "stark.photon_flux")?,
        beam_area_cm2: pick(
            a.beam_area_cm2,
            s.map(|s| s.beam_area_cm2),
            "--beam-area-cm2",
            "stark.beam_area_cm2",
        )?,
        detuning_mhz: pick(
            a.detuning_mhz,
            s.map(|s| s.detuning_mhz),
            "--detuning-mhz",
            "stark.detuning_MHz",
        )?,
        f: constants.f,
        m: s.map(|s| s.m).unwrap_or(constants.f as i32 - 1),
    };
    let f = constants.f as i32;
    let shifts: Vec<(i32, f64)> = (-f..f)
        .map(|m| {
            Ok((
                m,
                stark_line_shift(&StarkConfig { m, ..base.clone() }, &constants)?,
            ))
        })
        .collect::<Result<_, Failure>>()?;
    let couplings = coupling_coefficients(base.detuning_mhz, &constants)?;
    let noise = laser_noise_ratio(constants.f, couplings.a1, couplings.a2, a.noise_ratio)?;

    let mut out = Outputs::new(ctx.format);
    let mut summary = format!(
        "stark  angle = {} deg (magic {:.4})  flux = {:e}/s  Delta = {} MHz\n",
        base.polarization_angle_deg,
        magic_angle_deg(),
        base.photon_flux,
        base.detuning_mhz
    );
    for (m, v) in &shifts {
        summary.push_str(&format!("  m = {m:>2} -> {:>2}: {v:.6e} Hz\n", m + 1));
    }
    summary.push_str(&format!("  tensor laser-noise ratio = {noise:.4}\n"));

    let compensation = match &a.flux_profile {
        Some(path) => {
            let (t, flux) = csvio::read_series(read_file(path)?.as_bytes(), ["time_ms", "photon_flux"])?;
            let line: Vec<f64> = flux
                .iter()
                .map(|&phi| {
                    stark_line_shift(
                        &StarkConfig {
                            photon_flux: phi,
                            ..base.clone()
                        },
                        &constants,
                    )
                })
                .collect::<qnd_core::Result<_>>()?;
            let field = compensation_bias_field(&line, constants.g_f)?;
            let rows: Vec<Vec<f64>> = (0..t.len()).map(|i| vec![t[i], line[i], field[i]]).collect();
            out.csv("stark_compensation.csv", |w| {
                csvio::write_table(w, &["time_ms", "shift_Hz", "field_T"], &rows)
            })?;
            summary.push_str(&format!(
                "  compensation profile: {} samples for line m = {}\n",
                rows.len(),
                base.m
            ));
            Some(json!({"line_m": base.m, "samples": rows.len()}))
        }
        None => None,
    };
    let result = json!({
        "config": base,
        "magic_angle_deg": magic_angle_deg(),
        "shifts_Hz": shifts.iter().map(|(m, v)| json!({"m": m, "shift_Hz": v})).collect::<Vec<_>>(),
        "laser_noise_ratio": noise,
        "compensation": compensation,
    });
    out.json("stark_report.json", &Report::new("stark", None, result))?;
    let rows: Vec<Vec<f64>> = shifts.iter().map(|(m, v)| vec![*m as f64, *v]).collect();
    out.csv("stark_shifts.csv", |w| {
        csvio::write_table(w, &["m", "shift_Hz"], &rows)
    })?;
    finish(ctx, out, &summary)
}
