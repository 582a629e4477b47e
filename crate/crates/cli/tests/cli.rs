use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn qnd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qnd"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("QND_OUT_DIR")
        .output()
        .expect("qnd runs")
}

fn report(dir: &Path, name: &str) -> Value {
    let text = fs::read_to_string(dir.join(name)).expect("report written");
    let v: Value = serde_json::from_str(&text).unwrap();
    check_envelope(&v);
    v
}

/// Checks a report against the required keys and constants of the
/// published schema.
fn check_envelope(v: &Value) {
    let schema: Value = serde_json::from_str(qnd_core_schema()).unwrap();
    let obj = v.as_object().expect("report is an object");
    for key in schema["required"].as_array().unwrap() {
        assert!(obj.contains_key(key.as_str().unwrap()), "missing {key}");
    }
    let allowed = schema["properties"].as_object().unwrap();
    for key in obj.keys() {
        assert!(allowed.contains_key(key), "unexpected key {key}");
    }
    assert_eq!(v["schema_version"], 1);
    assert_eq!(v["tool"], "qnd");
    let commands = schema["properties"]["command"]["enum"].as_array().unwrap();
    assert!(commands.contains(&v["command"]));
}

fn qnd_core_schema() -> &'static str {
    include_str!("../../core/schema/report.schema.json")
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn entangle_closed_form_ideal() {
    let dir = TempDir::new().unwrap();
    let out = qnd(
        dir.path(),
        &["entangle", "--kappa-sq", "1", "--beta", "1", "--closed-form"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(dir.path(), "entangle_report.json");
    let c = &r["result"]["closed_form"];
    assert!(close(c["var_p_sum"].as_f64().unwrap(), 0.5, 1e-12));
    assert!(close(c["alpha_used"].as_f64().unwrap(), 0.5, 1e-12));
    assert!(close(c["cond_var_sum"].as_f64().unwrap(), 1.5, 1e-12));
}

#[test]
fn missing_required_flag_is_a_config_error_without_output() {
    let dir = TempDir::new().unwrap();
    let target = dir.path().join("out");
    let out = qnd(&target, &["entangle", "--beta", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!target.exists());
}

#[test]
fn bad_values_and_usage_exit_two() {
    let dir = TempDir::new().unwrap();
    for args in [
        vec!["entangle", "--kappa-sq", "1", "--beta", "1.5"],
        vec![
            "entangle",
            "--kappa-sq",
            "1",
            "--beta",
            "1",
            "--sweep",
            "kappa_sq",
        ],
        vec![
            "entangle",
            "--kappa-sq",
            "1",
            "--beta",
            "1",
            "--sweep",
            "nope",
            "--grid",
            "1:2:1",
        ],
        vec!["calibrate", "--power-mw", "4.5"],
        vec!["memory", "--kappa", "1"],
        vec!["frobnicate"],
    ] {
        let out = qnd(dir.path(), &args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn bad_config_file_exits_two() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "schema_version = 1\n[entanglement]\nkappa_sq = 1.0\nbeta = 0.5\npower = 3\n",
    )
    .unwrap();
    let out = qnd(
        &dir.path().join("o"),
        &["--config", cfg.to_str().unwrap(), "entangle"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_values_and_flag_override() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "schema_version = 1\n[entanglement]\nkappa_sq = 1.0\nbeta = 0.5\n",
    )
    .unwrap();
    let o = dir.path().join("o");
    let out = qnd(
        &o,
        &["--config", cfg.to_str().unwrap(), "entangle", "--beta", "1"],
    );
    assert!(out.status.success());
    let r = report(&o, "entangle_report.json");
    assert_eq!(r["result"]["closed_form"]["beta"], 1.0);
    assert_eq!(r["result"]["closed_form"]["kappa_sq"], 1.0);
}

#[test]
fn output_dir_from_environment() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_qnd"))
        .args(["entangle", "--kappa-sq", "1", "--beta", "1"])
        .env("QND_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("entangle_report.json").exists());
}

#[test]
fn monte_carlo_agrees_with_closed_form_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let args = |threads: &'static str| {
        vec![
            "--seed",
            "11",
            "--threads",
            threads,
            "entangle",
            "--kappa-sq",
            "1",
            "--beta",
            "0.8",
            "--monte-carlo",
            "--runs",
            "20000",
        ]
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(qnd(&a, &args("1")).status.success());
    assert!(qnd(&b, &args("4")).status.success());
    let ra = fs::read(a.join("entangle_report.json")).unwrap();
    let rb = fs::read(b.join("entangle_report.json")).unwrap();
    assert_eq!(ra, rb);

    let r = report(&a, "entangle_report.json");
    assert_eq!(r["seed"], 11);
    let mc = &r["result"]["monte_carlo"]["entanglement"];
    let closed = &r["result"]["closed_form"];
    let within = |est: &str, se: &str, truth: f64| {
        let (e, s) = (mc[est].as_f64().unwrap(), mc[se].as_f64().unwrap());
        assert!((e - truth).abs() < 3.0 * s, "{est} = {e} +- {s} vs {truth}");
    };
    within(
        "first_pulse_var_sum",
        "first_pulse_var_sum_se",
        closed["first_pulse_var_sum"].as_f64().unwrap(),
    );
    within(
        "cond_var_sum",
        "cond_var_sum_se",
        closed["cond_var_sum"].as_f64().unwrap(),
    );
    within("alpha_hat", "alpha_se", closed["alpha_used"].as_f64().unwrap());
}

#[test]
fn theta_sweep_writes_csv() {
    let dir = TempDir::new().unwrap();
    let out = qnd(
        dir.path(),
        &[
            "--seed",
            "7",
            "entangle",
            "--sweep",
            "theta_F",
            "--grid",
            "0:14:1",
            "--monte-carlo",
            "--runs",
            "2000",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("entangle_sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("theta_F_deg,kappa_sq,beta,first_pulse_var_sum,cond_var_sum"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 15);
    assert!(close(rows[1][1], 0.140, 5e-4), "slope row {:?}", rows[1]);
    // Reduction below projection noise grows with the coupling.
    for w in rows.windows(2) {
        assert!(w[1][5] >= w[0][5]);
    }
    let r = report(dir.path(), "entangle_report.json");
    assert!(!r["warnings"].as_array().unwrap().is_empty());
}

#[test]
fn memory_reference_operating_point() {
    let dir = TempDir::new().unwrap();
    let out = qnd(
        dir.path(),
        &[
            "--reference",
            "memory",
            "--n0",
            "0,2,4",
            "--gain-sweep",
            "0:1.5:0.05",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("0.5556"), "{stdout}");
    let r = report(dir.path(), "memory_report.json");
    let fid = r["result"]["closed_form"]["fidelity"].as_array().unwrap();
    let at = |n0: f64| fid.iter().find(|p| p["n0"] == n0).unwrap();
    assert!(close(at(4.0)["fidelity"].as_f64().unwrap(), 0.672, 2e-3));
    assert!(close(at(2.0)["fidelity"].as_f64().unwrap(), 0.704, 2e-3));
    assert!(close(at(0.0)["classical_bound"].as_f64().unwrap(), 1.0, 1e-15));
    let csv = fs::read_to_string(dir.path().join("memory_gain_sweep.csv")).unwrap();
    assert!(csv
        .starts_with("feedback_gain,gain_ba,gain_f,var_x,var_p,fidelity_n0_0,fidelity_n0_2,fidelity_n0_4\n"));
    assert_eq!(csv.lines().count(), 32);
}

#[test]
fn calibrate_reference_and_zero_power() {
    let dir = TempDir::new().unwrap();
    let out = qnd(
        dir.path(),
        &["--reference", "calibrate", "--durations", "0.5:2:0.5"],
    );
    assert!(out.status.success());
    let r = report(dir.path(), "calibrate_report.json");
    assert!(close(
        r["result"]["kappa_sq_slope_per_deg"].as_f64().unwrap(),
        0.140,
        5e-4
    ));
    let motion = r["result"]["motion"].as_array().unwrap();
    assert_eq!(motion.len(), 4);
    assert!(close(motion[1]["sigma_sq"].as_f64().unwrap(), 0.44, 0.01));
    let csv = fs::read_to_string(dir.path().join("calibrate_motion.csv")).unwrap();
    assert!(csv.starts_with("duration_ms,journeys,p,sigma_sq,sigma_sq_times_T,beta_motion\n"));

    let z = dir.path().join("zero");
    let out = qnd(
        &z,
        &[
            "calibrate",
            "--power-mw",
            "0",
            "--duration-ms",
            "2",
            "--detuning-mhz",
            "-700",
            "--theta-deg",
            "1",
            "--cell-area-cm2",
            "6",
        ],
    );
    assert!(out.status.success());
    assert_eq!(report(&z, "calibrate_report.json")["result"]["kappa_sq"], 0.0);
}

#[test]
fn mors_synthesize_and_fit_round_trip() {
    let dir = TempDir::new().unwrap();
    let synth = dir.path().join("synth");
    assert!(qnd(&synth, &["--reference", "mors"]).status.success());
    let r = report(&synth, "mors_report.json");
    assert_eq!(r["result"]["peaks"], 1);
    let spectrum = synth.join("mors_spectrum.csv");
    assert!(fs::read_to_string(&spectrum)
        .unwrap()
        .starts_with("frequency_Hz,signal_au\n"));

    let pops = "0.01,0.01,0.02,0.03,0.05,0.08,0.12,0.22,0.46";
    let spread = dir.path().join("spread");
    assert!(qnd(&spread, &["--reference", "mors", "--populations", pops])
        .status
        .success());
    let fit_dir = dir.path().join("fit");
    let file = spread.join("mors_spectrum.csv");
    let out = qnd(
        &fit_dir,
        &["--reference", "mors", "--fit", file.to_str().unwrap()],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let fit = report(&fit_dir, "mors_fit.json");
    let got: Vec<f64> = fit["result"]["fit"]["model"]["populations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let want: Vec<f64> = pops.split(',').map(|x| x.parse().unwrap()).collect();
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() <= 1e-6 * w, "{got:?}");
    }
}

#[test]
fn mors_flat_spectrum_is_a_runtime_failure() {
    let dir = TempDir::new().unwrap();
    let file = dir.path().join("flat.csv");
    let mut text = String::from("frequency_Hz,signal_au\n");
    for i in 0..100 {
        text.push_str(&format!("{},0\n", 321_900 + 2 * i));
    }
    fs::write(&file, text).unwrap();
    let o = dir.path().join("o");
    let out = qnd(&o, &["--reference", "mors", "--fit", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!o.exists());
}

#[test]
fn stark_magic_angle_and_profile() {
    let dir = TempDir::new().unwrap();
    assert!(qnd(dir.path(), &["--reference", "stark", "--magic-angle"])
        .status
        .success());
    let r = report(dir.path(), "stark_report.json");
    for s in r["result"]["shifts_Hz"].as_array().unwrap() {
        assert!(s["shift_Hz"].as_f64().unwrap().abs() < 1e-9);
    }

    let p = dir.path().join("p");
    let profile = dir.path().join("flux.csv");
    fs::write(&profile, "time_ms,photon_flux\n0,1e16\n1,2e16\n").unwrap();
    assert!(qnd(
        &p,
        &[
            "--reference",
            "stark",
            "--flux-profile",
            profile.to_str().unwrap()
        ]
    )
    .status
    .success());
    let csv = fs::read_to_string(p.join("stark_compensation.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "time_ms,shift_Hz,field_T");
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    // Field is linear in flux and opposes the shift.
    assert!(close(rows[1][2], 2.0 * rows[0][2], 1e-20));
    assert!(rows[0][1] * rows[0][2] < 0.0);
    let shifts = fs::read_to_string(p.join("stark_shifts.csv")).unwrap();
    assert!(shifts.starts_with("m,shift_Hz\n"));
}

#[test]
fn json_only_format_skips_csv() {
    let dir = TempDir::new().unwrap();
    assert!(qnd(dir.path(), &["--format", "json", "--reference", "stark"])
        .status
        .success());
    let names: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    assert_eq!(names, vec![std::ffi::OsString::from("stark_report.json")]);
}
