//! Seeded Monte Carlo trajectories of the protocols.
//!
//! Each run draws its homodyne outcomes from the exact joint Gaussian of the
//! engine state, using its own ChaCha stream `(seed, run index)`. Runs are
//! generated in parallel, collected in run order and reduced sequentially, so
//! results are bit-identical for any number of worker threads.
//!
//! Entanglement outcomes are canonical light quadratures (vacuum 1/2), so a
//! pair of pulses has unit shot noise as in the closed forms.

use std::str::FromStr;

use nalgebra::{DMatrix, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoherence::{admix_vacuum, check_unit_interval};
use crate::error::{Error, Result};
use crate::gaussian::{GaussianState, ModeLabel, VACUUM_VARIANCE};
use crate::interface::qnd_map;
use crate::protocols::entanglement::{conditional_variance_sum, feedback_variance_sum, optimal_alpha};
use crate::protocols::feedback_map;
use crate::protocols::memory::{memory_fidelity, memory_readout, memory_store};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    EntangleConditional,
    EntangleFeedback,
    Memory,
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entangle_conditional" => Ok(Protocol::EntangleConditional),
            "entangle_feedback" => Ok(Protocol::EntangleFeedback),
            "memory" => Ok(Protocol::Memory),
            _ => Err(Error::invalid(format!("unknown protocol '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub n_runs: usize,
    pub seed: u64,
    pub protocol: Protocol,
    pub kappa: f64,
    pub beta: f64,
    #[serde(default = "one")]
    pub zeta: f64,
    #[serde(default)]
    pub feedback_gain: f64,
    /// Mean photon number of the memory input ensemble.
    #[serde(default)]
    pub n0: f64,
    /// Coupling of the memory readout pulse.
    #[serde(default = "one")]
    pub readout_kappa: f64,
}

fn one() -> f64 {
    1.0
}

impl TrajectoryConfig {
    pub fn entangle(kappa: f64, beta: f64, n_runs: usize, seed: u64) -> Self {
        TrajectoryConfig {
            n_runs,
            seed,
            protocol: Protocol::EntangleConditional,
            kappa,
            beta,
            zeta: 1.0,
            feedback_gain: 0.0,
            n0: 0.0,
            readout_kappa: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_runs < 2 {
            return Err(Error::invalid("n_runs must be at least 2"));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::invalid("kappa must be finite and >= 0"));
        }
        check_unit_interval("beta", self.beta)?;
        check_unit_interval("zeta", self.zeta)?;
        if !self.feedback_gain.is_finite() {
            return Err(Error::invalid("feedback_gain must be finite"));
        }
        if self.protocol == Protocol::Memory {
            if !(self.n0 > 0.0 && self.n0.is_finite()) {
                return Err(Error::invalid("memory runs need n0 > 0"));
            }
            if !(self.readout_kappa > 0.0 && self.readout_kappa.is_finite()) {
                return Err(Error::invalid("readout_kappa must be positive"));
            }
        }
        Ok(())
    }
}

/// Compensated (Neumaier) sum.
pub fn neumaier_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn mean(xs: &[f64]) -> f64 {
    neumaier_sum(xs.iter().copied()) / xs.len() as f64
}

/// Two-pass sample variance with `N - 1` normalization.
fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    neumaier_sum(xs.iter().map(|x| (x - m).powi(2))) / (xs.len() as f64 - 1.0)
}

/// Standard error of a Gaussian sample variance.
fn variance_se(var: f64, n: usize) -> f64 {
    var * (2.0 / (n as f64 - 1.0)).sqrt()
}

/// Outcomes of one entanglement run: first and second pulse of cells A, B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PulseOutcomes {
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

/// One memory run: input means and the readout result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MemoryOutcome {
    pub x0: f64,
    pub p0: f64,
    /// True when the readout measured the back-action quadrature `X_A`.
    pub read_x: bool,
    pub readout: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntanglementStats {
    pub mean_a1: f64,
    pub var_a1: f64,
    pub var_a1_se: f64,
    pub var_b1: f64,
    pub first_pulse_var_sum: f64,
    pub first_pulse_var_sum_se: f64,
    pub second_pulse_var_sum: f64,
    pub alpha_hat: f64,
    pub alpha_se: f64,
    pub cond_var_sum: f64,
    pub cond_var_sum_se: f64,
    pub expected_first_pulse_var_sum: f64,
    pub expected_alpha: f64,
    pub expected_cond_var_sum: f64,
    #[serde(skip)]
    pub outcomes: Vec<PulseOutcomes>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemoryStats {
    pub gain_ba_hat: f64,
    pub gain_f_hat: f64,
    /// Stored variances (SNU) inferred from the readout residuals.
    pub var_x_hat: f64,
    pub var_x_se: f64,
    pub var_p_hat: f64,
    pub var_p_se: f64,
    pub fidelity_hat: f64,
    pub expected_var_x: f64,
    pub expected_var_p: f64,
    pub expected_fidelity: f64,
    #[serde(skip)]
    pub outcomes: Vec<MemoryOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryStats {
    pub n_runs: usize,
    pub seed: u64,
    pub protocol: Protocol,
    pub entanglement: Option<EntanglementStats>,
    pub memory: Option<MemoryStats>,
}

fn run_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Joint covariance of the first and second `X_L` outcomes of one cell,
/// taken from the engine state before either is measured.
fn pulse_covariance(cfg: &TrajectoryConfig) -> Result<Matrix2<f64>> {
    let (a, la, lb) = (ModeLabel::atomic(1), ModeLabel::light(1), ModeLabel::light(2));
    let mut s = GaussianState::vacuum(vec![a.clone(), la.clone()])?
        .apply_symplectic(&qnd_map(cfg.kappa, &a, &la)?)?;
    s = admix_vacuum(&s, &a, cfg.beta)?;
    if cfg.protocol == Protocol::EntangleFeedback {
        s = s.apply_symplectic(&feedback_map(cfg.feedback_gain, &a, &la)?)?;
    }
    s = s
        .with_vacuum_mode(lb.clone())?
        .apply_symplectic(&qnd_map(cfg.kappa, &a, &lb)?)?;
    let (x1, x2) = (la.x(), lb.x());
    Ok(Matrix2::new(
        s.variance(&x1)?,
        s.covariance(&x1, &x2)?,
        s.covariance(&x2, &x1)?,
        s.variance(&x2)?,
    ))
}

fn cholesky2(c: &Matrix2<f64>) -> Result<Matrix2<f64>> {
    c.cholesky()
        .map(|ch| ch.l())
        .ok_or_else(|| Error::ContractViolation("outcome covariance is not positive definite".into()))
}

fn run_entanglement(cfg: &TrajectoryConfig) -> Result<EntanglementStats> {
    let l = cholesky2(&pulse_covariance(cfg)?)?;
    let draw = |rng: &mut ChaCha8Rng| {
        let (u, v) = (normal(rng), normal(rng));
        (l[(0, 0)] * u, l[(1, 0)] * u + l[(1, 1)] * v)
    };
    let outcomes: Vec<PulseOutcomes> = (0..cfg.n_runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = run_rng(cfg.seed, run);
            let (a1, a2) = draw(&mut rng);
            let (b1, b2) = draw(&mut rng);
            PulseOutcomes { a1, b1, a2, b2 }
        })
        .collect();

    let n = outcomes.len();
    let col = |f: fn(&PulseOutcomes) -> f64| outcomes.iter().map(f).collect::<Vec<_>>();
    let (a1, b1, a2, b2) = (col(|o| o.a1), col(|o| o.b1), col(|o| o.a2), col(|o| o.b2));
    let (var_a1, var_b1) = (variance(&a1), variance(&b1));
    let sxy = neumaier_sum(outcomes.iter().flat_map(|o| [o.a1 * o.a2, o.b1 * o.b2]));
    let sxx = neumaier_sum(outcomes.iter().flat_map(|o| [o.a1 * o.a1, o.b1 * o.b1]));
    let alpha = sxy / sxx;
    let ss = neumaier_sum(
        outcomes
            .iter()
            .flat_map(|o| [(o.a2 - alpha * o.a1).powi(2), (o.b2 - alpha * o.b1).powi(2)]),
    );
    let cond = ss / (n as f64 - 1.0);
    // Residual variance per observation over both series.
    let resid = ss / (2.0 * n as f64 - 1.0);
    let (expected_cond, expected_alpha) = match cfg.protocol {
        Protocol::EntangleFeedback => {
            let gap = optimal_alpha(cfg.kappa, cfg.beta) - cfg.feedback_gain * cfg.kappa;
            (conditional_variance_sum(cfg.kappa, cfg.beta), gap)
        }
        _ => (
            conditional_variance_sum(cfg.kappa, cfg.beta),
            optimal_alpha(cfg.kappa, cfg.beta),
        ),
    };
    Ok(EntanglementStats {
        mean_a1: mean(&a1),
        var_a1,
        var_a1_se: variance_se(var_a1, n),
        var_b1,
        first_pulse_var_sum: var_a1 + var_b1,
        first_pulse_var_sum_se: (variance_se(var_a1, n).powi(2) + variance_se(var_b1, n).powi(2)).sqrt(),
        second_pulse_var_sum: variance(&a2) + variance(&b2),
        alpha_hat: alpha,
        alpha_se: (resid / sxx).sqrt(),
        cond_var_sum: cond,
        cond_var_sum_se: cond * (1.0 / (n as f64 - 1.0)).sqrt(),
        expected_first_pulse_var_sum: 1.0 + cfg.kappa * cfg.kappa,
        expected_alpha,
        expected_cond_var_sum: expected_cond,
        outcomes,
    })
}

/// Closed-form second-pulse variance sum for the configured protocol.
pub fn expected_second_pulse_var_sum(cfg: &TrajectoryConfig) -> f64 {
    match cfg.protocol {
        Protocol::EntangleFeedback => feedback_variance_sum(cfg.kappa, cfg.beta, cfg.feedback_gain),
        _ => 1.0 + cfg.kappa * cfg.kappa,
    }
}

fn regression(x: &[f64], y: &[f64]) -> (f64, f64) {
    let sxy = neumaier_sum(x.iter().zip(y).map(|(a, b)| a * b));
    let sxx = neumaier_sum(x.iter().map(|a| a * a));
    let slope = sxy / sxx;
    let resid = neumaier_sum(x.iter().zip(y).map(|(a, b)| (b - slope * a).powi(2))) / (x.len() as f64 - 1.0);
    (slope, resid)
}

fn run_memory(cfg: &TrajectoryConfig) -> Result<MemoryStats> {
    let vacuum_in = GaussianState::vacuum(vec![ModeLabel::light(1)])?;
    let (stored, report) = memory_store(&vacuum_in, cfg.kappa, cfg.feedback_gain, cfg.beta, cfg.zeta)?;
    let kr = cfg.readout_kappa;
    // Readout noise is input independent; the mean is κ_r times the stored
    // mean, which is linear in the input.
    let sd_x = (memory_readout(&stored, kr, true)?.var_snu * VACUUM_VARIANCE).sqrt();
    let sd_p = (memory_readout(&stored, kr, false)?.var_snu * VACUUM_VARIANCE).sqrt();
    let spread = cfg.n0.sqrt();
    let (g_ba, g_f) = (report.gain_ba, report.gain_f);
    let outcomes: Vec<MemoryOutcome> = (0..cfg.n_runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = run_rng(cfg.seed, run);
            let x0 = spread * normal(&mut rng);
            let p0 = spread * normal(&mut rng);
            let read_x = run % 2 == 0;
            let readout = if read_x {
                kr * g_ba * p0 + sd_x * normal(&mut rng)
            } else {
                -kr * g_f * x0 + sd_p * normal(&mut rng)
            };
            MemoryOutcome {
                x0,
                p0,
                read_x,
                readout,
            }
        })
        .collect();

    let split = |want_x: bool| -> (Vec<f64>, Vec<f64>) {
        outcomes
            .iter()
            .filter(|o| o.read_x == want_x)
            .map(|o| (if want_x { o.p0 } else { o.x0 }, o.readout))
            .unzip()
    };
    let (in_x, out_x) = split(true);
    let (in_p, out_p) = split(false);
    if in_x.len() < 2 || in_p.len() < 2 {
        return Err(Error::invalid(
            "memory runs need at least two readouts per quadrature",
        ));
    }
    let (slope_x, resid_x) = regression(&in_x, &out_x);
    let (slope_p, resid_p) = regression(&in_p, &out_p);
    let to_atomic = |resid: f64| (resid / VACUUM_VARIANCE - 1.0) / (kr * kr);
    let se = |resid: f64, n: usize| variance_se(resid / VACUUM_VARIANCE, n) / (kr * kr);
    let gain_ba_hat = slope_x / kr;
    let gain_f_hat = -slope_p / kr;
    let var_x_hat = to_atomic(resid_x);
    let var_p_hat = to_atomic(resid_p);
    Ok(MemoryStats {
        gain_ba_hat,
        gain_f_hat,
        var_x_hat,
        var_x_se: se(resid_x, in_x.len()),
        var_p_hat,
        var_p_se: se(resid_p, in_p.len()),
        fidelity_hat: memory_fidelity(
            gain_ba_hat,
            gain_f_hat,
            var_x_hat.max(0.0),
            var_p_hat.max(0.0),
            cfg.n0,
        )?,
        expected_var_x: report.var_x,
        expected_var_p: report.var_p,
        expected_fidelity: report.fidelity_at(cfg.n0)?,
        outcomes,
    })
}

/// Runs `cfg.n_runs` trajectories on the current rayon pool.
pub fn run_trajectories(cfg: &TrajectoryConfig) -> Result<TrajectoryStats> {
    cfg.validate()?;
    let (entanglement, memory) = match cfg.protocol {
        Protocol::Memory => (None, Some(run_memory(cfg)?)),
        _ => (Some(run_entanglement(cfg)?), None),
    };
    Ok(TrajectoryStats {
        n_runs: cfg.n_runs,
        seed: cfg.seed,
        protocol: cfg.protocol,
        entanglement,
        memory,
    })
}

/// As [`run_trajectories`] on a dedicated pool of `threads` workers.
pub fn run_trajectories_with_threads(cfg: &TrajectoryConfig, threads: usize) -> Result<TrajectoryStats> {
    with_threads(Some(threads), || run_trajectories(cfg))
}

/// Runs `f` on a pool capped at `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let Some(threads) = threads else {
        return f();
    };
    if threads == 0 {
        return Err(Error::invalid("thread count must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build thread pool: {e}")))?;
    pool.install(f)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Kappa,
    KappaSq,
    Beta,
    Zeta,
    FeedbackGain,
    N0,
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kappa" => Ok(SweepParameter::Kappa),
            "kappa_sq" => Ok(SweepParameter::KappaSq),
            "beta" => Ok(SweepParameter::Beta),
            "zeta" => Ok(SweepParameter::Zeta),
            "feedback_gain" => Ok(SweepParameter::FeedbackGain),
            "n0" => Ok(SweepParameter::N0),
            _ => Err(Error::invalid(format!(
                "unknown sweep parameter '{s}' (expected kappa, kappa_sq, beta, zeta, feedback_gain or n0)"
            ))),
        }
    }
}

impl SweepParameter {
    pub fn apply(self, cfg: &TrajectoryConfig, value: f64) -> Result<TrajectoryConfig> {
        let mut c = cfg.clone();
        match self {
            SweepParameter::Kappa => c.kappa = value,
            SweepParameter::KappaSq => {
                if value < 0.0 {
                    return Err(Error::invalid("kappa_sq must be non-negative"));
                }
                c.kappa = value.sqrt()
            }
            SweepParameter::Beta => c.beta = value,
            SweepParameter::Zeta => c.zeta = value,
            SweepParameter::FeedbackGain => c.feedback_gain = value,
            SweepParameter::N0 => c.n0 = value,
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub stats: TrajectoryStats,
}

/// One set of trajectories per grid value, all with the template's seed.
pub fn sweep(template: &TrajectoryConfig, parameter: SweepParameter, grid: &[f64]) -> Result<Vec<SweepRow>> {
    grid.iter()
        .map(|&value| {
            let cfg = parameter.apply(template, value)?;
            Ok(SweepRow {
                value,
                stats: run_trajectories(&cfg)?,
            })
        })
        .collect()
}

/// Empirical covariance of a set of outcome vectors, for diagnostics.
pub fn sample_covariance(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let d = rows.first().map(Vec::len).unwrap_or(0);
    if n < 2 || d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("need at least two rows of equal, non-zero length"));
    }
    let means: Vec<f64> = (0..d)
        .map(|j| mean(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect();
    Ok(DMatrix::from_fn(d, d, |i, j| {
        neumaier_sum(rows.iter().map(|r| (r[i] - means[i]) * (r[j] - means[j]))) / (n as f64 - 1.0)
    }))
}
