//! `qnd`: closed-form and Monte Carlo runs of the QND light-atom protocols,
//! calibration tables and spectroscopy fits.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad configuration or usage.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use qnd_core::config::{OutputFormat, RunConfig};

use crate::output::Failure;

#[derive(Parser, Debug)]
#[command(name = "qnd", version, about = "Gaussian QND light-atom interface simulator")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE", conflicts_with = "reference")]
    config: Option<PathBuf>,

    /// Use the bundled reference parameters as the configuration.
    #[arg(long = "reference", global = true)]
    reference: bool,

    /// Output directory for reports and data files.
    #[arg(long, global = true, env = "QND_OUT_DIR", value_name = "DIR")]
    out: Option<PathBuf>,

    /// Which files to write.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap on Monte Carlo worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
    Both,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => OutputFormat::Json,
            Format::Csv => OutputFormat::Csv,
            Format::Both => OutputFormat::Both,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Two-cell entanglement by conditioning or feedback.
    Entangle(EntangleArgs),
    /// Direct-mapping memory of a coherent light state.
    Memory(MemoryArgs),
    /// κ² calibration, motional averaging and linewidth tables.
    Calibrate(CalibrateArgs),
    /// Synthesize or fit a magneto-optical resonance spectrum.
    Mors(MorsArgs),
    /// Tensor Stark shifts of the Zeeman lines.
    Stark(StarkArgs),
}

#[derive(Args, Debug)]
pub struct EntangleArgs {
    #[arg(long)]
    pub kappa_sq: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Feed the first outcome back instead of conditioning on it.
    #[arg(long)]
    pub feedback_gain: Option<f64>,
    /// Use the optimal feedback gain α/κ.
    #[arg(long, conflicts_with = "feedback_gain")]
    pub optimal_feedback: bool,
    #[arg(long, conflicts_with = "monte_carlo")]
    pub closed_form: bool,
    #[arg(long)]
    pub monte_carlo: bool,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Parameter to sweep: kappa_sq, theta_F, beta or feedback_gain.
    #[arg(long, requires = "grid")]
    pub sweep: Option<String>,
    /// `start:stop:step` (stop inclusive) or a comma list.
    #[arg(long, requires = "sweep")]
    pub grid: Option<String>,
    /// Also write the per-run outcomes of a Monte Carlo run.
    #[arg(long)]
    pub dump_outcomes: bool,
}

#[derive(Args, Debug)]
pub struct MemoryArgs {
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub feedback_gain: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub zeta: Option<f64>,
    /// Mean photon numbers of the input ensembles.
    #[arg(long, value_delimiter = ',')]
    pub n0: Option<Vec<f64>>,
    /// Feedback gains `g` to tabulate.
    #[arg(long, value_name = "GRID")]
    pub gain_sweep: Option<String>,
    /// Report the gain that maximizes the fidelity at each n0.
    #[arg(long)]
    pub optimize: bool,
    #[arg(long)]
    pub monte_carlo: bool,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub readout_kappa: Option<f64>,
    #[arg(long)]
    pub dump_outcomes: bool,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long = "power-mw")]
    pub power_mw: Option<f64>,
    #[arg(long = "duration-ms")]
    pub duration_ms: Option<f64>,
    #[arg(long = "detuning-mhz", allow_hyphen_values = true)]
    pub detuning_mhz: Option<f64>,
    #[arg(long = "theta-deg", allow_hyphen_values = true)]
    pub theta_deg: Option<f64>,
    #[arg(long = "cell-area-cm2")]
    pub cell_area_cm2: Option<f64>,
    #[arg(long = "sigma-sq")]
    pub sigma_sq: Option<f64>,
    /// Probe durations (ms) for the motional-averaging table.
    #[arg(long, value_name = "GRID")]
    pub durations: Option<String>,
    /// Walkers for the journey simulation (0 skips it).
    #[arg(long, default_value_t = 0)]
    pub walkers: usize,
    /// Atomic constants TOML replacing the bundled cesium table.
    #[arg(long, value_name = "FILE")]
    pub constants: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MorsArgs {
    #[arg(long = "larmor-khz")]
    pub larmor_khz: Option<f64>,
    #[arg(long = "linewidth-hz")]
    pub linewidth_hz: Option<f64>,
    /// `2F+1` populations from m = -F; fully pumped when absent.
    #[arg(long, value_delimiter = ',')]
    pub populations: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub qz_formula: Option<QzArg>,
    #[arg(long = "span-hz")]
    pub span_hz: Option<f64>,
    #[arg(long = "step-hz")]
    pub step_hz: Option<f64>,
    /// Drive dwell time per scan point, for the adiabaticity check.
    #[arg(long = "dwell-s")]
    pub dwell_s: Option<f64>,
    /// Fit this `frequency_Hz,signal_au` CSV instead of synthesizing.
    #[arg(long, value_name = "FILE")]
    pub fit: Option<PathBuf>,
    #[arg(long)]
    pub fit_amplitude: bool,
    #[arg(long, value_name = "FILE")]
    pub constants: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum QzArg {
    Quadratic,
    Linear,
}

#[derive(Args, Debug)]
pub struct StarkArgs {
    /// Probe polarization angle (degrees).
    #[arg(long, allow_hyphen_values = true)]
    pub angle: Option<f64>,
    /// Use the exact magic angle acos(-1/3)/2.
    #[arg(long, conflicts_with = "angle")]
    pub magic_angle: bool,
    /// Photon flux (photons/s).
    #[arg(long)]
    pub flux: Option<f64>,
    #[arg(long = "beam-area-cm2")]
    pub beam_area_cm2: Option<f64>,
    #[arg(long = "detuning-mhz", allow_hyphen_values = true)]
    pub detuning_mhz: Option<f64>,
    /// `time_ms,photon_flux` CSV; writes the compensating bias field.
    #[arg(long, value_name = "FILE")]
    pub flux_profile: Option<PathBuf>,
    /// Tensor-to-vector noise ratio Noise(S_y)/Noise(S_z) for the
    /// laser-noise estimate.
    #[arg(long, default_value_t = 1.0)]
    pub noise_ratio: f64,
    #[arg(long, value_name = "FILE")]
    pub constants: Option<PathBuf>,
}

/// Settings shared by every command.
pub struct Context {
    pub config: RunConfig,
    pub out_dir: PathBuf,
    pub format: OutputFormat,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

fn context(cli: &Cli) -> Result<Context, Failure> {
    let config = if cli.reference {
        RunConfig::reference()
    } else if let Some(path) = &cli.config {
        RunConfig::from_path(path)?
    } else {
        RunConfig::default()
    };
    let section = config.output.clone().unwrap_or_default();
    let out_dir = cli
        .out
        .clone()
        .or_else(|| section.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    let format = cli.format.map(OutputFormat::from).unwrap_or(section.format);
    if cli.threads == Some(0) {
        return Err(Failure::config("--threads must be at least 1"));
    }
    Ok(Context {
        config,
        out_dir,
        format,
        seed: cli.seed,
        threads: cli.threads,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = context(&cli).and_then(|ctx| match &cli.command {
        Command::Entangle(a) => commands::entangle(&ctx, a),
        Command::Memory(a) => commands::memory(&ctx, a),
        Command::Calibrate(a) => commands::calibrate(&ctx, a),
        Command::Mors(a) => commands::mors(&ctx, a),
        Command::Stark(a) => commands::stark(&ctx, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("qnd: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
