use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spinecho::io::{load_config, set_config_value};
use spinecho::{EchoError, ExperimentConfig};

mod commands;

/// Three-pulse optical spin-echo simulator and fitter.
///
/// Exit codes: 0 success, 1 check or fit failure, 2 usage or config error.
#[derive(Debug, Parser)]
#[command(name = "spinecho", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one fringe scan over τ₂ and write scan.csv.
    SimulateFringe(CommonArgs),
    /// Simulate a visibility-vs-separation sweep and write curve.csv.
    SimulateEcho(CommonArgs),
    /// Fit a drift-corrected sinusoid to a scan CSV and write fringe_fit.json.
    FitFringe(FitFringeArgs),
    /// Fit the visibility decay law to a curve CSV and write decay_fit.json.
    FitDecay(FitDecayArgs),
    /// Tabulate the echo amplitude over a grid of pulse angles.
    SweepAngles(SweepAnglesArgs),
    /// Compare the closed-form ensemble signal with quadrature and Monte Carlo.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = "spinecho-out")]
    out: PathBuf,
    #[command(flatten)]
    overrides: ConfigFlags,
}

/// One flag per config key. Values are parsed with the config-file rules.
#[derive(Debug, Args)]
struct ConfigFlags {
    /// Larmor frequency in Hz.
    #[arg(long, value_name = "HZ")]
    larmor_hz: Option<String>,
    /// Gaussian spread of the Larmor angular frequency, rad/s.
    #[arg(long, value_name = "RAD_PER_S")]
    sigma: Option<String>,
    /// Initial spin polarization in [-1, 1].
    #[arg(long)]
    p0: Option<String>,
    /// Intrinsic decoherence time, s.
    #[arg(long, value_name = "S")]
    t2: Option<String>,
    /// Pulse-induced dephasing rate, 1/s.
    #[arg(long, value_name = "PER_S")]
    rate_r: Option<String>,
    /// Relaxation time of the pulse-induced dephasing, s.
    #[arg(long, value_name = "S")]
    t_h: Option<String>,
    /// Coherence retention slope: D(θ) = 1 - slope·|θ|.
    #[arg(long)]
    fidelity_slope: Option<String>,
    /// First pulse angle, rad.
    #[arg(long)]
    theta1: Option<String>,
    /// Second pulse angle, rad.
    #[arg(long)]
    theta2: Option<String>,
    /// Third pulse angle, rad.
    #[arg(long)]
    theta3: Option<String>,
    /// First delay, s. Snapped to a whole number of repetition periods.
    #[arg(long, value_name = "S")]
    tau1: Option<String>,
    /// Laser repetition time, s.
    #[arg(long, value_name = "S")]
    rep_time: Option<String>,
    /// Total span of the τ₂ offset scan, s.
    #[arg(long, value_name = "S")]
    scan_span: Option<String>,
    /// Number of τ₂ offsets per scan.
    #[arg(long, value_name = "N")]
    scan_points: Option<String>,
    /// Mean counts at unit flip probability.
    #[arg(long)]
    counts_scale: Option<String>,
    /// Linear count drift, counts/s of τ₂ offset.
    #[arg(long)]
    drift_rate: Option<String>,
    /// Detector noise: none, poisson or gaussian:<relative sd>.
    #[arg(long)]
    noise: Option<String>,
    /// Random seed.
    #[arg(long, value_name = "N")]
    seed: Option<String>,
    /// Largest total separation 2τ in an echo sweep, s.
    #[arg(long, value_name = "S")]
    sweep_max: Option<String>,
    /// Number of separations in an echo sweep.
    #[arg(long, value_name = "N")]
    sweep_points: Option<String>,
}

impl ConfigFlags {
    fn pairs(&self) -> [(&'static str, &Option<String>); 20] {
        [
            ("larmor_hz", &self.larmor_hz),
            ("sigma", &self.sigma),
            ("p0", &self.p0),
            ("t2", &self.t2),
            ("rate_r", &self.rate_r),
            ("t_h", &self.t_h),
            ("fidelity_slope", &self.fidelity_slope),
            ("theta1", &self.theta1),
            ("theta2", &self.theta2),
            ("theta3", &self.theta3),
            ("tau1", &self.tau1),
            ("rep_time", &self.rep_time),
            ("scan_points", &self.scan_points),
            ("scan_span", &self.scan_span),
            ("counts_scale", &self.counts_scale),
            ("drift_rate", &self.drift_rate),
            ("noise", &self.noise),
            ("seed", &self.seed),
            ("sweep_max", &self.sweep_max),
            ("sweep_points", &self.sweep_points),
        ]
    }
}

#[derive(Debug, Args)]
struct FitFringeArgs {
    /// Scan CSV to fit.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Seed fringe angular frequency, rad/s. Defaults to 2π·larmor_hz.
    #[arg(long, value_name = "RAD_PER_S")]
    freq_guess: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct FitDecayArgs {
    /// Visibility curve CSV to fit.
    #[arg(long, value_name = "PATH")]
    input: PathBuf,
    /// Starting V₀.
    #[arg(long)]
    guess_v0: Option<f64>,
    /// Starting T₂, s.
    #[arg(long, value_name = "S")]
    guess_t2: Option<f64>,
    /// Starting pulse-induced rate R, 1/s.
    #[arg(long, value_name = "PER_S")]
    guess_rate_r: Option<f64>,
    /// Starting T_h, s.
    #[arg(long, value_name = "S")]
    guess_t_h: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct SweepAnglesArgs {
    /// Grid steps per angle over [0, π]; the grid spacing is π/steps.
    #[arg(long, default_value_t = 100)]
    steps: usize,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Number of random parameter sets.
    #[arg(long, default_value_t = 50)]
    n: usize,
    /// Monte-Carlo samples per case.
    #[arg(long, default_value_t = 100_000)]
    mc_samples: usize,
    /// Flip the sign of the echo term in the closed form (self-test).
    #[arg(long, hide = true)]
    forced_fault: bool,
    #[command(flatten)]
    common: CommonArgs,
}

/// Failure classes, mapped to exit codes 2 and 1.
#[derive(Debug)]
enum CliError {
    Usage(String),
    Failed(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn failed(msg: impl Into<String>) -> Self {
        CliError::Failed(msg.into())
    }
}

impl From<EchoError> for CliError {
    fn from(e: EchoError) -> Self {
        match e {
            EchoError::InvalidArgument(_) | EchoError::Parse { .. } | EchoError::Io(_) => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Failed(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Default config, then the config file, then flags.
fn resolve_config(common: &CommonArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            load_config(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    for (key, value) in common.overrides.pairs() {
        if let Some(v) = value {
            set_config_value(&mut cfg, key, v)?;
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::SimulateFringe(a) => commands::simulate_fringe(&a),
        Command::SimulateEcho(a) => commands::simulate_echo(&a),
        Command::FitFringe(a) => commands::fit_fringe(&a),
        Command::FitDecay(a) => commands::fit_decay(&a),
        Command::SweepAngles(a) => commands::sweep_angles(&a),
        Command::OracleCheck(a) => commands::oracle_check(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
