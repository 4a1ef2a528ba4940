mod commands;
mod report;

use clap::{Args, Parser, Subcommand, ValueEnum};
use report::{Format, Verdict};
use serde::Serialize;
use serde_json::json;
use std::path::PathBuf;
use std::process::ExitCode;
use subriemann::Error;

#[derive(Parser, Debug)]
#[command(name = "subriemann", version, about = "Sub-Riemannian curvature, diffusion and geodesic checks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Serialize)]
pub struct Global {
    /// Built-in model: euclidean(d), heisenberg(n), free_step2_d3, sphere2, su2.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Structure file in srs-v1 format.
    #[arg(long, global = true)]
    pub structure: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub points: Option<usize>,
    #[arg(long, global = true)]
    pub fields: Option<usize>,
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    #[serde(skip)]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// Worker threads; defaults to the number of logical cores.
    #[serde(skip)]
    #[arg(long, global = true, env = "SRC_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendArg {
    Exact,
    Fd,
}

#[derive(Args, Debug, Serialize, Default)]
pub struct ParamArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub rho1: Option<f64>,
    #[arg(long)]
    pub rho2: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Bracket relations, skew-symmetries and the Hörmander rank at sample points.
    Validate,
    /// Horizontal and vertical Bochner identities and [L, Z] = 0.
    VerifyBochner {
        #[arg(long, value_enum, default_value_t = BackendArg::Exact)]
        backend: BackendArg,
        /// Test functions in testfn-v1 format instead of random polynomials.
        #[arg(long)]
        functions: Option<PathBuf>,
    },
    /// Check CD(ρ₁, ρ₂, κ) through the curvature forms.
    Certify {
        #[command(flatten)]
        params: ParamArgs,
        /// Comma-separated ρ₂ grid for a Pareto scan of the largest ρ₁.
        #[arg(long, value_delimiter = ',')]
        pareto: Option<Vec<f64>>,
    },
    /// Constants derived from (ρ₁, ρ₂, κ, d).
    Constants {
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Integrate a normal geodesic.
    Geodesic {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        from: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        velocity: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        a: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1.0)]
        time: f64,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// Also write the trajectory as CSV.
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Carnot-Carathéodory distance by shooting.
    Distance {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        from: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        to: Vec<f64>,
        #[arg(long, default_value_t = 32)]
        starts: usize,
    },
    /// Simulate the diffusion generated by L.
    Simulate {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        from: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1.0)]
        time: f64,
        /// Write the ensemble in SRHE format.
        #[arg(long)]
        ensemble: Option<PathBuf>,
        /// Record every k-th step of every path in the ensemble file.
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        kernel_at: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1.0)]
        bandwidth: f64,
    },
    /// Li-Yau gradient estimate for P_t of a Gaussian bump.
    CheckLiyau {
        #[command(flatten)]
        params: ParamArgs,
        #[arg(long, default_value_t = 1.0)]
        time: f64,
        /// Override (a, c) with a(t) = a and c(t) = c / t.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        coefficients: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.05)]
        stencil: f64,
        /// Width of the Gaussian bump f centred at the base point.
        #[arg(long, default_value_t = 0.5)]
        width: f64,
    },
    /// Parabolic Harnack inequality for the heat kernel.
    CheckHarnack {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        from: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        to: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        via: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.5)]
        s_time: f64,
        #[arg(long, default_value_t = 1.0)]
        t_time: f64,
        #[arg(long, default_value_t = 1.0)]
        bandwidth: f64,
    },
    /// Monte Carlo ball volumes and the log-log growth exponent.
    Volume {
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        radii: Vec<f64>,
    },
    /// First nonzero eigenvalue of −L on a compact model.
    Lambda1 {
        /// Coarse cells per chart coordinate; the fine grid doubles them.
        #[arg(long, value_delimiter = ',')]
        cells: Option<Vec<usize>>,
    },
    /// Validation, Bochner, certification and constants for every built-in model.
    ReportAll {
        /// Include the eigenvalue solver on the compact models.
        #[arg(long)]
        lambda1: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::VerifyBochner { .. } => "verify-bochner",
            Command::Certify { .. } => "certify",
            Command::Constants { .. } => "constants",
            Command::Geodesic { .. } => "geodesic",
            Command::Distance { .. } => "distance",
            Command::Simulate { .. } => "simulate",
            Command::CheckLiyau { .. } => "check-liyau",
            Command::CheckHarnack { .. } => "check-harnack",
            Command::Volume { .. } => "volume",
            Command::Lambda1 { .. } => "lambda1",
            Command::ReportAll { .. } => "report-all",
        }
    }
}

/// Failure modes of a run, each with its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> CliError {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                Error::IterationLimit { .. } | Error::InsufficientSampling(_) | Error::Boundary { .. } | Error::Hormander { .. } => 1,
                _ => 2,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

fn run(cli: Cli) -> Result<Verdict, CliError> {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    let mut config = json!({
        "command": cli.command.name(),
        "global": cli.global,
        "args": cli.command,
    });
    if let Some(path) = &cli.global.structure {
        let text = std::fs::read(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        config["structure_sha256"] = json!(report::config_hash(&json!(String::from_utf8_lossy(&text))));
    }
    let outcome = commands::dispatch(&cli.global, &cli.command)?;
    let text = report::render(cli.command.name(), &config, cli.global.seed, &outcome, cli.global.format);
    match &cli.global.out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
        None => print!("{text}"),
    }
    Ok(outcome.verdict)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code.clamp(0, 2) as u8);
        }
    };
    match run(cli) {
        Ok(Verdict::Fail) => ExitCode::from(1),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
