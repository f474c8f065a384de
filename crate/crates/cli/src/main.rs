//! `ebm-spectral`: clustered eigenvalues of the extended Burgers model.
//!
//! Every subcommand exits with status 0 only if its results met the residual
//! tolerances; failures print `{"error": kind, "message": ...}` on stderr.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "ebm-spectral", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// All roots of P_N^k for each k in the range.
    Spectrum {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        range: RangeArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Roots of the limit polynomial P_N with secular residuals.
    Limit {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Convergence of each cluster to the limit spectrum.
    Converge {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        range: RangeArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Explicit k0 certificate; with --bounds also the measured bound report.
    K0 {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        range: RangeArgs,
        /// Measure every spectral bound over the k range (JSON only).
        #[arg(long)]
        bounds: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Recover D, r, b from two observation files.
    Invert {
        first: PathBuf,
        second: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Write the cluster at one k as an observation file.
    Observe {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        k: u32,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recovery errors under seeded relative noise on the clusters.
    Perturb {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1)]
        k1: u32,
        #[arg(long, default_value_t = 2)]
        k2: u32,
        #[arg(long, default_value_t = 1e-10)]
        noise: f64,
        #[arg(long, default_value_t = 100)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Prony approximation of a stretched exponential on a rate ladder.
    Fit(FitArgs),
    /// Spectrum, limit, and convergence datasets for the figure presets.
    ReproduceFigures {
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = ebm_spectral::experiments::DEFAULT_K_MAX)]
        k_max: u32,
    },
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct ModelArgs {
    /// Model config file (TOML).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Named preset, e.g. n5-d1 or toy.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args, Debug)]
struct RangeArgs {
    #[arg(long, default_value_t = 1)]
    k_min: u32,
    #[arg(long, default_value_t = ebm_spectral::experiments::DEFAULT_K_MAX)]
    k_max: u32,
}

#[derive(Args, Debug)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Model config whose `[stretched]` block and rates are used.
    #[arg(long, conflicts_with_all = ["tau", "beta", "rates", "n"])]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Comma-separated rate ladder.
    #[arg(long, value_delimiter = ',', conflicts_with = "n")]
    rates: Option<Vec<f64>>,
    /// Use the ladder r_i = 5 i, i = 1..n.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum, default_value_t = Mode::LeastSquares)]
    mode: Mode,
    #[arg(long, default_value_t = 0.1)]
    t_min: f64,
    #[arg(long, default_value_t = 10.0)]
    t_max: f64,
    /// Number of equally spaced grid points.
    #[arg(long, default_value_t = 200)]
    points: usize,
    /// Instantaneous modulus D; defaults to h = sum s_i.
    #[arg(long = "instantaneous")]
    d: Option<f64>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    EqualContribution,
    LeastSquares,
}

fn report(kind: &str, message: &str) {
    let body = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{body}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            report("usage", e.to_string().trim());
            return ExitCode::from(2);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.kind(), &e.to_string());
            ExitCode::FAILURE
        }
    }
}
