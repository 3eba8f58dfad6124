//! `bayes-align`: batch front end for Bayesian alignment of point
//! configurations.
//!
//! Exit status is 0 on success, 1 on invalid input or configuration and 2 on
//! failures while running or writing results.

mod commands;
mod config;
mod output;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{GenerateOptions, RunKind};
use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bayes-align", version, about = "Bayesian alignment of unlabelled point configurations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one MCMC chain and write matches.csv, summary.json and trace.csv.
    Align(RunArgs),
    /// Run random-start chains, screen them with a pilot threshold and report
    /// the best survivor.
    Multistart(RunArgs),
    /// Fit the EM baseline.
    Em(RunArgs),
    /// Simulate a synthetic instance with known truth.
    Generate(GenerateArgs),
    /// Optimal matchings and breakpoints from a matches.csv file.
    Report(ReportArgs),
}

/// Command-line values override the config file. Every flag maps to the
/// config key of the same name with '-' replaced by '_'.
#[derive(Debug, Args)]
struct RunArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// fixed-transform, rotation-2d or rotation-3d.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    x: Option<String>,
    #[arg(long)]
    y: Option<String>,
    /// Transform matrix file, row-major; required in fixed-transform mode.
    #[arg(long)]
    a: Option<String>,
    /// Truth file for precision and recall.
    #[arg(long)]
    truth: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// Also write an SVG plot of the declared matches.
    #[arg(long)]
    plot: bool,
    /// Match weight ρ/λ, in the coordinate units of the data.
    #[arg(long)]
    kappa_match: Option<String>,
    /// Prior mean of τ, comma separated.
    #[arg(long)]
    mu_tau: Option<String>,
    #[arg(long)]
    sigma_tau: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    /// Colour weight for like-coloured matches.
    #[arg(long, allow_hyphen_values = true)]
    gamma: Option<String>,
    /// Colour weight for unlike-coloured matches.
    #[arg(long, allow_hyphen_values = true)]
    delta: Option<String>,
    /// Probability of proposing an add or delete.
    #[arg(long)]
    p_star: Option<String>,
    /// Matrix Fisher concentration, row-major, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    f0: Option<String>,
    /// Total sweeps, including burn-in.
    #[arg(long)]
    sweeps: Option<String>,
    #[arg(long)]
    burn_in: Option<String>,
    #[arg(long)]
    thin: Option<String>,
    /// Matching updates per sweep.
    #[arg(long)]
    m_updates: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Comma-separated loss ratios K.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    starts: Option<String>,
    /// Sweeps of the screening run of each start.
    #[arg(long)]
    short_sweeps: Option<String>,
    #[arg(long)]
    pilots: Option<String>,
    #[arg(long)]
    pilot_sweeps: Option<String>,
    #[arg(long)]
    pilot_quantile: Option<String>,
    /// Fixed screening threshold; skips the pilot runs.
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<String>,
    #[arg(long)]
    em_iterations: Option<String>,
    #[arg(long)]
    em_starts: Option<String>,
}

impl RunArgs {
    fn overrides(&self) -> BTreeMap<String, String> {
        let pairs: [(&str, &Option<String>); 29] = [
            ("mode", &self.mode),
            ("x", &self.x),
            ("y", &self.y),
            ("a", &self.a),
            ("truth", &self.truth),
            ("out", &self.out),
            ("kappa_match", &self.kappa_match),
            ("mu_tau", &self.mu_tau),
            ("sigma_tau", &self.sigma_tau),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("gamma", &self.gamma),
            ("delta", &self.delta),
            ("p_star", &self.p_star),
            ("f0", &self.f0),
            ("sweeps", &self.sweeps),
            ("burn_in", &self.burn_in),
            ("thin", &self.thin),
            ("m_updates", &self.m_updates),
            ("seed", &self.seed),
            ("k", &self.k),
            ("starts", &self.starts),
            ("short_sweeps", &self.short_sweeps),
            ("pilots", &self.pilots),
            ("pilot_sweeps", &self.pilot_sweeps),
            ("pilot_quantile", &self.pilot_quantile),
            ("threshold", &self.threshold),
            ("em_iterations", &self.em_iterations),
            ("em_starts", &self.em_starts),
        ];
        let mut map: BTreeMap<String, String> = pairs
            .iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        if self.plot {
            map.insert("plot".into(), "true".into());
        }
        map
    }

    fn resolve(&self) -> Result<RunConfig, CliError> {
        RunConfig::resolve(self.config.as_deref(), &self.overrides())
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Expected number of hidden points in the region.
    #[arg(long, default_value_t = 60.0)]
    expected_points: f64,
    /// Side of the centred cube holding the hidden points.
    #[arg(long, default_value_t = 40.0)]
    side: f64,
    #[arg(long, default_value_t = 0.2)]
    p_x: f64,
    #[arg(long, default_value_t = 0.2)]
    p_y: f64,
    #[arg(long, default_value_t = 3.0)]
    rho: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Translation, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    tau: Vec<f64>,
    /// Draw the true rotation uniformly instead of using the identity.
    #[arg(long)]
    random_rotation: bool,
    /// Colour labels, comma separated, drawn with equal probability.
    #[arg(long, value_delimiter = ',')]
    colours: Vec<String>,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    gamma: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    delta: f64,
    /// Minimum distance between hidden points.
    #[arg(long)]
    min_spacing: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    matches: PathBuf,
    /// Comma-separated loss ratios K.
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    k: Vec<f64>,
    #[arg(long)]
    truth: Option<PathBuf>,
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Align(args) => commands::run(RunKind::Align, &args.resolve()?),
        Command::Multistart(args) => commands::run(RunKind::Multistart, &args.resolve()?),
        Command::Em(args) => commands::run(RunKind::Em, &args.resolve()?),
        Command::Generate(args) => commands::generate_command(&GenerateOptions {
            dim: args.dim,
            expected_points: args.expected_points,
            side: args.side,
            p_x: args.p_x,
            p_y: args.p_y,
            rho: args.rho,
            sigma: args.sigma,
            tau: args.tau,
            random_rotation: args.random_rotation,
            colours: args.colours,
            gamma: args.gamma,
            delta: args.delta,
            min_spacing: args.min_spacing,
            seed: args.seed,
            out: args.out,
        }),
        Command::Report(args) => commands::report_command(&args.matches, &args.k, args.truth.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
