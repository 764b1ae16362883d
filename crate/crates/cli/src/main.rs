//! `l1pca` experiment runner.

mod commands;
mod config;
mod dataset;
mod error;
mod output;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use config::Config;
use error::CliError;

#[derive(Parser)]
#[command(
    name = "l1pca",
    version,
    about = "Rotationally invariant L1-norm PCA experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic data with a planted subspace.
    Synth(Flags),
    /// Run the solver and write a trace and report.
    Solve(Flags),
    /// Repeat solver variants over derived seeds.
    Bench(Flags),
    /// Subspace projection followed by k-means.
    Cluster(Flags),
    /// Reconstruct a corrupted image set.
    Reconstruct(Flags),
    /// Re-verify a saved report.
    Check(Flags),
}

#[derive(Args, Debug)]
struct Flags {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long = "max-iters")]
    max_iters: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    #[arg(long)]
    path: Option<String>,
    #[arg(long)]
    report: Option<String>,
    #[arg(long)]
    image: Option<String>,
    #[arg(long)]
    corrupted: Option<String>,
    /// Any config key, as `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Flags {
    fn overrides(&self) -> Result<Vec<(String, String)>, CliError> {
        let mut out = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set {s:?} is not key=value")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        let named = [
            ("out", &self.out),
            ("seed", &self.seed),
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("gamma", &self.gamma),
            ("k", &self.k),
            ("tol", &self.tol),
            ("max_iters", &self.max_iters),
            ("reps", &self.reps),
            ("path", &self.path),
            ("report", &self.report),
            ("image", &self.image),
            ("corrupted", &self.corrupted),
        ];
        for (key, value) in named {
            if let Some(v) = value {
                out.push((key.to_string(), v.clone()));
            }
        }
        Ok(out)
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let (name, flags) = match &cli.command {
        Command::Synth(f) => ("synth", f),
        Command::Solve(f) => ("solve", f),
        Command::Bench(f) => ("bench", f),
        Command::Cluster(f) => ("cluster", f),
        Command::Reconstruct(f) => ("reconstruct", f),
        Command::Check(f) => ("check", f),
    };
    debug_assert!(commands::COMMANDS.contains(&name));
    let cfg = Config::resolve(name, flags.config.as_deref(), &flags.overrides()?)?;
    commands::run(name, &cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = Cli::command()
        .mut_subcommands(|s| s.after_help(config::key_help()))
        .get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
