mod bench;
mod check;
mod cluster;
mod reconstruct;
mod solve;
mod synth;

use std::path::PathBuf;

use serde_json::Value;

use crate::config::Config;
use crate::error::CliError;
use crate::output::write_atomic;

pub const COMMANDS: [&str; 6] = ["synth", "solve", "bench", "cluster", "reconstruct", "check"];

pub fn run(command: &str, cfg: &Config) -> Result<(), CliError> {
    let out = begin(cfg)?;
    match command {
        "synth" => synth::run(cfg, &out),
        "solve" => solve::run(cfg, &out),
        "bench" => bench::run(cfg, &out),
        "cluster" => cluster::run(cfg, &out),
        "reconstruct" => reconstruct::run(cfg, &out),
        "check" => check::run(cfg, &out),
        other => Err(CliError::Config(format!("unknown command {other:?}"))),
    }
}

/// Creates the output directory and writes the resolved config into it.
fn begin(cfg: &Config) -> Result<PathBuf, CliError> {
    let out = cfg.out_dir();
    write_atomic(&out, "config.resolved", cfg.render().as_bytes())?;
    Ok(out)
}

/// Resolved config as recorded in reports; the output directory is left out
/// so reruns elsewhere hash the same.
fn config_json(cfg: &Config) -> Value {
    cfg.values()
        .iter()
        .filter(|(k, _)| k.as_str() != "out")
        .map(|(k, v)| (k.clone(), Value::String(v.clone())))
        .collect::<serde_json::Map<_, _>>()
        .into()
}

fn positive_k(cfg: &Config, min: usize) -> Result<usize, CliError> {
    let k: usize = cfg.get("k")?;
    if k < min {
        return Err(CliError::Config(format!("k must be >= {min}, got {k}")));
    }
    Ok(k)
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}
