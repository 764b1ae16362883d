//! Dataset sources named in the config.

use std::fs::File;
use std::io::BufReader;

use l1pca::data::{
    center_values, gen_planted_clusters, gen_synthetic, parse_libsvm, read_csv_matrix,
    LabeledDataset,
};
use l1pca::DataMatrix;
use serde_json::json;

use crate::config::Config;
use crate::error::CliError;
use crate::output::sha256_hex;

/// SHA-256 of the little-endian bytes of `x`, row-major.
pub fn fingerprint(x: &DataMatrix) -> String {
    let bytes: Vec<u8> = x.values().iter().flat_map(|v| v.to_le_bytes()).collect();
    sha256_hex(&bytes)
}

pub fn describe(x: &DataMatrix, source: &str) -> serde_json::Value {
    json!({
        "source": source,
        "d": x.d(),
        "n": x.n(),
        "fingerprint": fingerprint(x),
    })
}

fn open(cfg: &Config) -> Result<BufReader<File>, CliError> {
    let path = cfg
        .path("path")
        .ok_or_else(|| CliError::Config(format!("source {} needs path", cfg.str("source"))))?;
    File::open(&path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn data_err(e: l1pca::Error) -> CliError {
    CliError::data(e)
}

/// Labeled data for clustering; `seed` drives generated sources.
pub fn load_labeled(cfg: &Config, seed: u64) -> Result<LabeledDataset, CliError> {
    match cfg.str("source") {
        "planted" => gen_planted_clusters(
            cfg.get("d")?,
            cfg.get("n")?,
            cfg.get("separation")?,
            cfg.get("sigma")?,
            seed,
        )
        .map_err(|e| CliError::Config(e.to_string())),
        "libsvm" => parse_libsvm(open(cfg)?, None).map_err(data_err),
        other => Err(CliError::Config(format!("source {other:?} has no labels"))),
    }
}

/// Row-centered data matrix; `seed` drives generated sources.
pub fn load_matrix(cfg: &Config, seed: u64) -> Result<DataMatrix, CliError> {
    match cfg.str("source") {
        "synthetic" => {
            let k: usize = cfg.get("k")?;
            gen_synthetic(cfg.get("d")?, cfg.get("n")?, k, cfg.get("sigma")?, seed)
                .map(|(x, _)| x)
                .map_err(|e| CliError::Config(e.to_string()))
        }
        "csv" => Ok(center_values(read_csv_matrix(open(cfg)?).map_err(data_err)?).0),
        "planted" | "libsvm" => Ok(center_values(load_labeled(cfg, seed)?.x.into_inner()).0),
        other => Err(CliError::Config(format!(
            "source {other:?} is not synthetic|planted|csv|libsvm"
        ))),
    }
}
