use std::path::Path;

use l1pca::data::gen_synthetic;
use serde_json::json;

use super::positive_k;
use crate::config::Config;
use crate::error::CliError;
use crate::output::{json_bytes, matrix_csv, sha256_hex, Outputs};

pub fn run(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let (d, n, sigma, seed): (usize, usize, f64, u64) = (
        cfg.get("d")?,
        cfg.get("n")?,
        cfg.get("sigma")?,
        cfg.get("seed")?,
    );
    let k = positive_k(cfg, 1)?;
    let (x, truth) =
        gen_synthetic(d, n, k, sigma, seed).map_err(|e| CliError::Config(e.to_string()))?;

    let mut files = Outputs::default();
    files.write(out, "X.csv", &matrix_csv(x.values())?)?;
    files.write(out, "q_true.csv", &matrix_csv(truth.q_true.values())?)?;
    let truth_json = json!({
        "d": d,
        "n": n,
        "k": k,
        "sigma": sigma,
        "seed": seed,
        "noiseless": sigma == 0.0,
    });
    files.write(out, "truth.json", &json_bytes(&truth_json)?)?;

    let listing = files.to_json();
    let hash = sha256_hex(&serde_json::to_vec(&listing)?);
    let manifest = json!({
        "files": listing,
        "noiseless": sigma == 0.0,
        "content_hash": hash,
    });
    crate::output::write_atomic(out, "manifest.json", &json_bytes(&manifest)?)?;
    println!(
        "wrote {d}x{n} data to {} (content hash {hash})",
        out.display()
    );
    Ok(())
}
