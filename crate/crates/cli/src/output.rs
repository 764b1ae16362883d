//! Atomic file output and content hashing.

use std::io::Write;
use std::path::Path;

use ndarray::ArrayView2;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` to `dir/name` through a temp file and a rename.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| CliError::Data(format!("cannot write to {}: {e}", dir.display())))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(name))
        .map_err(|e| CliError::Data(format!("cannot write {name}: {e}")))?;
    Ok(())
}

pub fn matrix_csv(m: ArrayView2<f64>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    l1pca::data::write_csv_matrix(m, &mut buf)?;
    Ok(buf)
}

pub fn json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

/// Files written by one command, with their hashes.
#[derive(Debug, Default)]
pub struct Outputs {
    pub files: Vec<(String, String)>,
}

impl Outputs {
    pub fn write(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(dir, name, bytes)?;
        self.files.push((name.to_string(), sha256_hex(bytes)));
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        self.files
            .iter()
            .map(|(n, h)| (n.clone(), serde_json::Value::String(h.clone())))
            .collect::<serde_json::Map<_, _>>()
            .into()
    }
}
