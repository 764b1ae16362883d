//! Flat `key = value` experiment configuration.
//!
//! Resolution order: command defaults, then the config file, then flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use l1pca::{BetaMode, SolverConfig};

use crate::error::CliError;

/// Keys accepted by every command, with their descriptions.
const KEYS: &[(&str, &str)] = &[
    ("out", "output directory"),
    ("seed", "master seed"),
    ("reps", "repetitions"),
    ("source", "synthetic | planted | csv | libsvm"),
    ("path", "dataset file for csv/libsvm sources"),
    ("d", "feature dimension of generated data"),
    ("n", "sample count of generated data"),
    ("k", "subspace dimension (auto = energy rule, cluster only)"),
    ("sigma", "noise level of synthetic data"),
    (
        "separation",
        "cluster-mean distance of planted data, in noise units",
    ),
    ("alpha", "P-block proximal weight"),
    ("beta", "Q-block proximal weight (fixed mode)"),
    ("beta_mode", "fixed | adaptive"),
    ("beta_lower", "adaptive Q weight lower bound"),
    ("beta_upper", "adaptive Q weight upper bound"),
    ("gamma", "extrapolation weight in [0,1]"),
    ("max_iters", "iteration cap"),
    ("tol", "stopping tolerance on the iterate step"),
    (
        "theory_mode",
        "enforce the step-size conditions of the convergence theory",
    ),
    (
        "dense_extrapolation",
        "form the d x d extrapolated matrix explicitly",
    ),
    ("energy", "energy fraction for choosing k"),
    ("image", "clean PGM image"),
    ("corrupted", "directory of nine corrupted PGM images"),
    (
        "variants",
        "bench variants name:alpha:beta:gamma, comma separated",
    ),
    ("report", "saved report.json to check"),
];

fn base_defaults() -> Vec<(&'static str, &'static str)> {
    vec![
        ("out", "out"),
        ("seed", "0"),
        ("reps", "1"),
        ("source", "synthetic"),
        ("path", ""),
        ("d", "50"),
        ("n", "200"),
        ("k", "5"),
        ("sigma", "0.5"),
        ("separation", "10"),
        ("alpha", "1e-7"),
        ("beta", "100"),
        ("beta_mode", "fixed"),
        ("beta_lower", "1"),
        ("beta_upper", "1e9"),
        ("gamma", "1"),
        ("max_iters", "1000"),
        ("tol", "1e-6"),
        ("theory_mode", "false"),
        ("dense_extrapolation", "false"),
        ("energy", "0.8"),
        ("image", ""),
        ("corrupted", ""),
        ("variants", "palme:1e-7:100:1,palm:1e-7:10:0"),
        ("report", ""),
    ]
}

/// Defaults for one command.
pub fn defaults(command: &str) -> Vec<(&'static str, &'static str)> {
    let mut d = base_defaults();
    let mut set = |key: &str, value: &'static str| {
        d.iter_mut().find(|(k, _)| *k == key).expect("known key").1 = value;
    };
    match command {
        "cluster" => {
            set("source", "planted");
            set("d", "50");
            set("n", "400");
            set("k", "auto");
            set("sigma", "1");
        }
        "reconstruct" => {
            set("k", "2");
            set("tol", "1e-3");
        }
        "bench" => set("reps", "10"),
        _ => {}
    }
    d
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

fn check_key(key: &str) -> Result<(), CliError> {
    if KEYS.iter().any(|(k, _)| *k == key) {
        Ok(())
    } else {
        Err(CliError::Config(format!("unknown key {key:?}")))
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", i + 1)))?;
        let k = k.trim();
        check_key(k)?;
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl Config {
    pub fn resolve(
        command: &str,
        file: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> = defaults(command)
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            values.extend(parse_pairs(&text)?);
        }
        for (k, v) in overrides {
            check_key(k)?;
            values.insert(k.clone(), v.clone());
        }
        let cfg = Self { values };
        if cfg.get::<usize>("reps")? < 1 {
            return Err(CliError::Config("reps must be at least 1".into()));
        }
        for key in ["path", "image", "corrupted", "report"] {
            let p = cfg.str(key);
            if !p.is_empty() && !Path::new(p).exists() {
                return Err(CliError::Config(format!("{key} = {p} does not exist")));
            }
        }
        Ok(cfg)
    }

    pub fn from_map(values: BTreeMap<String, String>) -> Self {
        Self { values }
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.str(key);
        raw.parse()
            .map_err(|_| CliError::Config(format!("{key} = {raw:?} is not valid")))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let p = self.str(key);
        (!p.is_empty()).then(|| PathBuf::from(p))
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.str("out"))
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    pub fn with(&self, key: &str, value: impl Into<String>) -> Self {
        let mut c = self.clone();
        c.values.insert(key.to_string(), value.into());
        c
    }

    pub fn solver(&self) -> Result<SolverConfig, CliError> {
        let beta = match self.str("beta_mode") {
            "fixed" => BetaMode::Fixed {
                beta: self.get("beta")?,
            },
            "adaptive" => BetaMode::Adaptive {
                lower: self.get("beta_lower")?,
                upper: self.get("beta_upper")?,
            },
            other => {
                return Err(CliError::Config(format!(
                    "beta_mode {other:?} is not fixed|adaptive"
                )))
            }
        };
        let cfg = SolverConfig {
            alpha: self.get("alpha")?,
            beta,
            gamma: self.get("gamma")?,
            max_iters: self.get("max_iters")?,
            tol: self.get("tol")?,
            seed: self.get("seed")?,
            theory_mode: self.get("theory_mode")?,
            dense_extrapolation: self.get("dense_extrapolation")?,
            keep_snapshots: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The resolved configuration in file syntax, keys sorted.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

/// Key help for `--help` output.
pub fn key_help() -> String {
    let mut s = String::from("Config keys:\n");
    for (k, d) in KEYS {
        let _ = writeln!(s, "  {k:<20} {d}");
    }
    s
}
