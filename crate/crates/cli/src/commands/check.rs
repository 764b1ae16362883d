use std::collections::BTreeMap;
use std::path::Path;

use l1pca::data::read_csv_matrix;
use l1pca::objective::{objective_l, sign_select};
use l1pca::solver::{
    check_alpha_condition, criticality_residual, sufficient_decrease_check, xt_extrapolated,
};
use l1pca::{RunTrace, SignMatrix, StiefelPoint};
use ndarray::Array2;
use serde_json::{json, Map, Value};

use crate::config::Config;
use crate::dataset::{fingerprint, load_matrix};
use crate::error::CliError;
use crate::output::{json_bytes, sha256_hex, write_atomic};
use crate::report::{parse_trace, verify_seal, SCHEMA_ID};

/// Criticality threshold relative to `1 + ||X||_F`.
pub const CRITICALITY_RTOL: f64 = 1e-5;
/// Agreement required between stored and recomputed scalars.
pub const AGREEMENT_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Status {
    Pass,
    Fail,
    Info,
}

struct Line {
    name: &'static str,
    status: Status,
    detail: String,
}

fn corrupt(msg: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("corrupt report: {msg}"))
}

fn field<'a>(v: &'a Value, path: &[&str]) -> Result<&'a Value, CliError> {
    path.iter()
        .try_fold(v, |v, k| v.get(k))
        .ok_or_else(|| corrupt(format!("missing {}", path.join("."))))
}

fn num(v: &Value, path: &[&str]) -> Result<f64, CliError> {
    field(v, path)?
        .as_f64()
        .ok_or_else(|| corrupt(format!("{} is not a number", path.join("."))))
}

fn agrees(a: f64, b: f64) -> bool {
    (a - b).abs() <= AGREEMENT_RTOL * (1.0 + a.abs().max(b.abs()))
}

fn read_file(dir: &Path, name: &str, files: &Value) -> Result<Vec<u8>, CliError> {
    let expected = files
        .get(name)
        .and_then(Value::as_str)
        .ok_or_else(|| corrupt(format!("{name} not listed")))?;
    let bytes = std::fs::read(dir.join(name)).map_err(|e| corrupt(format!("{name}: {e}")))?;
    if sha256_hex(&bytes) != expected {
        return Err(corrupt(format!(
            "{name} does not match its recorded digest"
        )));
    }
    Ok(bytes)
}

fn q_from_json(v: &Value) -> Result<StiefelPoint, CliError> {
    let rows = v
        .as_array()
        .ok_or_else(|| corrupt("final_q is not an array"))?;
    let k = rows.first().and_then(Value::as_array).map_or(0, Vec::len);
    let mut flat = Vec::with_capacity(rows.len() * k);
    for r in rows {
        let r = r
            .as_array()
            .filter(|r| r.len() == k)
            .ok_or_else(|| corrupt("ragged final_q"))?;
        for e in r {
            flat.push(
                e.as_f64()
                    .ok_or_else(|| corrupt("final_q entry is not a number"))?,
            );
        }
    }
    let m = Array2::from_shape_vec((rows.len(), k), flat).map_err(corrupt)?;
    StiefelPoint::new(m).map_err(corrupt)
}

pub fn run(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let path = cfg
        .path("report")
        .ok_or_else(|| CliError::Config("check needs report = <report.json>".into()))?;
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let doc: Value = serde_json::from_str(&text).map_err(corrupt)?;
    let map = doc
        .as_object()
        .ok_or_else(|| corrupt("not a JSON object"))?;
    if doc.get("schema").and_then(Value::as_str) != Some(SCHEMA_ID) {
        return Err(corrupt("unknown schema"));
    }
    verify_seal(map)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let files = field(&doc, &["files"])?;

    let records = parse_trace(&read_file(dir, "trace.csv", files)?)?;
    let iterations = field(&doc, &["result", "iterations"])?
        .as_u64()
        .ok_or_else(|| corrupt("iterations is not an integer"))? as usize;
    if records.len() != iterations + 1 {
        return Err(corrupt(format!(
            "trace has {} rows, expected {}",
            records.len(),
            iterations + 1
        )));
    }
    let p_values = read_csv_matrix(read_file(dir, "p.csv", files)?.as_slice()).map_err(corrupt)?;
    let p = SignMatrix::new(p_values).map_err(corrupt)?;
    let q = q_from_json(field(&doc, &["final_q"])?)?;

    let run_cfg: BTreeMap<String, String> = field(&doc, &["config"])?
        .as_object()
        .ok_or_else(|| corrupt("config is not an object"))?
        .iter()
        .map(|(k, v)| {
            Ok((
                k.clone(),
                v.as_str()
                    .ok_or_else(|| corrupt("config value is not a string"))?
                    .to_string(),
            ))
        })
        .collect::<Result<_, CliError>>()?;
    let run_cfg = Config::from_map(run_cfg);
    let solver_cfg = run_cfg.solver()?;
    let x = load_matrix(&run_cfg, solver_cfg.seed)?;
    if fingerprint(&x)
        != field(&doc, &["data", "fingerprint"])?
            .as_str()
            .unwrap_or("")
    {
        return Err(CliError::Data(
            "data no longer matches the report fingerprint".into(),
        ));
    }

    let mut lines = Vec::new();
    let objective = objective_l(&q, &x)?;
    let stored_obj = num(&doc, &["result", "objective"])?;
    lines.push(Line {
        name: "objective",
        status: if agrees(objective, stored_obj) {
            Status::Pass
        } else {
            Status::Fail
        },
        detail: format!("recomputed {objective}, reported {stored_obj}"),
    });

    let alpha_holds = check_alpha_condition(&x, &q, solver_cfg.alpha)?;
    lines.push(Line {
        name: "alpha condition",
        status: Status::Info,
        detail: format!(
            "alpha_* = {:e} {}",
            solver_cfg.alpha,
            if alpha_holds {
                "holds"
            } else {
                "does not hold"
            }
        ),
    });

    let threshold = CRITICALITY_RTOL * (1.0 + x.frobenius_norm());
    let selected = xt_extrapolated(&x, &q, &q, 0.0).and_then(|t| sign_select(t.view(), &p))?;
    match criticality_residual(&q, &selected, &x) {
        Ok(r) => {
            let stored = num(&doc, &["result", "criticality"])?;
            let status = if !agrees(r, stored) {
                Status::Fail
            } else if !alpha_holds {
                Status::Info
            } else if r <= threshold {
                Status::Pass
            } else {
                Status::Fail
            };
            lines.push(Line {
                name: "criticality",
                status,
                detail: format!("residual {r:e} (reported {stored:e}, threshold {threshold:e})"),
            });
        }
        Err(e) => lines.push(Line {
            name: "criticality",
            status: Status::Fail,
            detail: e.to_string(),
        }),
    }

    let trace = RunTrace {
        records,
        potential_weight: num(&doc, &["result", "potential_weight"])?,
        gamma: num(&doc, &["result", "gamma_used"])?,
        gamma_star: field(&doc, &["result", "gamma_star"])?.as_f64(),
        ..RunTrace::default()
    };
    let audit = sufficient_decrease_check(&trace, &solver_cfg)?;
    let n_viol = audit.violations.len();
    lines.push(Line {
        name: "sufficient decrease",
        status: match (solver_cfg.theory_mode, n_viol) {
            (false, _) => Status::Info,
            (true, 0) => Status::Pass,
            (true, _) => Status::Fail,
        },
        detail: format!(
            "{n_viol} violations with kappa1 = {:e} ({} with {:e})",
            audit.kappa1,
            audit.violations_lower.len(),
            audit.kappa1_lower
        ),
    });

    let mut summary = Map::new();
    for l in &lines {
        let tag = match l.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Info => "INFO",
        };
        println!("{tag} {}: {}", l.name, l.detail);
        summary.insert(l.name.into(), json!({ "status": tag, "detail": l.detail }));
    }
    write_atomic(out, "check.json", &json_bytes(&Value::Object(summary))?)?;
    let failed: Vec<&str> = lines
        .iter()
        .filter(|l| l.status == Status::Fail)
        .map(|l| l.name)
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(failed.join(", ")))
    }
}
