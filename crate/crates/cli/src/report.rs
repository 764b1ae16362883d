//! Trace CSV and report JSON.

use l1pca::solver::DecreaseReport;
use l1pca::{RunReport, TraceRecord};
use serde_json::{json, Map, Value};

use crate::error::CliError;
use crate::output::sha256_hex;

pub const SCHEMA_ID: &str = "l1pca-report/1";
pub const TRACE_HEADER: [&str; 6] = ["k", "phi", "h", "dP", "dQ", "gap"];

/// Trace rows in shortest round-trip decimal form.
pub fn trace_csv(records: &[TraceRecord]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(TRACE_HEADER).map_err(err)?;
    for r in records {
        w.write_record([
            r.k.to_string(),
            r.phi.to_string(),
            r.h.to_string(),
            r.d_p.to_string(),
            r.d_q.to_string(),
            r.gap.to_string(),
        ])
        .map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

/// Parses a trace written by [`trace_csv`]; `beta` and `elapsed` are zero.
pub fn parse_trace(bytes: &[u8]) -> Result<Vec<TraceRecord>, CliError> {
    let corrupt = |msg: String| CliError::Data(format!("corrupt trace: {msg}"));
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(|e| corrupt(e.to_string()))?;
    if header.iter().ne(TRACE_HEADER) {
        return Err(corrupt(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| corrupt(e.to_string()))?;
        if row.len() != 6 {
            return Err(corrupt(format!("row {} has {} fields", i + 1, row.len())));
        }
        let f = |j: usize| -> Result<f64, CliError> {
            row[j]
                .parse()
                .map_err(|_| corrupt(format!("row {}: bad number {:?}", i + 1, &row[j])))
        };
        let k: usize = row[0]
            .parse()
            .map_err(|_| corrupt(format!("row {}: bad index", i + 1)))?;
        if k != i {
            return Err(corrupt(format!("row {} has k = {k}", i + 1)));
        }
        out.push(TraceRecord {
            k,
            phi: f(1)?,
            h: f(2)?,
            d_p: f(3)?,
            d_q: f(4)?,
            gap: f(5)?,
            beta: 0.0,
            elapsed: 0.0,
        });
    }
    Ok(out)
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

pub fn decrease_json(d: &DecreaseReport) -> Value {
    json!({
        "kappa1": d.kappa1,
        "violations": d.violations.len(),
        "kappa1_lower": d.kappa1_lower,
        "violations_lower": d.violations_lower.len(),
    })
}

pub fn result_json(report: &RunReport, decrease: &DecreaseReport) -> Value {
    json!({
        "objective": report.final_objective,
        "tev": report.tev.map_or(Value::Null, finite_or_null),
        "criticality": report.criticality,
        "alpha_condition_holds": report.alpha_condition_holds,
        "stop_reason": report.stop_reason,
        "iterations": report.iterations(),
        "gamma_used": report.trace.gamma,
        "gamma_star": report.trace.gamma_star.map_or(Value::Null, finite_or_null),
        "potential_weight": report.trace.potential_weight,
        "decrease": decrease_json(decrease),
    })
}

fn hashed_body(report: &Map<String, Value>) -> Result<String, CliError> {
    let mut body = report.clone();
    body.remove("content_hash");
    body.remove("timing");
    Ok(sha256_hex(&serde_json::to_vec(&Value::Object(body))?))
}

/// Fills in `content_hash`, computed over everything except itself and
/// `timing`. File contents enter through the `files` digests.
pub fn seal(report: &mut Map<String, Value>) -> Result<(), CliError> {
    let h = hashed_body(report)?;
    report.insert("content_hash".into(), Value::String(h));
    Ok(())
}

pub fn verify_seal(report: &Map<String, Value>) -> Result<(), CliError> {
    let stored = report
        .get("content_hash")
        .and_then(Value::as_str)
        .ok_or_else(|| CliError::Data("corrupt report: no content_hash".into()))?;
    if hashed_body(report)? != stored {
        return Err(CliError::Data(
            "corrupt report: content hash mismatch".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(k: usize, phi: f64) -> TraceRecord {
        TraceRecord {
            k,
            phi,
            h: phi + 0.1,
            d_p: 0.0,
            d_q: 1e-17,
            gap: 1.0 / 3.0,
            beta: 0.0,
            elapsed: 0.0,
        }
    }

    #[test]
    fn trace_round_trip() {
        let recs = vec![rec(0, -12.5), rec(1, -13.000000000000002)];
        let bytes = trace_csv(&recs).unwrap();
        assert!(bytes.starts_with(b"k,phi,h,dP,dQ,gap\n"));
        assert_eq!(parse_trace(&bytes).unwrap(), recs);
    }

    #[test]
    fn truncated_trace_is_corrupt() {
        let bytes = trace_csv(&[rec(0, 1.0), rec(1, 0.5)]).unwrap();
        let cut = &bytes[..bytes.len() - 30];
        assert!(matches!(parse_trace(cut), Err(CliError::Data(_))));
        assert!(parse_trace(b"k,phi\n0,1\n").is_err());
    }

    #[test]
    fn seal_ignores_timing() {
        let mut m = Map::new();
        m.insert("a".into(), json!(1));
        m.insert("timing".into(), json!({"wall_time": 1.0}));
        seal(&mut m).unwrap();
        m.insert("timing".into(), json!({"wall_time": 2.0}));
        verify_seal(&m).unwrap();
        m.insert("a".into(), json!(2));
        assert!(verify_seal(&m).is_err());
    }
}
