use std::path::Path;

use l1pca::data::initial_point;
use l1pca::metrics::tev;
use l1pca::solve;
use l1pca::solver::sufficient_decrease_check;
use serde_json::{json, Map, Value};

use super::{config_json, positive_k};
use crate::config::Config;
use crate::dataset::{describe, load_matrix};
use crate::error::CliError;
use crate::output::{json_bytes, matrix_csv, write_atomic, Outputs};
use crate::report::{result_json, seal, trace_csv, SCHEMA_ID};

pub fn run(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let mut solver_cfg = cfg.solver()?;
    solver_cfg.keep_snapshots = false;
    let x = load_matrix(cfg, solver_cfg.seed)?;
    let k = positive_k(cfg, 1)?;
    let init =
        initial_point(x.d(), k, solver_cfg.seed).map_err(|e| CliError::Config(e.to_string()))?;

    let mut report = solve(&x, &solver_cfg, init, None)?;
    report.tev = tev(&x, &report.final_q).ok();
    let decrease = sufficient_decrease_check(&report.trace, &solver_cfg)?;

    let mut files = Outputs::default();
    files.write(out, "trace.csv", &trace_csv(&report.trace.records)?)?;
    files.write(out, "p.csv", &matrix_csv(report.final_p.values())?)?;
    files.write(out, "q.csv", &matrix_csv(report.final_q.values())?)?;

    let final_q: Vec<Vec<f64>> = report
        .final_q
        .values()
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect();
    let mut doc = Map::new();
    doc.insert("schema".into(), json!(SCHEMA_ID));
    doc.insert("command".into(), json!("solve"));
    doc.insert("config".into(), config_json(cfg));
    doc.insert("data".into(), describe(&x, cfg.str("source")));
    doc.insert("result".into(), result_json(&report, &decrease));
    doc.insert("final_q".into(), json!(final_q));
    doc.insert("files".into(), files.to_json());
    seal(&mut doc)?;
    doc.insert("timing".into(), json!({ "wall_time": report.wall_time }));
    write_atomic(out, "report.json", &json_bytes(&Value::Object(doc))?)?;

    println!(
        "{:?} after {} iterations: objective {}, criticality {:e}",
        report.stop_reason,
        report.iterations(),
        report.final_objective,
        report.criticality
    );
    Ok(())
}
