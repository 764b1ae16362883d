use std::path::Path;

use l1pca::pipeline::cluster_pipeline;
use serde_json::json;

use super::{config_json, mean};
use crate::config::Config;
use crate::dataset::load_labeled;
use crate::error::CliError;
use crate::output::{json_bytes, write_atomic};

pub fn run(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let k = match cfg.str("k") {
        "auto" => None,
        _ => Some(super::positive_k(cfg, 2)?),
    };
    let energy: f64 = cfg.get("energy")?;
    let reps: usize = cfg.get("reps")?;
    let base = cfg.solver()?;
    let mut runs = Vec::new();
    let (mut acc, mut walls) = (vec![], vec![]);
    for r in 0..reps as u64 {
        let seed = base.seed.wrapping_add(r);
        let data = load_labeled(cfg, seed)?;
        if data.classes().len() < 2 {
            return Err(CliError::Data("dataset has a single class".into()));
        }
        let mut solver_cfg = base.clone();
        solver_cfg.seed = seed;
        solver_cfg.keep_snapshots = false;
        let outcome = cluster_pipeline(&data, k, energy, &solver_cfg)?;
        acc.push(outcome.accuracy);
        walls.push(outcome.report.wall_time);
        runs.push(json!({
            "rep": r,
            "seed": seed,
            "k": outcome.k,
            "accuracy": outcome.accuracy,
            "iterations": outcome.report.iterations(),
            "objective": outcome.report.final_objective,
        }));
    }
    let mean_acc = mean(&acc).unwrap_or(f64::NAN);
    let doc = json!({
        "command": "cluster",
        "config": config_json(cfg),
        "runs": runs,
        "mean_accuracy": mean_acc,
        "timing": { "mean_wall_time": mean(&walls), "wall_times": walls },
    });
    write_atomic(out, "cluster.json", &json_bytes(&doc)?)?;
    println!("mean accuracy {mean_acc} over {reps} runs");
    Ok(())
}
