use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use l1pca::data::{read_pgm, write_pgm, GrayImage, PgmFormat};
use l1pca::pipeline::{corrupted_set, reconstruct_images};
use serde_json::json;

use super::{config_json, mean, positive_k};
use crate::config::Config;
use crate::error::CliError;
use crate::output::{json_bytes, Outputs};

fn load_pgm(path: &Path) -> Result<GrayImage, CliError> {
    let f = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    read_pgm(BufReader::new(f)).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn pgm_bytes(img: &GrayImage) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    write_pgm(img, PgmFormat::Binary, &mut buf)?;
    Ok(buf)
}

pub fn run(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let mut solver_cfg = cfg.solver()?;
    solver_cfg.keep_snapshots = false;
    let k = positive_k(cfg, 1)?;
    let clean = cfg.path("image").map(|p| load_pgm(&p)).transpose()?;
    let mut files = Outputs::default();

    let images = match cfg.path("corrupted") {
        Some(dir) => {
            let mut paths: Vec<_> = std::fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(CliError::Data(format!(
                    "no .pgm files in {}",
                    dir.display()
                )));
            }
            paths
                .iter()
                .map(|p| load_pgm(p))
                .collect::<Result<Vec<_>, _>>()?
        }
        None => {
            let clean = clean
                .as_ref()
                .ok_or_else(|| CliError::Config("reconstruct needs image or corrupted".into()))?;
            let set =
                corrupted_set(clean, solver_cfg.seed).map_err(|e| CliError::Data(e.to_string()))?;
            for (i, img) in set.iter().enumerate() {
                files.write(out, &format!("corrupted_{}.pgm", i + 1), &pgm_bytes(img)?)?;
            }
            set
        }
    };

    let outcome =
        reconstruct_images(&images, clean.as_ref(), k, &solver_cfg).map_err(|e| match e {
            l1pca::Error::Image(_) | l1pca::Error::Shape(_) => CliError::Data(e.to_string()),
            e => e.into(),
        })?;
    for (i, img) in outcome.reconstructed.iter().enumerate() {
        files.write(out, &format!("recon_{}.pgm", i + 1), &pgm_bytes(img)?)?;
    }
    let mean_rmse = outcome.rmse.as_deref().and_then(mean);
    let doc = json!({
        "command": "reconstruct",
        "config": config_json(cfg),
        "k": k,
        "images": images.len(),
        "objective": outcome.report.final_objective,
        "iterations": outcome.report.iterations(),
        "stop_reason": outcome.report.stop_reason,
        "rmse": outcome.rmse,
        "mean_rmse": mean_rmse,
        "files": files.to_json(),
        "timing": { "wall_time": outcome.report.wall_time },
    });
    files.write(out, "reconstruct.json", &json_bytes(&doc)?)?;
    match mean_rmse {
        Some(m) => println!("reconstructed {} images, mean RMSE {m}", images.len()),
        None => println!("reconstructed {} images", images.len()),
    }
    Ok(())
}
