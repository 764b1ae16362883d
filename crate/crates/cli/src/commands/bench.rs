use std::path::Path;

use l1pca::data::initial_point;
use l1pca::kernels::map_indexed;
use l1pca::linalg::top_k_left_singular;
use l1pca::metrics::tev_against;
use l1pca::{solve, DataMatrix, SolverConfig, StiefelPoint};

use super::{mean, positive_k};
use crate::config::Config;
use crate::dataset::load_matrix;
use crate::error::CliError;
use crate::output::Outputs;

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub name: String,
    pub alpha: String,
    pub beta: String,
    pub gamma: String,
}

pub fn parse_variants(spec: &str) -> Result<Vec<Variant>, CliError> {
    let variants: Vec<Variant> = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| match s.split(':').collect::<Vec<_>>()[..] {
            [name, alpha, beta, gamma] if !name.is_empty() => Ok(Variant {
                name: name.into(),
                alpha: alpha.into(),
                beta: beta.into(),
                gamma: gamma.into(),
            }),
            _ => Err(CliError::Config(format!(
                "variant {s:?} is not name:alpha:beta:gamma"
            ))),
        })
        .collect::<Result<_, _>>()?;
    if variants.is_empty() {
        return Err(CliError::Config("bench needs at least one variant".into()));
    }
    Ok(variants)
}

struct Rep {
    seed: u64,
    x: DataMatrix,
    start: StiefelPoint,
    reference: StiefelPoint,
}

struct Run {
    tev: f64,
    objective: f64,
    iterations: usize,
    stop: String,
    wall: f64,
}

fn one_run(rep: &Rep, cfg: &SolverConfig) -> Result<Run, String> {
    let mut cfg = cfg.clone();
    cfg.seed = rep.seed;
    let report = solve(&rep.x, &cfg, rep.start.clone(), None).map_err(|e| e.to_string())?;
    let tev = tev_against(&rep.x, &report.final_q, &rep.reference).map_err(|e| e.to_string())?;
    Ok(Run {
        tev,
        objective: report.final_objective,
        iterations: report.iterations(),
        stop: format!("{:?}", report.stop_reason).to_lowercase(),
        wall: report.wall_time,
    })
}

pub fn run(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let variants = parse_variants(cfg.str("variants"))?;
    let configs: Vec<SolverConfig> = variants
        .iter()
        .map(|v| {
            let mut c = cfg
                .with("alpha", v.alpha.clone())
                .with("beta", v.beta.clone())
                .with("gamma", v.gamma.clone())
                .solver()?;
            c.keep_snapshots = false;
            Ok(c)
        })
        .collect::<Result<_, CliError>>()?;
    let reps: usize = cfg.get("reps")?;
    let seed: u64 = cfg.get("seed")?;
    let k = positive_k(cfg, 1)?;

    let reps: Vec<Rep> = (0..reps as u64)
        .map(|r| {
            let seed = seed.wrapping_add(r);
            let x = load_matrix(cfg, seed)?;
            let start =
                initial_point(x.d(), k, seed).map_err(|e| CliError::Config(e.to_string()))?;
            let reference = top_k_left_singular(&x, k)?;
            Ok(Rep {
                seed,
                x,
                start,
                reference,
            })
        })
        .collect::<Result<_, CliError>>()?;

    let nv = variants.len();
    let runs = map_indexed(reps.len() * nv, |i| {
        one_run(&reps[i / nv], &configs[i % nv])
    });

    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record([
        "variant",
        "rep",
        "seed",
        "status",
        "tev",
        "objective",
        "iterations",
        "stop_reason",
        "wall_time",
    ])
    .map_err(csv_err)?;
    let mut failures = 0;
    for (v, variant) in variants.iter().enumerate() {
        let (mut tevs, mut objs, mut iters, mut walls) = (vec![], vec![], vec![], vec![]);
        for (r, rep) in reps.iter().enumerate() {
            let row = match &runs[r * nv + v] {
                Ok(run) => {
                    tevs.push(run.tev);
                    objs.push(run.objective);
                    iters.push(run.iterations as f64);
                    walls.push(run.wall);
                    vec![
                        "ok".into(),
                        run.tev.to_string(),
                        run.objective.to_string(),
                        run.iterations.to_string(),
                        run.stop.clone(),
                        run.wall.to_string(),
                    ]
                }
                Err(e) => {
                    failures += 1;
                    log::error!("{} rep {r}: {e}", variant.name);
                    vec![
                        format!("error: {e}"),
                        "".into(),
                        "".into(),
                        "".into(),
                        "".into(),
                        "".into(),
                    ]
                }
            };
            let mut record = vec![variant.name.clone(), r.to_string(), rep.seed.to_string()];
            record.extend(row);
            w.write_record(&record).map_err(csv_err)?;
        }
        let fmt = |v: &[f64]| mean(v).map_or(String::new(), |m| m.to_string());
        w.write_record([
            variant.name.clone(),
            "mean".into(),
            String::new(),
            format!("{}/{} ok", tevs.len(), reps.len()),
            fmt(&tevs),
            fmt(&objs),
            fmt(&iters),
            String::new(),
            fmt(&walls),
        ])
        .map_err(csv_err)?;
        println!(
            "{:<12} mean TEV {}  mean iterations {}",
            variant.name,
            fmt(&tevs),
            fmt(&iters)
        );
    }
    let mut files = Outputs::default();
    files.write(
        out,
        "bench.csv",
        &w.into_inner().map_err(|e| CliError::Data(e.to_string()))?,
    )?;

    let mut p = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["rep".to_string(), "seed".to_string()];
    header.extend(variants.iter().map(|v| format!("tev_{}", v.name)));
    header.extend(variants.iter().map(|v| format!("iterations_{}", v.name)));
    header.extend(
        variants
            .iter()
            .skip(1)
            .map(|v| format!("tev_diff_{}", v.name)),
    );
    p.write_record(&header).map_err(csv_err)?;
    for (r, rep) in reps.iter().enumerate() {
        let row_runs = &runs[r * nv..(r + 1) * nv];
        let mut record = vec![r.to_string(), rep.seed.to_string()];
        record.extend(
            row_runs
                .iter()
                .map(|x| x.as_ref().map_or(String::new(), |x| x.tev.to_string())),
        );
        record.extend(row_runs.iter().map(|x| {
            x.as_ref()
                .map_or(String::new(), |x| x.iterations.to_string())
        }));
        record.extend(row_runs.iter().skip(1).map(|x| match (&row_runs[0], x) {
            (Ok(a), Ok(b)) => (b.tev - a.tev).to_string(),
            _ => String::new(),
        }));
        p.write_record(&record).map_err(csv_err)?;
    }
    files.write(
        out,
        "bench_paired.csv",
        &p.into_inner().map_err(|e| CliError::Data(e.to_string()))?,
    )?;

    if failures == runs.len() {
        return Err(CliError::Solver("every bench run failed".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_list() {
        let v = parse_variants("palme:1e-7:100:1, palm:1e-7:10:0").unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v[1].gamma, "0");
        assert!(parse_variants("").is_err());
        assert!(parse_variants("a:1:2").is_err());
    }
}
