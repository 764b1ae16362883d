//! End-to-end experiments: subspace clustering and image reconstruction.

use crate::data::{
    center_features, corrupt_image, crop_to_multiple, initial_point, stack_images, GrayImage,
    LabeledDataset,
};
use crate::error::{Error, Result};
use crate::metrics::{
    choose_k_energy, clustering_accuracy, kmeans, project, reconstruct, rmse, RunReport,
    KMEANS_RESTARTS,
};
use crate::solver::solve;
use crate::types::SolverConfig;

/// Energy fraction used to pick the subspace dimension.
pub const DEFAULT_ENERGY: f64 = 0.8;

#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    /// Subspace dimension used.
    pub k: usize,
    pub accuracy: f64,
    pub predicted: Vec<i64>,
    pub report: RunReport,
}

/// Centers, picks `K` by the energy rule unless given, fits the subspace from
/// a seeded random start, and runs k-means on the projections with one cluster
/// per distinct label.
pub fn cluster_pipeline(
    data: &LabeledDataset,
    k_override: Option<usize>,
    energy: f64,
    config: &SolverConfig,
) -> Result<ClusterOutcome> {
    let classes = data.classes().len();
    if classes < 2 {
        return Err(Error::domain("clustering needs at least two classes"));
    }
    let x = center_features(&data.x);
    let k = match k_override {
        Some(k) => k,
        None => choose_k_energy(&x, energy)?,
    };
    let init = initial_point(x.d(), k, config.seed)?;
    let report = solve(&x, config, init, None)?;
    let coords = project(&x, &report.final_q)?;
    let clusters = kmeans(coords.view(), classes, config.seed, KMEANS_RESTARTS)?;
    let predicted: Vec<i64> = clusters.labels.iter().map(|&l| l as i64).collect();
    let accuracy = clustering_accuracy(&predicted, &data.labels)?;
    Ok(ClusterOutcome {
        k,
        accuracy,
        predicted,
        report,
    })
}

/// Nine corrupted copies of `clean`; copy `i` has outliers in block `i`,
/// seeded with `seed + i`.
pub fn corrupted_set(clean: &GrayImage, seed: u64) -> Result<Vec<GrayImage>> {
    (1..=9)
        .map(|b| corrupt_image(clean, b, seed.wrapping_add(b as u64)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ReconstructionOutcome {
    pub reconstructed: Vec<GrayImage>,
    /// Per-image RMSE against the clean image, when one was supplied.
    pub rmse: Option<Vec<f64>>,
    pub report: RunReport,
}

/// Stacks the images, fits a `k`-dimensional subspace and maps `Q Q' X` back
/// to images (means restored, clipped to `[0, 255]`).
pub fn reconstruct_images(
    images: &[GrayImage],
    clean: Option<&GrayImage>,
    k: usize,
    config: &SolverConfig,
) -> Result<ReconstructionOutcome> {
    let stack = stack_images(images)?;
    let init = initial_point(stack.x.d(), k, config.seed)?;
    let report = solve(&stack.x, config, init, None)?;
    let fitted = reconstruct(&stack.x, &report.final_q)?;
    let reconstructed = stack.restore(fitted.values())?;
    let rmse = match clean {
        None => None,
        Some(c) => {
            let c = crop_to_multiple(c, 6)?;
            if (c.height(), c.width()) != (stack.height, stack.width) {
                return Err(Error::Image("clean image does not match the stack".into()));
            }
            Some(
                reconstructed
                    .iter()
                    .map(|r| rmse(r.pixels(), c.pixels()))
                    .collect::<Result<_>>()?,
            )
        }
    };
    Ok(ReconstructionOutcome {
        reconstructed,
        rmse,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_planted_clusters;
    use ndarray::Array2;

    #[test]
    fn separable_clusters_are_recovered() {
        let ds = gen_planted_clusters(10, 120, 10.0, 1.0, 5).unwrap();
        let out = cluster_pipeline(&ds, None, DEFAULT_ENERGY, &SolverConfig::default()).unwrap();
        assert!(out.accuracy >= 0.95, "accuracy {}", out.accuracy);
    }

    #[test]
    fn single_class_is_rejected() {
        let mut ds = gen_planted_clusters(4, 10, 10.0, 1.0, 5).unwrap();
        ds.labels.iter_mut().for_each(|l| *l = 3);
        assert!(cluster_pipeline(&ds, None, DEFAULT_ENERGY, &SolverConfig::default()).is_err());
    }

    #[test]
    fn rank_two_stack_fit_beats_its_span() {
        // L1 fits need not contain the data span, so only the objective is
        // compared against it.
        let a = Array2::from_shape_fn((6, 6), |(i, j)| (i * 20 + j * 5) as f64);
        let b = Array2::from_shape_fn((6, 6), |(i, j)| ((i + j) % 4) as f64 * 30.0);
        let c = Array2::from_shape_fn((6, 6), |(i, j)| ((i * j) % 5) as f64 * 10.0);
        let images: Vec<GrayImage> = (0..9)
            .map(|t| {
                let (u, v) = ((t % 3) as f64 / 2.0, (t / 3) as f64 / 2.0);
                GrayImage::new((&a * u + &b * v + &c) / 3.0).unwrap()
            })
            .collect();
        let cfg = SolverConfig {
            tol: 1e-3,
            ..SolverConfig::default()
        };
        let out = reconstruct_images(&images, None, 2, &cfg).unwrap();
        let stack = stack_images(&images).unwrap();
        let span = crate::linalg::top_k_left_singular(&stack.x, 2).unwrap();
        let span_obj = crate::objective::objective_l(&span, &stack.x).unwrap();
        assert!(out.report.final_objective <= span_obj);
        let fitted = reconstruct(&stack.x, &out.report.final_q).unwrap();
        assert_eq!(out.reconstructed, stack.restore(fitted.values()).unwrap());
    }

    #[test]
    fn corrupted_set_is_seeded() {
        let clean = GrayImage::new(Array2::from_elem((6, 6), 50.0)).unwrap();
        assert_eq!(
            corrupted_set(&clean, 3).unwrap(),
            corrupted_set(&clean, 3).unwrap()
        );
        assert_eq!(corrupted_set(&clean, 3).unwrap().len(), 9);
    }
}
