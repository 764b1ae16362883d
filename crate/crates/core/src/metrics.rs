//! Solution quality and convergence metrics.

use std::ops::Range;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{map_indexed, matmul, matmul_tn};
use crate::linalg::{singular_values, top_k_left_singular};
use crate::objective::objective_h;
use crate::solver::RunTrace;
use crate::types::{frobenius, frobenius_distance, DataMatrix, SignMatrix, StiefelPoint};

pub use crate::solver::RunReport;

/// Explained variation of `Q` relative to the leading `K` left singular
/// vectors of `X`.
pub fn tev(x: &DataMatrix, q: &StiefelPoint) -> Result<f64> {
    let best = top_k_left_singular(x, q.k())?;
    tev_against(x, q, &best)
}

/// [`tev`] with a precomputed reference subspace.
pub fn tev_against(x: &DataMatrix, q: &StiefelPoint, reference: &StiefelPoint) -> Result<f64> {
    if q.d() != x.d() || reference.d() != x.d() || reference.k() != q.k() {
        return Err(Error::shape("TEV operands do not conform"));
    }
    let den = frobenius(matmul_tn(x.values(), reference.values()).view()).powi(2);
    if den == 0.0 {
        return Err(Error::domain("TEV is undefined for zero data"));
    }
    let num = frobenius(matmul_tn(x.values(), q.values()).view()).powi(2);
    Ok(num / den)
}

impl RunReport {
    /// Fills in the TEV of the final subspace.
    pub fn with_tev(mut self, x: &DataMatrix) -> Result<Self> {
        self.tev = Some(tev(x, &self.final_q)?);
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapTraces {
    /// `(k, H(P^k, Q^k) - H(P*, Q*))` for every recorded iterate.
    pub function_gaps: Vec<(usize, f64)>,
    /// `(k, ||Q^k - Q*||_F)` for every stored snapshot.
    pub iterate_gaps: Vec<(usize, f64)>,
    /// `(k, Phi(C^k) - Phi(C^last))`.
    pub potential_gaps: Vec<(usize, f64)>,
}

/// Gaps to a reference point, normally the last iterate of the run.
pub fn gap_traces(
    trace: &RunTrace,
    final_p: &SignMatrix,
    final_q: &StiefelPoint,
    x: &DataMatrix,
) -> Result<GapTraces> {
    if trace.records.is_empty() {
        return Err(Error::MissingTrace("iterate records"));
    }
    if trace.snapshots.is_empty() {
        return Err(Error::MissingTrace("iterate snapshots"));
    }
    let h_star = objective_h(final_p, final_q, x)?;
    let phi_last = trace.records.last().expect("nonempty").phi;
    let function_gaps = trace.records.iter().map(|r| (r.k, r.h - h_star)).collect();
    let potential_gaps = trace
        .records
        .iter()
        .map(|r| (r.k, r.phi - phi_last))
        .collect();
    let iterate_gaps = trace
        .snapshots
        .iter()
        .map(|(k, q)| {
            if q.dim() != final_q.values().dim() {
                return Err(Error::shape(
                    "snapshot shape differs from the final iterate",
                ));
            }
            Ok((*k, frobenius_distance(q.view(), final_q.values())))
        })
        .collect::<Result<_>>()?;
    Ok(GapTraces {
        function_gaps,
        iterate_gaps,
        potential_gaps,
    })
}

/// Least-squares line through `log10(gap)` against the iteration index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Decades per iteration.
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub window: Range<usize>,
}

pub const MIN_RATE_WINDOW: usize = 10;

/// Fits `log10(gap_k) = intercept + slope * k` over the points whose `k`
/// falls in `window`.
pub fn fit_linear_rate(gaps: &[(usize, f64)], window: Range<usize>) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = gaps
        .iter()
        .filter(|(k, _)| window.contains(k))
        .map(|&(k, g)| {
            if g > 0.0 && g.is_finite() {
                Ok((k as f64, g.log10()))
            } else {
                Err(Error::domain(format!(
                    "gap at k = {k} is not positive: {g}"
                )))
            }
        })
        .collect::<Result<_>>()?;
    if pts.len() < MIN_RATE_WINDOW {
        return Err(Error::domain(format!(
            "rate window holds {} points, need at least {MIN_RATE_WINDOW}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r2 = if syy > 0.0 {
        (1.0 - sse / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(RateFit {
        slope,
        intercept,
        r2,
        window,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    /// One centroid per column.
    pub centroids: Array2<f64>,
    pub wcss: f64,
    /// Restart that produced this result.
    pub restart: usize,
}

pub const KMEANS_MAX_ITERS: usize = 300;
pub const KMEANS_RESTARTS: usize = 10;

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(p: ndarray::ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, col) in centroids.axis_iter(Axis(1)).enumerate() {
        let d = sq_dist(p, col);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp<R: Rng>(points: ArrayView2<f64>, k: usize, rng: &mut R) -> Array2<f64> {
    let n = points.ncols();
    let mut centroids = Array2::<f64>::zeros((points.nrows(), k));
    let first = rng.random_range(0..n);
    centroids.column_mut(0).assign(&points.column(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|j| sq_dist(points.column(j), points.column(first)))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (j, &w) in d2.iter().enumerate() {
                if r < w {
                    idx = j;
                    break;
                }
                r -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.column_mut(c).assign(&points.column(pick));
        for (j, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.column(j), points.column(pick)));
        }
    }
    centroids
}

fn lloyd(points: ArrayView2<f64>, mut centroids: Array2<f64>, restart: usize) -> KMeansResult {
    let (dim, n) = points.dim();
    let k = centroids.ncols();
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        for (j, label) in labels.iter_mut().enumerate() {
            let (c, _) = nearest(points.column(j), &centroids);
            if *label != c {
                *label = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Array2::<f64>::zeros((dim, k));
        let mut counts = vec![0usize; k];
        for (j, &l) in labels.iter().enumerate() {
            sums.column_mut(l).scaled_add(1.0, &points.column(j));
            counts[l] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            if count > 0 {
                centroids
                    .column_mut(c)
                    .assign(&(&sums.column(c) / count as f64));
            } else {
                // reseed with the point farthest from its centroid
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = sq_dist(points.column(a), centroids.column(labels[a]));
                        let db = sq_dist(points.column(b), centroids.column(labels[b]));
                        da.total_cmp(&db).then(b.cmp(&a))
                    })
                    .expect("n >= k >= 1");
                centroids.column_mut(c).assign(&points.column(far));
                labels[far] = c;
            }
        }
    }
    let wcss = (0..n)
        .map(|j| sq_dist(points.column(j), centroids.column(labels[j])))
        .sum();
    KMeansResult {
        labels,
        centroids,
        wcss,
        restart,
    }
}

/// Lloyd's algorithm from k-means++ seeds, best of `restarts` by
/// within-cluster sum of squares. Points are the columns of `points`.
///
/// Restart `r` draws from stream `r` of a ChaCha generator keyed by `seed`,
/// so results do not depend on how restarts are scheduled.
pub fn kmeans(
    points: ArrayView2<f64>,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<KMeansResult> {
    let n = points.ncols();
    if k == 0 || k > n {
        return Err(Error::domain(format!("k = {k} must lie in 1..={n}")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let restarts = restarts.max(1);
    let runs = map_indexed(restarts, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let init = kmeans_pp(points, k, &mut rng);
        lloyd(points, init, r)
    });
    Ok(runs
        .into_iter()
        .min_by(|a, b| a.wcss.total_cmp(&b.wcss).then(a.restart.cmp(&b.restart)))
        .expect("at least one restart"))
}

pub const MAX_MATCHED_CLUSTERS: usize = 8;

fn dense_ids(labels: &[i64]) -> (Vec<usize>, usize) {
    let mut distinct: Vec<i64> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let ids = labels
        .iter()
        .map(|l| distinct.binary_search(l).expect("present"))
        .collect();
    (ids, distinct.len())
}

/// Best agreement between `pred` and `truth` over all relabelings of `pred`.
pub fn clustering_accuracy(pred: &[i64], truth: &[i64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::domain("no labels to compare"));
    }
    let (p, kp) = dense_ids(pred);
    let (t, kt) = dense_ids(truth);
    let m = kp.max(kt);
    if m > MAX_MATCHED_CLUSTERS {
        return Err(Error::domain(format!(
            "{m} clusters exceed the exhaustive matching limit of {MAX_MATCHED_CLUSTERS}"
        )));
    }
    let mut counts = vec![vec![0usize; m]; m];
    for (&a, &b) in p.iter().zip(&t) {
        counts[a][b] += 1;
    }
    let mut perm: Vec<usize> = (0..m).collect();
    let mut best = 0usize;
    permute(&mut perm, 0, &mut |perm| {
        let hits = (0..m).map(|i| counts[i][perm[i]]).sum::<usize>();
        best = best.max(hits);
    });
    Ok(best as f64 / pred.len() as f64)
}

fn permute(v: &mut [usize], start: usize, f: &mut impl FnMut(&[usize])) {
    if start == v.len() {
        f(v);
        return;
    }
    for i in start..v.len() {
        v.swap(start, i);
        permute(v, start + 1, f);
        v.swap(start, i);
    }
}

/// Relative slack when comparing cumulative energy with the threshold.
const ENERGY_RTOL: f64 = 1e-12;

/// Smallest `K` whose leading squared singular values reach `threshold` of
/// the total.
pub fn choose_k_energy(x: &DataMatrix, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::domain(format!(
            "threshold must lie in (0,1], got {threshold}"
        )));
    }
    let energy: Vec<f64> = singular_values(x)?.iter().map(|s| s * s).collect();
    let total: f64 = energy.iter().sum();
    if total == 0.0 {
        return Err(Error::domain("energy rule is undefined for zero data"));
    }
    let target = threshold * total * (1.0 - ENERGY_RTOL);
    let mut cum = 0.0;
    for (i, e) in energy.iter().enumerate() {
        cum += e;
        if cum >= target {
            return Ok(i + 1);
        }
    }
    Ok(energy.len())
}

/// `Q Q' X`.
pub fn reconstruct(x: &DataMatrix, q: &StiefelPoint) -> Result<DataMatrix> {
    if q.d() != x.d() {
        return Err(Error::shape(format!(
            "Q has {} rows, X has {}",
            q.d(),
            x.d()
        )));
    }
    let coeffs = matmul_tn(q.values(), x.values());
    DataMatrix::new(matmul(q.values(), coeffs.view()))
}

/// `Q' X`, the coordinates of the samples in the subspace.
pub fn project(x: &DataMatrix, q: &StiefelPoint) -> Result<Array2<f64>> {
    if q.d() != x.d() {
        return Err(Error::shape(format!(
            "Q has {} rows, X has {}",
            q.d(),
            x.d()
        )));
    }
    Ok(matmul_tn(q.values(), x.values()))
}

/// Root mean squared difference between two equally shaped arrays.
pub fn rmse(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    if a.dim() != b.dim() || a.is_empty() {
        return Err(Error::shape(
            "RMSE needs two nonempty arrays of equal shape",
        ));
    }
    Ok(frobenius_distance(a, b) / (a.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::random_stiefel;
    use crate::solver::solve;
    use crate::types::SolverConfig;
    use ndarray::array;

    #[test]
    fn tev_examples() {
        let x = DataMatrix::new(Array2::from_diag(&array![3.0, 2.0, 1.0])).unwrap();
        let e2 = StiefelPoint::new(array![[0.0], [1.0], [0.0]]).unwrap();
        assert!((tev(&x, &e2).unwrap() - 4.0 / 9.0).abs() < 1e-12);
        let best = top_k_left_singular(&x, 2).unwrap();
        assert!((tev(&x, &best).unwrap() - 1.0).abs() < 1e-12);
        assert!(tev(&DataMatrix::zeros(3, 3), &e2).is_err());
    }

    #[test]
    fn rate_fit_examples() {
        let gaps: Vec<(usize, f64)> = (0..20).map(|k| (k, 10f64.powi(-(k as i32)))).collect();
        let fit = fit_linear_rate(&gaps, 0..20).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);

        let flat: Vec<(usize, f64)> = (0..15).map(|k| (k, 0.3)).collect();
        assert_eq!(fit_linear_rate(&flat, 0..15).unwrap().slope, 0.0);

        let mut bad = gaps.clone();
        bad[5].1 = 0.0;
        assert!(fit_linear_rate(&bad, 0..20).is_err());
        assert!(fit_linear_rate(&bad, 6..20).is_ok());
        assert!(fit_linear_rate(&gaps, 0..5).is_err());
    }

    #[test]
    fn kmeans_examples() {
        let pts = array![[0.0, 0.1, 10.0, 10.1]];
        let r = kmeans(pts.view(), 2, 1, 5).unwrap();
        assert_eq!(r.labels[0], r.labels[1]);
        assert_eq!(r.labels[2], r.labels[3]);
        assert_ne!(r.labels[0], r.labels[2]);
        let mut cs: Vec<f64> = r.centroids.iter().copied().collect();
        cs.sort_by(f64::total_cmp);
        assert!((cs[0] - 0.05).abs() < 1e-12 && (cs[1] - 10.05).abs() < 1e-12);

        let pts = array![[0.0, 1.0, 5.0, 9.0], [2.0, 0.0, 1.0, 3.0]];
        let r = kmeans(pts.view(), 4, 3, 2).unwrap();
        assert_eq!(r.wcss, 0.0);
        let mut l = r.labels.clone();
        l.sort_unstable();
        assert_eq!(l, vec![0, 1, 2, 3]);
        assert!(kmeans(pts.view(), 5, 0, 1).is_err());
    }

    #[test]
    fn kmeans_duplicated_points_same_partition() {
        let base = array![
            [0.0, 0.3, 0.1, 6.0, 6.2, 5.9, -4.0, -4.4],
            [0.0, 0.2, -0.1, 1.0, 1.1, 0.8, 5.0, 5.3]
        ];
        let mut twice = Array2::zeros((2, 16));
        for j in 0..8 {
            twice.column_mut(2 * j).assign(&base.column(j));
            twice.column_mut(2 * j + 1).assign(&base.column(j));
        }
        let a = kmeans(base.view(), 3, 7, 10).unwrap();
        let b = kmeans(twice.view(), 3, 7, 10).unwrap();
        let la: Vec<i64> = a.labels.iter().map(|&v| v as i64).collect();
        let lb: Vec<i64> = (0..8).map(|j| b.labels[2 * j] as i64).collect();
        assert_eq!(clustering_accuracy(&la, &lb).unwrap(), 1.0);
        for j in 0..8 {
            assert_eq!(b.labels[2 * j], b.labels[2 * j + 1]);
        }
    }

    #[test]
    fn kmeans_is_deterministic() {
        let pts = Array2::from_shape_fn((3, 60), |(i, j)| {
            ((i * 7 + j * 13) as f64 * 0.77).sin() * (j % 3) as f64
        });
        let a = kmeans(pts.view(), 3, 42, 10).unwrap();
        let b = kmeans(pts.view(), 3, 42, 10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn accuracy_examples() {
        let t = [0, 1, 1, 0, 1];
        assert_eq!(clustering_accuracy(&t, &t).unwrap(), 1.0);
        let c: Vec<i64> = t.iter().map(|v| 1 - v).collect();
        assert_eq!(clustering_accuracy(&c, &t).unwrap(), 1.0);
        assert_eq!(
            clustering_accuracy(&[5, 5, 5, 5], &[0, 0, 1, 1]).unwrap(),
            0.5
        );
        assert!(clustering_accuracy(&[0, 1], &[0]).is_err());
        let many: Vec<i64> = (0..9).collect();
        assert!(clustering_accuracy(&many, &many).is_err());
    }

    #[test]
    fn accuracy_of_random_guessing_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000;
        let truth: Vec<i64> = (0..n).map(|i| (i % 2) as i64).collect();
        let pred: Vec<i64> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let acc = clustering_accuracy(&pred, &truth).unwrap();
        assert!((acc - 0.5).abs() <= 0.02, "accuracy {acc}");
    }

    #[test]
    fn energy_rule_examples() {
        let x = DataMatrix::new(Array2::from_diag(&array![3.0, 2.0, 1.0])).unwrap();
        assert_eq!(choose_k_energy(&x, 0.8).unwrap(), 2);
        assert_eq!(choose_k_energy(&x, 1.0).unwrap(), 3);
        let r2 =
            DataMatrix::new(array![[1.0, 0.0, 2.0], [0.0, 1.0, 0.0], [1.0, 1.0, 2.0]]).unwrap();
        assert_eq!(choose_k_energy(&r2, 1.0).unwrap(), 2);
        let r1 = DataMatrix::new(array![[1.0, 2.0], [2.0, 4.0], [-1.0, -2.0]]).unwrap();
        for t in [0.1, 0.5, 0.99, 1.0] {
            assert_eq!(choose_k_energy(&r1, t).unwrap(), 1);
        }
        assert!(choose_k_energy(&DataMatrix::zeros(2, 2), 0.8).is_err());
        assert!(choose_k_energy(&x, 0.0).is_err());
    }

    #[test]
    fn reconstruct_examples() {
        let x =
            DataMatrix::new(array![[1.0, 2.0, -1.0], [0.0, 0.0, 0.0], [3.0, -1.0, 2.0]]).unwrap();
        let span = StiefelPoint::new(array![[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!(frobenius_distance(reconstruct(&x, &span).unwrap().values(), x.values()) < 1e-14);
        let orth = StiefelPoint::new(array![[0.0], [1.0], [0.0]]).unwrap();
        assert!(reconstruct(&x, &orth)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
        let q = random_stiefel(3, 2, 4).unwrap();
        let once = reconstruct(&x, &q).unwrap();
        let twice = reconstruct(&once, &q).unwrap();
        assert!(frobenius_distance(once.values(), twice.values()) <= 1e-10);
    }

    #[test]
    fn gap_traces_end_at_zero() {
        let (x, _) = crate::data::gen_synthetic(8, 30, 2, 0.5, 3).unwrap();
        let rep = solve(
            &x,
            &SolverConfig::default(),
            random_stiefel(8, 2, 4).unwrap(),
            None,
        )
        .unwrap();
        let g = gap_traces(&rep.trace, &rep.final_p, &rep.final_q, &x).unwrap();
        assert_eq!(g.function_gaps.last().unwrap().1, 0.0);
        assert_eq!(g.iterate_gaps.last().unwrap().1, 0.0);
        assert_eq!(g.function_gaps.len(), rep.iterations() + 1);
        for w in g.potential_gaps.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-9 * (1.0 + w[0].1.abs()));
        }
    }

    #[test]
    fn gap_traces_single_iteration() {
        let x = DataMatrix::zeros(3, 4);
        let rep = solve(
            &x,
            &SolverConfig::default(),
            random_stiefel(3, 1, 1).unwrap(),
            None,
        )
        .unwrap();
        let g = gap_traces(&rep.trace, &rep.final_p, &rep.final_q, &x).unwrap();
        assert_eq!(g.function_gaps.len(), 2);
        let mut t = rep.trace.clone();
        t.snapshots.clear();
        assert!(gap_traces(&t, &rep.final_p, &rep.final_q, &x).is_err());
    }
}
