//! Dense kernels for the solver and the metrics: thin SVD (Householder QR
//! followed by one-sided Jacobi on the triangular factor), the polar factor,
//! power-iteration spectral norms and leading singular subspaces.

use ndarray::{s, Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels;
use crate::types::{frobenius, DataMatrix, StiefelPoint};

const MAX_SWEEPS: usize = 80;

/// `M = U diag(sigma) V^T` with `U: m x k`, `V: k x k`, singular values sorted
/// in nonincreasing order.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Array2<f64>,
    pub sigma: Array1<f64>,
    pub v: Array2<f64>,
}

impl ThinSvd {
    pub fn reconstruct(&self) -> Array2<f64> {
        let mut us = self.u.clone();
        for (mut col, s) in us.columns_mut().into_iter().zip(self.sigma.iter()) {
            col *= *s;
        }
        kernels::matmul_nt(us.view(), self.v.view())
    }
}

/// Column-major dense buffer used inside the decompositions.
struct ColMajor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ColMajor {
    fn from_view(m: ArrayView2<f64>) -> Self {
        let (rows, cols) = m.dim();
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            data.extend(m.column(j).iter().copied());
        }
        Self { rows, cols, data }
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    fn two_cols_mut(&mut self, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
        debug_assert!(p < q);
        let (lo, hi) = self.data.split_at_mut(q * self.rows);
        (
            &mut lo[p * self.rows..(p + 1) * self.rows],
            &mut hi[..self.rows],
        )
    }

    fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.rows, self.cols), |(i, j)| {
            self.data[j * self.rows + i]
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Householder reflectors of a thin QR factorization, `A = Q R`.
struct HouseholderQr {
    rows: usize,
    /// Unit reflector vectors; `vs[j]` acts on rows `j..rows`.
    vs: Vec<Option<Vec<f64>>>,
    r: Array2<f64>,
}

impl HouseholderQr {
    fn factor(a: ArrayView2<f64>) -> Self {
        let k = a.ncols();
        let mut w = ColMajor::from_view(a);
        let mut vs = Vec::with_capacity(k);
        for j in 0..k {
            let x = &w.col(j)[j..];
            let norm = dot(x, x).sqrt();
            if norm == 0.0 {
                vs.push(None);
                continue;
            }
            let alpha = if x[0] >= 0.0 { -norm } else { norm };
            let mut v: Vec<f64> = x.to_vec();
            v[0] -= alpha;
            let vn = dot(&v, &v).sqrt();
            if vn == 0.0 {
                vs.push(None);
                continue;
            }
            v.iter_mut().for_each(|e| *e /= vn);
            for c in j..k {
                let col = &mut w.col_mut(c)[j..];
                let f = 2.0 * dot(&v, col);
                col.iter_mut().zip(&v).for_each(|(e, vi)| *e -= f * vi);
            }
            vs.push(Some(v));
        }
        let r = Array2::from_shape_fn((k, k), |(i, j)| if i <= j { w.col(j)[i] } else { 0.0 });
        Self {
            rows: a.nrows(),
            vs,
            r,
        }
    }

    /// `Q_thin * y` for a `k x c` matrix `y`.
    fn apply_q(&self, y: ArrayView2<f64>) -> Array2<f64> {
        let (k, c) = y.dim();
        let mut z = ColMajor {
            rows: self.rows,
            cols: c,
            data: vec![0.0; self.rows * c],
        };
        for j in 0..c {
            for i in 0..k {
                z.col_mut(j)[i] = y[[i, j]];
            }
        }
        for (j, v) in self.vs.iter().enumerate().rev() {
            let Some(v) = v else { continue };
            for col in 0..c {
                let seg = &mut z.col_mut(col)[j..];
                let f = 2.0 * dot(v, seg);
                seg.iter_mut().zip(v).for_each(|(e, vi)| *e -= f * vi);
            }
        }
        z.to_array()
    }
}

/// One-sided Jacobi on a square matrix. Returns `(W, V)` with `A V = W` and
/// mutually orthogonal columns of `W`.
fn one_sided_jacobi(a: ArrayView2<f64>) -> Result<(ColMajor, ColMajor)> {
    let (m, k) = a.dim();
    let mut w = ColMajor::from_view(a);
    let mut v = ColMajor::from_view(Array2::<f64>::eye(k).view());
    let tol = (m as f64).sqrt() * f64::EPSILON;
    // columns at roundoff level relative to the whole matrix are left alone
    let total: f64 = (0..k).map(|j| dot(w.col(j), w.col(j))).sum();
    let negligible = total * (f64::EPSILON * m as f64).powi(2);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..k {
            for q in p + 1..k {
                let alpha = dot(w.col(p), w.col(p));
                let beta = dot(w.col(q), w.col(q));
                let gamma = dot(w.col(p), w.col(q));
                if gamma == 0.0 || alpha <= negligible || beta <= negligible {
                    continue;
                }
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            return Ok((w, v));
        }
    }
    let best = (0..k)
        .map(|j| dot(w.col(j), w.col(j)).sqrt())
        .fold(0.0, f64::max);
    Err(Error::NoConvergence {
        what: "Jacobi SVD",
        iterations: MAX_SWEEPS,
        best,
    })
}

fn rotate(m: &mut ColMajor, p: usize, q: usize, c: f64, s: f64) {
    let (cp, cq) = m.two_cols_mut(p, q);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Thin SVD of an `m x k` matrix with `m >= k >= 1`.
pub fn thin_svd(m: ArrayView2<f64>) -> Result<ThinSvd> {
    let (rows, k) = m.dim();
    if k == 0 || rows < k {
        return Err(Error::shape(format!(
            "thin SVD needs rows >= cols >= 1, got {rows}x{k}"
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("SVD input".into()));
    }
    let qr = HouseholderQr::factor(m);
    let (w, v) = one_sided_jacobi(qr.r.view())?;

    let norms: Vec<f64> = (0..k).map(|j| dot(w.col(j), w.col(j)).sqrt()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

    let sigma_max = norms[order[0]];
    let null_cut = sigma_max * (rows.max(k) as f64) * f64::EPSILON;

    let mut ur = Array2::<f64>::zeros((k, k));
    let mut vs = Array2::<f64>::zeros((k, k));
    let mut sigma = Array1::<f64>::zeros(k);
    let mut null_cols = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        sigma[dst] = norms[src];
        for i in 0..k {
            vs[[i, dst]] = v.col(src)[i];
        }
        if norms[src] > null_cut && norms[src] > 0.0 {
            for i in 0..k {
                ur[[i, dst]] = w.col(src)[i] / norms[src];
            }
        } else {
            null_cols.push(dst);
        }
    }
    complete_orthonormal(&mut ur, &null_cols);
    let u = qr.apply_q(ur.view());
    Ok(ThinSvd { u, sigma, v: vs })
}

/// Fills the listed columns of `basis` so all its columns are orthonormal.
/// The other columns must already be orthonormal.
fn complete_orthonormal(basis: &mut Array2<f64>, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let n = basis.nrows();
    let mut filled: Vec<usize> = (0..basis.ncols())
        .filter(|j| !missing.contains(j))
        .collect();
    let mut candidate = 0usize;
    for &j in missing {
        loop {
            assert!(candidate < n, "ran out of basis vectors while completing");
            let mut e = Array1::<f64>::zeros(n);
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &f in &filled {
                    let col = basis.column(f);
                    let proj = col.dot(&e);
                    e.scaled_add(-proj, &col);
                }
            }
            let norm = e.dot(&e).sqrt();
            if norm > 0.5 {
                basis.column_mut(j).assign(&(e / norm));
                filled.push(j);
                break;
            }
        }
    }
}

/// `U V^T` from the thin SVD of `m`, the maximizer of `<Z, m>` over St(d, K).
pub fn polar_factor(m: ArrayView2<f64>) -> Result<StiefelPoint> {
    let svd = thin_svd(m)?;
    let q = kernels::matmul_nt(svd.u.view(), svd.v.view());
    Ok(StiefelPoint::from_orthonormal(q))
}

/// Largest singular value by power iteration on `M^T M`, with the default
/// start vector.
pub fn spectral_norm(m: ArrayView2<f64>, tol: f64) -> Result<f64> {
    spectral_norm_seeded(m, tol, 0)
}

/// Largest singular value by power iteration on `M^T M`.
///
/// Stops when the eigen-residual `||M^T M v - theta v||` drops below
/// `tol * theta` and returns `sqrt(theta + residual)`, which bounds the
/// eigenvalue nearest `theta` from above. The iteration cap is ten times the
/// larger dimension.
pub fn spectral_norm_seeded(m: ArrayView2<f64>, tol: f64, seed: u64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::domain(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spectral norm input".into()));
    }
    let (rows, cols) = m.dim();
    if rows == 0 || cols == 0 || frobenius(m) == 0.0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Array1::from_shape_fn(cols, |_| 0.5 + rng.random::<f64>());
    v /= v.dot(&v).sqrt();

    let cap = 10 * rows.max(cols);
    let mut best = 0.0;
    for _ in 0..cap {
        let w = m.dot(&v);
        let z = m.t().dot(&w);
        let theta = w.dot(&w);
        let residual = {
            let r = &z - &(&v * theta);
            r.dot(&r).sqrt()
        };
        best = (theta + residual).sqrt();
        if residual <= tol * theta {
            return Ok(best);
        }
        let zn = z.dot(&z).sqrt();
        if zn == 0.0 {
            // start vector fell into the null space; nudge it
            v = Array1::from_shape_fn(cols, |_| rng.random::<f64>() - 0.5);
            v /= v.dot(&v).sqrt();
            continue;
        }
        v = z / zn;
    }
    Err(Error::NoConvergence {
        what: "power iteration",
        iterations: cap,
        best,
    })
}

/// The `k` leading left singular vectors of `X`, ordered by singular value.
pub fn top_k_left_singular(x: &DataMatrix, k: usize) -> Result<StiefelPoint> {
    let (d, n) = (x.d(), x.n());
    if k == 0 || k > d.min(n) {
        return Err(Error::domain(format!(
            "K = {k} outside 1..={} for a {d}x{n} matrix",
            d.min(n)
        )));
    }
    let (basis, sigma) = if d >= n {
        let svd = thin_svd(x.values())?;
        (svd.u, svd.sigma)
    } else {
        let svd = thin_svd(x.values().t())?;
        (svd.v, svd.sigma)
    };
    if k < sigma.len() && (sigma[k - 1] - sigma[k]).abs() <= 1e-10 {
        log::warn!(
            "leading subspace is not unique: sigma_{k} = {:e}, sigma_{} = {:e}",
            sigma[k - 1],
            k + 1,
            sigma[k]
        );
    }
    Ok(StiefelPoint::from_orthonormal(
        basis.slice(s![.., ..k]).to_owned(),
    ))
}

/// All `min(d, n)` singular values of `X` in nonincreasing order.
pub fn singular_values(x: &DataMatrix) -> Result<Vec<f64>> {
    let values = x.values();
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let svd = if x.d() >= x.n() {
        thin_svd(values)?
    } else {
        thin_svd(values.t())?
    };
    Ok(svd.sigma.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::orthonormality_residual;
    use ndarray::array;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
    }

    fn check_invariants(m: ArrayView2<f64>, svd: &ThinSvd) {
        assert!(orthonormality_residual(svd.u.view()) <= 1e-8);
        assert!(orthonormality_residual(svd.v.view()) <= 1e-8);
        for w in svd.sigma.windows(2) {
            assert!(w[0] >= w[1]);
        }
        assert!(svd.sigma.iter().all(|&s| s >= 0.0));
        let err = frobenius((&svd.reconstruct() - &m).view());
        assert!(
            err <= 1e-7 * frobenius(m).max(1.0),
            "reconstruction error {err}"
        );
    }

    #[test]
    fn identity_svd() {
        let m = Array2::<f64>::eye(3);
        let svd = thin_svd(m.view()).unwrap();
        check_invariants(m.view(), &svd);
        assert!(svd.sigma.iter().all(|&s| (s - 1.0).abs() < 1e-15));
    }

    #[test]
    fn stacked_diagonal() {
        let m = array![[3.0, 0.0], [0.0, 2.0], [0.0, 0.0]];
        let svd = thin_svd(m.view()).unwrap();
        check_invariants(m.view(), &svd);
        assert!((svd.sigma[0] - 3.0).abs() < 1e-14);
        assert!((svd.sigma[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_and_zero() {
        let z = Array2::<f64>::zeros((4, 3));
        let svd = thin_svd(z.view()).unwrap();
        check_invariants(z.view(), &svd);
        let r1 = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        let svd = thin_svd(r1.view()).unwrap();
        check_invariants(r1.view(), &svd);
        assert!(svd.sigma[1].abs() < 1e-12);
    }

    #[test]
    fn low_rank_products_converge() {
        for seed in 0..30 {
            let a = gaussian(6, 2, seed);
            let b = gaussian(2, 5, seed + 100);
            let m = a.dot(&b);
            let svd = thin_svd(m.view()).unwrap();
            check_invariants(m.view(), &svd);
            assert!(svd.sigma[2] <= 1e-12 * svd.sigma[0]);
            let ones = Array2::<f64>::ones((7, 4));
            let m = gaussian(5, 7, seed).dot(&ones);
            check_invariants(m.view(), &thin_svd(m.view()).unwrap());
        }
    }

    #[test]
    fn random_svd_reconstructs_tightly() {
        for seed in 0..20 {
            let m = gaussian(5 + seed as usize % 7, 3, seed);
            let svd = thin_svd(m.view()).unwrap();
            check_invariants(m.view(), &svd);
            assert!(frobenius((&svd.reconstruct() - &m).view()) <= 1e-10);
        }
    }

    #[test]
    fn thin_svd_errors() {
        assert!(matches!(
            thin_svd(Array2::<f64>::zeros((2, 3)).view()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            thin_svd(array![[f64::INFINITY]].view()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn polar_examples() {
        let q = polar_factor(array![[3.0], [4.0]].view()).unwrap();
        assert!((q.values()[[0, 0]] - 0.6).abs() < 1e-15);
        assert!((q.values()[[1, 0]] - 0.8).abs() < 1e-15);

        let st = polar_factor(gaussian(6, 3, 9).view()).unwrap();
        let again = polar_factor(st.values()).unwrap();
        assert!(crate::types::frobenius_distance(st.values(), again.values()) < 1e-13);
    }

    #[test]
    fn polar_of_rank_deficient_is_feasible() {
        let q = polar_factor(Array2::<f64>::zeros((5, 2)).view()).unwrap();
        assert!(q.residual() < 1e-12);
        let q = polar_factor(array![[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]].view()).unwrap();
        assert!(q.residual() < 1e-12);
    }

    #[test]
    fn spectral_norm_examples() {
        let tol = 1e-8;
        let s = spectral_norm(array![[5.0, 0.0], [0.0, 1.0]].view(), tol).unwrap();
        assert!((s - 5.0).abs() <= 5.0 * tol);
        assert_eq!(
            spectral_norm(Array2::<f64>::zeros((3, 2)).view(), tol).unwrap(),
            0.0
        );
        let s = spectral_norm(array![[1.0, 1.0], [0.0, 1.0]].view(), tol).unwrap();
        let expect = ((3.0 + 5f64.sqrt()) / 2.0).sqrt();
        assert!((s - expect).abs() <= expect * tol, "{s} vs {expect}");
        assert!((expect - 1.618034).abs() < 1e-6);
        assert!(spectral_norm(Array2::<f64>::eye(2).view(), 0.0).is_err());
    }

    #[test]
    fn spectral_norm_bounded_by_frobenius() {
        for seed in 0..10 {
            let m = gaussian(7, 4, 100 + seed);
            let s = spectral_norm(m.view(), 1e-6).unwrap();
            let exact = thin_svd(m.view()).unwrap().sigma[0];
            assert!(s <= frobenius(m.view()) * (1.0 + 1e-6));
            assert!(s >= exact * (1.0 - 1e-12));
            assert!((s - exact).abs() <= 1e-6 * exact);
        }
        let u = array![[1.0], [2.0], [2.0]];
        let v = array![[0.6, 0.8]];
        let r1 = u.dot(&v);
        let s = spectral_norm(r1.view(), 1e-8).unwrap();
        assert!((s - frobenius(r1.view())).abs() < 1e-8 * s);
    }

    #[test]
    fn top_k_examples() {
        let x = DataMatrix::new(Array2::from_diag(&array![3.0, 2.0, 1.0])).unwrap();
        let q = top_k_left_singular(&x, 2).unwrap();
        let proj = q.values().dot(&q.values().t());
        let expect = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]];
        assert!(frobenius((&proj - &expect).view()) < 1e-12);

        let x = DataMatrix::new(array![[4.0, 0.0], [0.0, 1.0], [0.0, 0.0]]).unwrap();
        let q = top_k_left_singular(&x, 1).unwrap();
        assert!((q.values()[[0, 0]].abs() - 1.0).abs() < 1e-14);
        assert!(top_k_left_singular(&x, 3).is_err());
        assert!(top_k_left_singular(&x, 0).is_err());
    }

    #[test]
    fn top_k_captures_leading_energy() {
        // wide matrix exercises the transposed branch
        let x = DataMatrix::new(gaussian(6, 8, 42)).unwrap();
        let q = top_k_left_singular(&x, 3).unwrap();
        let xtq = x.values().t().dot(&q.values());
        let captured: f64 = xtq.iter().map(|v| v * v).sum();
        let sv = thin_svd(x.values().t()).unwrap().sigma;
        let best: f64 = sv.iter().take(3).map(|s| s * s).sum();
        assert!((captured - best).abs() < 1e-9 * best);
    }

    #[test]
    fn singular_value_examples() {
        let x = DataMatrix::new(Array2::eye(4)).unwrap();
        assert!(singular_values(&x)
            .unwrap()
            .iter()
            .all(|&s| (s - 1.0).abs() < 1e-15));
        let x = DataMatrix::new(array![[2.0, 0.0, 0.0], [0.0, 2.0, 0.0]]).unwrap();
        let sv = singular_values(&x).unwrap();
        assert_eq!(sv.len(), 2);
        assert!(sv.iter().all(|&s| (s - 2.0).abs() < 1e-14));
        let x = DataMatrix::new(gaussian(4, 5, 3)).unwrap();
        let sv = singular_values(&x).unwrap();
        let ss: f64 = sv.iter().map(|s| s * s).sum();
        let f = x.frobenius_norm();
        assert!((ss - f * f).abs() < 1e-9);
    }
}
