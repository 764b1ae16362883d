//! Dense product kernels and an indexed map used for independent runs.
//!
//! Products are split into fixed-height row panels. Each panel is computed by
//! the same serial kernel whichever execution path is active, so the parallel
//! and sequential builds return bit-identical results for the same input. The
//! panel height never depends on the thread count.

use ndarray::{s, Array2, ArrayView2, Axis};

/// Rows per output panel.
pub const PANEL_ROWS: usize = 64;

fn check_inner(a: &ArrayView2<f64>, b: &ArrayView2<f64>) {
    assert_eq!(
        a.ncols(),
        b.nrows(),
        "inner dimensions differ: {}x{} * {}x{}",
        a.nrows(),
        a.ncols(),
        b.nrows(),
        b.ncols()
    );
}

pub mod sequential {
    use super::*;

    pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
        check_inner(&a, &b);
        let mut out = Array2::<f64>::zeros((a.nrows(), b.ncols()));
        for (i, mut panel) in out.axis_chunks_iter_mut(Axis(0), PANEL_ROWS).enumerate() {
            let lo = i * PANEL_ROWS;
            let hi = lo + panel.nrows();
            panel.assign(&a.slice(s![lo..hi, ..]).dot(&b));
        }
        out
    }

    pub fn map_indexed<T, F>(count: usize, f: F) -> Vec<T>
    where
        F: Fn(usize) -> T,
    {
        (0..count).map(f).collect()
    }
}

#[cfg(feature = "parallel")]
pub mod parallel {
    use super::*;
    use rayon::prelude::*;

    pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
        check_inner(&a, &b);
        // small products are not worth the fork/join
        if a.nrows() <= PANEL_ROWS {
            return super::sequential::matmul(a, b);
        }
        let mut out = Array2::<f64>::zeros((a.nrows(), b.ncols()));
        out.axis_chunks_iter_mut(Axis(0), PANEL_ROWS)
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut panel)| {
                let lo = i * PANEL_ROWS;
                let hi = lo + panel.nrows();
                panel.assign(&a.slice(s![lo..hi, ..]).dot(&b));
            });
        out
    }

    pub fn map_indexed<T, F>(count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..count).into_par_iter().map(f).collect()
    }
}

/// `a * b` on the active execution path.
pub fn matmul(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    #[cfg(feature = "parallel")]
    {
        parallel::matmul(a, b)
    }
    #[cfg(not(feature = "parallel"))]
    {
        sequential::matmul(a, b)
    }
}

/// `a^T * b` on the active execution path.
pub fn matmul_tn(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    matmul(a.t(), b)
}

/// `a * b^T` on the active execution path.
pub fn matmul_nt(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    matmul(a, b.t())
}

/// Evaluates `f(0..count)` and returns results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    parallel::map_indexed(count, f)
}

/// Evaluates `f(0..count)` and returns results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    sequential::map_indexed(count, f)
}
