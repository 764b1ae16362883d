//! Problem data types: the data matrix, sign matrices, Stiefel points and the
//! solver configuration.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels;

/// Tolerance on `||Q^T Q - I||_F` for a matrix to count as a Stiefel point.
pub const STIEFEL_TOL: f64 = 1e-8;

/// Row-mean tolerance (relative to the row's largest magnitude) for the
/// centered flag.
pub const CENTER_TOL: f64 = 1e-9;

/// A `d x n` data matrix with samples stored as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Array2<f64>,
    centered: bool,
}

impl DataMatrix {
    /// Wraps a matrix of finite values. The centered flag is set only if the
    /// rows already have (numerically) zero mean.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let cols = values.ncols().max(1);
            return Err(Error::NonFinite(format!(
                "data entry ({}, {})",
                pos / cols,
                pos % cols
            )));
        }
        let centered = rows_are_centered(values.view());
        Ok(Self { values, centered })
    }

    /// Like [`DataMatrix::new`] but fails unless every row has zero mean.
    pub fn new_centered(values: Array2<f64>) -> Result<Self> {
        let x = Self::new(values)?;
        if !x.centered {
            return Err(Error::domain("data rows do not have zero mean"));
        }
        Ok(x)
    }

    /// For data just centered in this crate; skips the mean check.
    pub(crate) fn centered_unchecked(values: Array2<f64>) -> Self {
        Self {
            values,
            centered: true,
        }
    }

    pub fn zeros(d: usize, n: usize) -> Self {
        Self {
            values: Array2::zeros((d, n)),
            centered: true,
        }
    }

    /// Feature dimension.
    pub fn d(&self) -> usize {
        self.values.nrows()
    }

    /// Sample count.
    pub fn n(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    pub fn row_means(&self) -> Array1<f64> {
        self.values
            .mean_axis(Axis(1))
            .unwrap_or_else(|| Array1::zeros(self.d()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius(self.values.view())
    }
}

fn rows_are_centered(x: ArrayView2<f64>) -> bool {
    if x.ncols() == 0 {
        return true;
    }
    x.axis_iter(Axis(0)).all(|row| {
        let mean = row.sum() / row.len() as f64;
        let scale = row.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        mean.abs() <= CENTER_TOL * scale
    })
}

/// An `n x d` matrix with entries in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignMatrix {
    values: Array2<f64>,
}

impl SignMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v != 1.0 && v != -1.0) {
            return Err(Error::domain(format!("sign matrix entry {v} is not +-1")));
        }
        Ok(Self { values })
    }

    pub fn ones(n: usize, d: usize) -> Self {
        Self {
            values: Array2::ones((n, d)),
        }
    }

    /// Caller guarantees every entry is exactly +-1.
    pub(crate) fn from_signs(values: Array2<f64>) -> Self {
        debug_assert!(values.iter().all(|&v| v == 1.0 || v == -1.0));
        Self { values }
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.values.nrows(), self.values.ncols())
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }
}

/// A `d x K` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    values: Array2<f64>,
}

impl StiefelPoint {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.ncols() == 0 || values.ncols() > values.nrows() {
            return Err(Error::shape(format!(
                "Stiefel point must be d x K with 1 <= K <= d, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Stiefel point".into()));
        }
        let residual = orthonormality_residual(values.view());
        if residual > STIEFEL_TOL {
            return Err(Error::Infeasible { residual });
        }
        Ok(Self { values })
    }

    /// The first `k` columns of the `d x d` identity.
    pub fn identity(d: usize, k: usize) -> Result<Self> {
        Self::new(Array2::eye(d).slice_move(ndarray::s![.., ..k]))
    }

    /// For factors produced by the SVD, which are orthonormal to working
    /// precision by construction.
    pub(crate) fn from_orthonormal(values: Array2<f64>) -> Self {
        debug_assert!(orthonormality_residual(values.view()) <= STIEFEL_TOL);
        Self { values }
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn d(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }

    pub fn residual(&self) -> f64 {
        orthonormality_residual(self.values.view())
    }
}

/// `||M^T M - I||_F`.
pub fn orthonormality_residual(m: ArrayView2<f64>) -> f64 {
    let gram = kernels::matmul_tn(m, m);
    let mut acc = 0.0;
    for ((i, j), v) in gram.indexed_iter() {
        let e = if i == j { v - 1.0 } else { *v };
        acc += e * e;
    }
    acc.sqrt()
}

pub fn frobenius(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `||a - b||_F`; shapes must agree.
pub fn frobenius_distance(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `C^k = (P^k, Q^k, Q^{k-1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateTriple {
    pub p: SignMatrix,
    pub q: StiefelPoint,
    pub q_prev: StiefelPoint,
}

impl IterateTriple {
    pub fn new(p: SignMatrix, q: StiefelPoint, q_prev: StiefelPoint) -> Result<Self> {
        if q.values().dim() != q_prev.values().dim() {
            return Err(Error::shape(format!(
                "Q is {:?} but Q_prev is {:?}",
                q.values().dim(),
                q_prev.values().dim()
            )));
        }
        if p.shape().1 != q.d() {
            return Err(Error::shape(format!(
                "P is {:?} but Q has {} rows",
                p.shape(),
                q.d()
            )));
        }
        Ok(Self { p, q, q_prev })
    }
}

/// How the Q-block proximal weight is chosen each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BetaMode {
    /// A constant weight, as used in practice.
    Fixed { beta: f64 },
    /// `beta_k = 3/2 lower + 2 ||X P^{k+1}||`, which must not exceed `upper`.
    Adaptive { lower: f64, upper: f64 },
}

impl BetaMode {
    /// The weight used in the potential function.
    pub fn potential_weight(&self) -> f64 {
        match *self {
            BetaMode::Fixed { beta } => beta,
            BetaMode::Adaptive { lower, .. } => lower,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Proximal weight on the P block, held fixed across iterations.
    pub alpha: f64,
    pub beta: BetaMode,
    /// Extrapolation weight in `[0, 1]`.
    pub gamma: f64,
    pub max_iters: usize,
    /// Stop once `||C^{k+1} - C^k||_F < tol`.
    pub tol: f64,
    pub seed: u64,
    /// Enforce the step-size conditions that guarantee sufficient decrease.
    pub theory_mode: bool,
    /// Materialize the `d x d` extrapolated matrix instead of working with
    /// the factored form.
    #[serde(default)]
    pub dense_extrapolation: bool,
    /// Keep `Q^k` snapshots for iterate-gap traces.
    #[serde(default = "default_true")]
    pub keep_snapshots: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-7,
            beta: BetaMode::Fixed { beta: 100.0 },
            gamma: 1.0,
            max_iters: 1000,
            tol: 1e-6,
            seed: 0,
            theory_mode: false,
            dense_extrapolation: false,
            keep_snapshots: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::Config(format!(
                "tol must be positive, got {}",
                self.tol
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0,1], got {}",
                self.gamma
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        match self.beta {
            BetaMode::Fixed { beta } => {
                if !(beta > 0.0 && beta.is_finite()) {
                    return Err(Error::Config(format!("beta must be positive, got {beta}")));
                }
                if self.theory_mode {
                    return Err(Error::Config(
                        "theory mode needs an adaptive beta (lower and upper bounds)".into(),
                    ));
                }
            }
            BetaMode::Adaptive { lower, upper } => {
                if !(lower > 0.0 && upper >= lower) {
                    return Err(Error::Config(format!(
                        "adaptive beta needs 0 < lower <= upper, got ({lower}, {upper})"
                    )));
                }
            }
        }
        Ok(())
    }
}
