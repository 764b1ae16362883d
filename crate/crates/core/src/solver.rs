//! Proximal alternating linearized minimization with quadratic extrapolation
//! (PALMe) on the sign/Stiefel reformulation, and the post-hoc diagnostics
//! that go with it.
//!
//! One iteration, given `C^k = (P^k, Q^k, Q^{k-1})`:
//!
//! 1. `E^k = Q^k Q^k' + gamma (Q^k Q^k' - Q^{k-1} Q^{k-1}')`
//! 2. `P^{k+1} = sign(P^k + X' E^k / alpha)` (ties keep `P^k`)
//! 3. `Q^{k+1} = polar(Q^k + (X P^{k+1} + P^{k+1}' X') Q^k / beta_k)`
//!
//! With `gamma = 0` this is plain PALM.

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{matmul, matmul_nt, matmul_tn};
use crate::linalg::{polar_factor, singular_values, spectral_norm, spectral_norm_seeded};
use crate::objective::{objective_h, objective_l, potential_phi, sign_select};
use crate::types::{
    frobenius, frobenius_distance, BetaMode, DataMatrix, IterateTriple, SignMatrix, SolverConfig,
    StiefelPoint,
};

/// Entries of `X' Q Q'` at or below this magnitude are treated as zero.
pub const ZERO_ENTRY_TOL: f64 = 1e-12;

/// Slack below `gamma*` used when theory mode caps the extrapolation weight.
pub const GAMMA_MARGIN: f64 = 1e-12;

/// Snapshots are kept for every iterate up to this index, then every tenth.
pub const SNAPSHOT_DENSE_LIMIT: usize = 10_000;

/// Tolerance for the power iterations behind `||X||` and `||X P||`.
const NORM_TOL: f64 = 1e-6;

fn check_same_shape(a: &StiefelPoint, b: &StiefelPoint) -> Result<()> {
    if a.values().dim() != b.values().dim() {
        return Err(Error::shape(format!(
            "Q is {:?} but Q_prev is {:?}",
            a.values().dim(),
            b.values().dim()
        )));
    }
    Ok(())
}

/// Dense `E = Q Q' + gamma (Q Q' - Q_prev Q_prev')`.
pub fn extrapolate(q: &StiefelPoint, q_prev: &StiefelPoint, gamma: f64) -> Result<Array2<f64>> {
    check_same_shape(q, q_prev)?;
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::domain(format!(
            "gamma must lie in [0,1], got {gamma}"
        )));
    }
    let cur = matmul_nt(q.values(), q.values());
    if gamma == 0.0 {
        return Ok(cur);
    }
    let prev = matmul_nt(q_prev.values(), q_prev.values());
    let mut e = cur;
    Zip::from(&mut e)
        .and(&prev)
        .for_each(|c, &p| *c += gamma * (*c - p));
    Ok(e)
}

/// `X' E` without forming `E`: `(1 + gamma) (X'Q) Q' - gamma (X'Q_prev) Q_prev'`.
pub fn xt_extrapolated(
    x: &DataMatrix,
    q: &StiefelPoint,
    q_prev: &StiefelPoint,
    gamma: f64,
) -> Result<Array2<f64>> {
    check_same_shape(q, q_prev)?;
    if q.d() != x.d() {
        return Err(Error::shape(format!(
            "Q has {} rows, X has {}",
            q.d(),
            x.d()
        )));
    }
    let xtq = matmul_tn(x.values(), q.values());
    let cur = matmul_nt(xtq.view(), q.values());
    if gamma == 0.0 {
        return Ok(cur);
    }
    let xtqp = matmul_tn(x.values(), q_prev.values());
    let prev = matmul_nt(xtqp.view(), q_prev.values());
    let mut out = cur;
    Zip::from(&mut out)
        .and(&prev)
        .for_each(|c, &p| *c = (1.0 + gamma) * *c - gamma * p);
    Ok(out)
}

fn p_step(p: &SignMatrix, xte: ArrayView2<f64>, alpha: f64) -> Result<SignMatrix> {
    let mut shifted = p.values().to_owned();
    Zip::from(&mut shifted)
        .and(xte)
        .for_each(|s, &t| *s += t / alpha);
    sign_select(shifted.view(), p)
}

/// `P^+ = sign(P + X' E / alpha)`, the exact minimizer of
/// `-<P, X'E> + alpha/2 ||P - P^k||^2` over sign matrices.
pub fn update_p(
    p: &SignMatrix,
    x: &DataMatrix,
    e: ArrayView2<f64>,
    alpha: f64,
) -> Result<SignMatrix> {
    if !(alpha > 0.0) {
        return Err(Error::domain(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if e.dim() != (x.d(), x.d()) {
        return Err(Error::shape(format!(
            "E is {:?}, expected {}x{}",
            e.dim(),
            x.d(),
            x.d()
        )));
    }
    if p.shape() != (x.n(), x.d()) {
        return Err(Error::shape(format!(
            "P is {:?}, expected {}x{}",
            p.shape(),
            x.n(),
            x.d()
        )));
    }
    let xte = matmul_tn(x.values(), e);
    p_step(p, xte.view(), alpha)
}

/// `(X P + P' X') Q`, evaluated as `X (P Q) + P' (X' Q)`.
pub(crate) fn sym_product(x: &DataMatrix, p: &SignMatrix, q: ArrayView2<f64>) -> Array2<f64> {
    let pq = matmul(p.values(), q);
    let mut out = matmul(x.values(), pq.view());
    let xtq = matmul_tn(x.values(), q);
    out += &matmul_tn(p.values(), xtq.view());
    out
}

/// Closed-form Q-block step: the polar factor of `Q + S Q / beta` with
/// `S = X P + P' X'`.
pub fn update_q(
    q: &StiefelPoint,
    p_next: &SignMatrix,
    x: &DataMatrix,
    beta: f64,
) -> Result<StiefelPoint> {
    if !(beta > 0.0) {
        return Err(Error::domain(format!("beta must be positive, got {beta}")));
    }
    if q.d() != x.d() || p_next.shape() != (x.n(), x.d()) {
        return Err(Error::shape("update_q operands do not conform"));
    }
    let mut m = sym_product(x, p_next, q.values());
    m /= beta;
    m += &q.values();
    polar_factor(m.view())
}

/// `min{1, alpha_* beta_* / (8 ||X||^2)}`.
pub fn gamma_star(norm_x: f64, alpha_star: f64, beta_star: f64) -> Result<f64> {
    if !(norm_x > 0.0 && alpha_star > 0.0 && beta_star > 0.0) {
        return Err(Error::domain(format!(
            "gamma* needs positive inputs, got ||X|| = {norm_x}, alpha = {alpha_star}, beta = {beta_star}"
        )));
    }
    Ok((alpha_star * beta_star / (8.0 * norm_x * norm_x)).min(1.0))
}

/// Spectral norm for step-size rules. Falls back to the Jacobi SVD when the
/// power iteration stalls on a clustered spectrum.
fn operator_norm(m: ArrayView2<f64>, seed: u64) -> Result<f64> {
    match spectral_norm_seeded(m, NORM_TOL, seed) {
        Ok(v) => Ok(v),
        Err(Error::NoConvergence { .. }) => {
            let x = DataMatrix::new(m.to_owned())?;
            Ok(singular_values(&x)?.first().copied().unwrap_or(0.0))
        }
        Err(e) => Err(e),
    }
}

/// `beta = 3/2 beta_* + 2 ||X P||`, rejected if it exceeds `beta_sup`.
pub fn adaptive_beta(x: &DataMatrix, p: &SignMatrix, beta_star: f64, beta_sup: f64) -> Result<f64> {
    if !(beta_star > 0.0) {
        return Err(Error::domain(format!(
            "beta_* must be positive, got {beta_star}"
        )));
    }
    if p.shape() != (x.n(), x.d()) {
        return Err(Error::shape(format!(
            "P is {:?}, expected {}x{}",
            p.shape(),
            x.n(),
            x.d()
        )));
    }
    let xp = matmul(x.values(), p.values());
    let norm = match spectral_norm(xp.view(), NORM_TOL) {
        Ok(v) => v,
        Err(Error::NoConvergence { .. }) => operator_norm(xp.view(), 1)?,
        Err(e) => return Err(e),
    };
    let b = 1.5 * beta_star + 2.0 * norm;
    if b > beta_sup {
        return Err(Error::BetaBound {
            required: b,
            upper: beta_sup,
        });
    }
    Ok(b)
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    MaxIters,
}

/// Per-iterate record; index `k` describes `C^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    /// `Phi(C^k)` with the potential weight of the run.
    pub phi: f64,
    /// `H(P^k, Q^k)`.
    pub h: f64,
    /// `||P^k - P^{k-1}||_F`.
    pub d_p: f64,
    /// `||Q^k - Q^{k-1}||_F`.
    pub d_q: f64,
    /// `||C^k - C^{k-1}||_F`.
    pub gap: f64,
    /// Q-block weight used to produce this iterate (0 for `k = 0`).
    pub beta: f64,
    /// Seconds since the start of the run.
    pub elapsed: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    /// `(k, Q^k)` pairs, thinned past [`SNAPSHOT_DENSE_LIMIT`].
    pub snapshots: Vec<(usize, Array2<f64>)>,
    /// Weight of the quadratic term in the recorded potential values.
    pub potential_weight: f64,
    /// Extrapolation weight actually used (after any theory-mode cap).
    pub gamma: f64,
    /// `gamma*` for the run, when computed (theory mode).
    pub gamma_star: Option<f64>,
    /// Criticality residual at the final iterate.
    pub final_criticality: f64,
}

impl RunTrace {
    pub fn iterations(&self) -> usize {
        self.records.last().map_or(0, |r| r.k)
    }
}

/// Outcome of a solve.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub final_p: SignMatrix,
    pub final_q: StiefelPoint,
    /// `l(Q*)`.
    pub final_objective: f64,
    pub trace: RunTrace,
    pub tev: Option<f64>,
    pub criticality: f64,
    pub alpha_condition_holds: bool,
    pub stop_reason: StopReason,
    pub wall_time: f64,
}

impl RunReport {
    pub fn iterations(&self) -> usize {
        self.trace.iterations()
    }
}

/// Live state of a run, advanced one iteration at a time by [`Solver::step`].
#[derive(Debug, Clone)]
pub struct SolverState {
    pub k: usize,
    pub iterate: IterateTriple,
    pub beta_k: f64,
}

impl SolverState {
    /// The dense extrapolated matrix `E^k` for the current state.
    pub fn extrapolated(&self, gamma: f64) -> Result<Array2<f64>> {
        extrapolate(&self.iterate.q, &self.iterate.q_prev, gamma)
    }
}

pub struct Solver<'a> {
    x: &'a DataMatrix,
    config: SolverConfig,
    gamma: f64,
    gamma_star: Option<f64>,
    state: SolverState,
    trace: RunTrace,
    started: Instant,
    last_dq: f64,
}

impl<'a> Solver<'a> {
    /// Validates the configuration and initial point and records `C^0`.
    ///
    /// Without `init_p`, `P^0` is the sign of `X' Q^0 Q^0'` (ties to +1), so
    /// `H(P^0, Q^0) = l(Q^0)`. `Q^{-1} = Q^0`.
    pub fn new(
        x: &'a DataMatrix,
        config: SolverConfig,
        init_q: StiefelPoint,
        init_p: Option<SignMatrix>,
    ) -> Result<Self> {
        config.validate()?;
        if init_q.d() != x.d() {
            return Err(Error::shape(format!(
                "initial Q has {} rows but X has {} features",
                init_q.d(),
                x.d()
            )));
        }
        if init_q.k() > x.d().min(x.n()) {
            return Err(Error::shape(format!(
                "K = {} exceeds min(d, n) = {}",
                init_q.k(),
                x.d().min(x.n())
            )));
        }
        if !x.is_centered() {
            log::warn!("data rows are not centered");
        }
        let p0 = match init_p {
            Some(p) => {
                if p.shape() != (x.n(), x.d()) {
                    return Err(Error::shape(format!(
                        "initial P is {:?}, expected {}x{}",
                        p.shape(),
                        x.n(),
                        x.d()
                    )));
                }
                p
            }
            None => {
                let t = xt_extrapolated(x, &init_q, &init_q, 0.0)?;
                sign_select(t.view(), &SignMatrix::ones(x.n(), x.d()))?
            }
        };

        let mut gamma = config.gamma;
        let mut gamma_star_value = None;
        if config.theory_mode {
            let BetaMode::Adaptive { lower, .. } = config.beta else {
                unreachable!("validated above");
            };
            let norm_x = operator_norm(x.values(), config.seed)?;
            let gs = if norm_x > 0.0 {
                gamma_star(norm_x, config.alpha, lower)?
            } else {
                1.0
            };
            let cap = (gs - GAMMA_MARGIN).max(0.0);
            if gamma > cap {
                log::info!("theory mode: capping gamma {gamma} to {cap} (gamma* = {gs})");
                gamma = cap;
            }
            gamma_star_value = Some(gs);
        }

        let iterate = IterateTriple::new(p0, init_q.clone(), init_q)?;
        let weight = config.beta.potential_weight();
        let phi = potential_phi(&iterate, weight, x)?;
        let h = objective_h(&iterate.p, &iterate.q, x)?;
        let mut trace = RunTrace {
            potential_weight: weight,
            gamma,
            gamma_star: gamma_star_value,
            ..RunTrace::default()
        };
        trace.records.push(TraceRecord {
            k: 0,
            phi,
            h,
            d_p: 0.0,
            d_q: 0.0,
            gap: 0.0,
            beta: 0.0,
            elapsed: 0.0,
        });
        if config.keep_snapshots {
            trace.snapshots.push((0, iterate.q.values().to_owned()));
        }
        Ok(Self {
            x,
            config,
            gamma,
            gamma_star: gamma_star_value,
            state: SolverState {
                k: 0,
                iterate,
                beta_k: 0.0,
            },
            trace,
            started: Instant::now(),
            last_dq: 0.0,
        })
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn trace(&self) -> &RunTrace {
        &self.trace
    }

    /// Extrapolation weight in effect.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn gamma_star(&self) -> Option<f64> {
        self.gamma_star
    }

    /// Performs one iteration and returns the record of the new iterate.
    pub fn step(&mut self) -> Result<TraceRecord> {
        let x = self.x;
        let cfg = &self.config;
        let c = &self.state.iterate;

        let xte = if cfg.dense_extrapolation {
            let e = extrapolate(&c.q, &c.q_prev, self.gamma)?;
            matmul_tn(x.values(), e.view())
        } else {
            xt_extrapolated(x, &c.q, &c.q_prev, self.gamma)?
        };
        let p_next = p_step(&c.p, xte.view(), cfg.alpha)?;
        let beta_k = match cfg.beta {
            BetaMode::Fixed { beta } => beta,
            BetaMode::Adaptive { lower, upper } => adaptive_beta(x, &p_next, lower, upper)?,
        };
        let q_next = update_q(&c.q, &p_next, x, beta_k)?;

        let d_p = frobenius_distance(p_next.values(), c.p.values());
        let d_q = frobenius_distance(q_next.values(), c.q.values());
        let gap = (d_p * d_p + d_q * d_q + self.last_dq * self.last_dq).sqrt();

        let q_prev = std::mem::replace(&mut self.state.iterate.q, q_next);
        self.state.iterate.q_prev = q_prev;
        self.state.iterate.p = p_next;
        self.state.k += 1;
        self.state.beta_k = beta_k;
        self.last_dq = d_q;

        let it = &self.state.iterate;
        let record = TraceRecord {
            k: self.state.k,
            phi: potential_phi(it, self.trace.potential_weight, x)?,
            h: objective_h(&it.p, &it.q, x)?,
            d_p,
            d_q,
            gap,
            beta: beta_k,
            elapsed: self.started.elapsed().as_secs_f64(),
        };
        self.trace.records.push(record);
        let k = self.state.k;
        if cfg.keep_snapshots && (k <= SNAPSHOT_DENSE_LIMIT || k.is_multiple_of(10)) {
            self.trace.snapshots.push((k, it.q.values().to_owned()));
        }
        Ok(record)
    }

    /// Iterates until the gap drops below `tol` or `max_iters` is reached.
    pub fn run(mut self) -> Result<RunReport> {
        let mut stop = StopReason::MaxIters;
        while self.state.k < self.config.max_iters {
            let rec = self.step()?;
            if rec.gap < self.config.tol {
                stop = StopReason::Tolerance;
                break;
            }
        }
        self.finish(stop)
    }

    fn finish(mut self, stop_reason: StopReason) -> Result<RunReport> {
        let x = self.x;
        let it = self.state.iterate;
        if self.config.keep_snapshots
            && self.trace.snapshots.last().map(|s| s.0) != Some(self.state.k)
        {
            self.trace
                .snapshots
                .push((self.state.k, it.q.values().to_owned()));
        }
        // sign selection consistent with X'Q*Q*', ties resolved by P*
        let t = xt_extrapolated(x, &it.q, &it.q, 0.0)?;
        let p_crit = sign_select(t.view(), &it.p)?;
        let criticality = criticality_residual(&it.q, &p_crit, x)?;
        let alpha_ok = check_alpha_condition(x, &it.q, self.config.alpha)?;
        self.trace.final_criticality = criticality;
        Ok(RunReport {
            final_objective: objective_l(&it.q, x)?,
            final_p: it.p,
            final_q: it.q,
            trace: self.trace,
            tev: None,
            criticality,
            alpha_condition_holds: alpha_ok,
            stop_reason,
            wall_time: self.started.elapsed().as_secs_f64(),
        })
    }
}

/// Runs PALMe (PALM when `config.gamma == 0`) from `init_q`.
pub fn solve(
    x: &DataMatrix,
    config: &SolverConfig,
    init_q: StiefelPoint,
    init_p: Option<SignMatrix>,
) -> Result<RunReport> {
    Solver::new(x, config.clone(), init_q, init_p)?.run()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecreaseViolation {
    /// The step `C^k -> C^{k+1}` is reported as `k`.
    pub k: usize,
    /// `Phi(C^{k+1}) - Phi(C^k)`.
    pub observed: f64,
    /// `-kappa1 ||C^{k+1} - C^k||^2`.
    pub required: f64,
}

/// Audit of `Phi(C^{k+1}) - Phi(C^k) <= -kappa1 ||C^{k+1} - C^k||_F^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecreaseReport {
    /// `min{alpha_* (1 - gamma*)/2, beta^*/4}` with the upper Q weight.
    pub kappa1: f64,
    pub violations: Vec<DecreaseViolation>,
    /// `min{alpha_* (1 - gamma*)/2, beta_*/4}` with the lower Q weight.
    pub kappa1_lower: f64,
    pub violations_lower: Vec<DecreaseViolation>,
}

impl DecreaseReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Relative slack on the decrease inequality.
pub const DECREASE_RTOL: f64 = 1e-9;

/// Checks the sufficient-decrease inequality over a recorded trace.
///
/// `gamma*` comes from the trace when the run was in theory mode and defaults
/// to the extrapolation weight that was used otherwise.
pub fn sufficient_decrease_check(
    trace: &RunTrace,
    config: &SolverConfig,
) -> Result<DecreaseReport> {
    if trace.records.is_empty() {
        return Err(Error::MissingTrace("potential values"));
    }
    if trace.records.iter().any(|r| !r.phi.is_finite()) {
        return Err(Error::MissingTrace("finite potential values"));
    }
    let g = trace.gamma_star.unwrap_or(trace.gamma).min(1.0);
    let (lower, upper) = match config.beta {
        BetaMode::Fixed { beta } => (beta, beta),
        BetaMode::Adaptive { lower, upper } => (lower, upper),
    };
    let p_term = config.alpha * (1.0 - g) / 2.0;
    let kappa1 = p_term.min(upper / 4.0);
    let kappa1_lower = p_term.min(lower / 4.0);

    let mut violations = Vec::new();
    let mut violations_lower = Vec::new();
    for w in trace.records.windows(2) {
        let (prev, next) = (&w[0], &w[1]);
        let observed = next.phi - prev.phi;
        let slack = DECREASE_RTOL * (1.0 + prev.phi.abs());
        let step2 = next.gap * next.gap;
        for (kappa, list) in [
            (kappa1, &mut violations),
            (kappa1_lower, &mut violations_lower),
        ] {
            let required = -kappa * step2;
            if observed > required + slack {
                list.push(DecreaseViolation {
                    k: prev.k,
                    observed,
                    required,
                });
            }
        }
    }
    Ok(DecreaseReport {
        kappa1,
        violations,
        kappa1_lower,
        violations_lower,
    })
}

/// Norm of the part of `G = -(X P + P' X') Q` lying outside the normal space
/// `{Q S : S symmetric}` of the Stiefel manifold at `Q`.
///
/// Zero certifies that `Q` is a critical point of `l` for the sign selection
/// `P`. `P` must agree with `sign(X' Q Q')` wherever that entry is nonzero.
pub fn criticality_residual(q: &StiefelPoint, p: &SignMatrix, x: &DataMatrix) -> Result<f64> {
    if q.d() != x.d() || p.shape() != (x.n(), x.d()) {
        return Err(Error::shape("criticality operands do not conform"));
    }
    let t = xt_extrapolated(x, q, q, 0.0)?;
    for ((i, j), &v) in t.indexed_iter() {
        if v.abs() > ZERO_ENTRY_TOL && v * p.values()[[i, j]] < 0.0 {
            return Err(Error::Selection { row: i, col: j });
        }
    }
    let mut g = sym_product(x, p, q.values());
    g.mapv_inplace(|v| -v);
    let a = matmul_tn(q.values(), g.view());
    let sym = (&a + &a.t()) * 0.5;
    let normal = matmul(q.values(), sym.view());
    Ok(frobenius((&g - &normal).view()))
}

/// Whether `alpha_* < min{ |t_ij| : t_ij != 0 }` for `T = X' Q Q'`; vacuously
/// true when `T` vanishes.
pub fn check_alpha_condition(x: &DataMatrix, q: &StiefelPoint, alpha_star: f64) -> Result<bool> {
    if !(alpha_star > 0.0) {
        return Err(Error::domain(format!(
            "alpha_* must be positive, got {alpha_star}"
        )));
    }
    let t = xt_extrapolated(x, q, q, 0.0)?;
    let min_nonzero = t
        .iter()
        .map(|v| v.abs())
        .filter(|&v| v > ZERO_ENTRY_TOL)
        .fold(f64::INFINITY, f64::min);
    Ok(alpha_star < min_nonzero)
}
