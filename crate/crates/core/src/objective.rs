//! Objective and potential evaluations.

use ndarray::{Array2, ArrayView2, Zip};

use crate::error::{Error, Result};
use crate::kernels::{matmul, matmul_tn};
use crate::types::{frobenius_distance, DataMatrix, IterateTriple, SignMatrix, StiefelPoint};

fn check_q_x(q: &StiefelPoint, x: &DataMatrix) -> Result<()> {
    if q.d() != x.d() {
        return Err(Error::shape(format!(
            "Q has {} rows but X has {} features",
            q.d(),
            x.d()
        )));
    }
    Ok(())
}

fn check_p(p: &SignMatrix, x: &DataMatrix) -> Result<()> {
    if p.shape() != (x.n(), x.d()) {
        return Err(Error::shape(format!(
            "P is {:?}, expected ({}, {})",
            p.shape(),
            x.n(),
            x.d()
        )));
    }
    Ok(())
}

/// `l(Q) = -||Q Q^T X||_1` for feasible `Q`.
pub fn objective_l(q: &StiefelPoint, x: &DataMatrix) -> Result<f64> {
    check_q_x(q, x)?;
    let proj = matmul_tn(q.values(), x.values());
    let recon = matmul(q.values(), proj.view());
    Ok(-recon.iter().map(|v| v.abs()).sum::<f64>())
}

/// `H(P, Q) = -<P, X^T Q Q^T>`, evaluated as `-<P Q, X^T Q>` so that no
/// `n x d` product is formed.
pub fn objective_h(p: &SignMatrix, q: &StiefelPoint, x: &DataMatrix) -> Result<f64> {
    check_q_x(q, x)?;
    check_p(p, x)?;
    let pq = matmul(p.values(), q.values());
    let xtq = matmul_tn(x.values(), q.values());
    Ok(-inner(pq.view(), xtq.view()))
}

/// `Phi_beta(P, Q, Q') = H(P, Q) + beta/2 ||Q - Q'||_F^2`.
pub fn potential_phi(c: &IterateTriple, beta: f64, x: &DataMatrix) -> Result<f64> {
    if !(beta > 0.0) {
        return Err(Error::domain(format!(
            "potential weight must be positive, got {beta}"
        )));
    }
    let h = objective_h(&c.p, &c.q, x)?;
    let dq = frobenius_distance(c.q.values(), c.q_prev.values());
    Ok(h + 0.5 * beta * dq * dq)
}

/// Elementwise sign of `m`, keeping the previous entry wherever `m` is zero.
pub fn sign_select(m: ArrayView2<f64>, prev: &SignMatrix) -> Result<SignMatrix> {
    if m.dim() != prev.shape() {
        return Err(Error::shape(format!(
            "matrix is {:?} but previous signs are {:?}",
            m.dim(),
            prev.shape()
        )));
    }
    let mut out = Array2::<f64>::zeros(m.dim());
    Zip::from(&mut out)
        .and(m)
        .and(prev.values())
        .for_each(|o, &v, &p| {
            *o = if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                p
            }
        });
    Ok(SignMatrix::from_signs(out))
}

pub(crate) fn inner(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}
