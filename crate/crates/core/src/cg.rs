//! Truncated linear conjugate gradient for `Q x = b`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::linop::FactoredPrecision;
use crate::vecops::{axpy, dot, norm2, all_finite};

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    /// `||b - Q x|| / ||b||` with the residual recomputed at exit.
    pub relative_residual: f64,
    /// `b - Q x`, recomputed explicitly at exit.
    pub residual: Vec<f64>,
}

/// Hook for `z = M^-1 r`. Only the identity is provided.
pub trait Preconditioner {
    fn apply_into(&self, r: &[f64], z: &mut [f64]);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply_into(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

/// Default iteration cap, `10 N`.
pub fn default_max_iters(dim: usize) -> usize {
    10 * dim.max(1)
}

/// Runs CG from `x0` until the relative residual is at most `epsilon` or
/// `max_iters` iterations have been taken.
pub fn cg_solve(
    q: &FactoredPrecision,
    b: &[f64],
    x0: &[f64],
    epsilon: f64,
    max_iters: usize,
) -> Result<CgOutcome> {
    cg_solve_with(q, b, x0, epsilon, max_iters, &IdentityPreconditioner, |_, _| {})
}

/// [`cg_solve`] with a preconditioner and an observer called with
/// `(k, x_k)` for every iterate including `x_0`.
/// Relative residual below which a vanishing curvature means exhaustion.
const EXHAUSTED: f64 = 1e-100;

pub fn cg_solve_with<P, O>(
    q: &FactoredPrecision,
    b: &[f64],
    x0: &[f64],
    epsilon: f64,
    max_iters: usize,
    precond: &P,
    mut observe: O,
) -> Result<CgOutcome>
where
    P: Preconditioner + ?Sized,
    O: FnMut(usize, &[f64]),
{
    let n = q.dim();
    check_len(n, b.len())?;
    check_len(n, x0.len())?;
    if !(epsilon >= 0.0) {
        return Err(Error::argument("cg epsilon must be nonnegative"));
    }
    if max_iters == 0 {
        return Err(Error::argument("cg max_iters must be positive"));
    }
    if !all_finite(b) {
        return Err(Error::NonFinite("cg right-hand side"));
    }
    if !all_finite(x0) {
        return Err(Error::NonFinite("cg initial point"));
    }

    let mut x = x0.to_vec();
    observe(0, &x);
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            solution: x,
            iterations: 0,
            relative_residual: 0.0,
            residual: vec![0.0; n],
        });
    }

    let mut qp = vec![0.0; n];
    q.apply_into(&x, &mut qp);
    let mut r: Vec<f64> = b.iter().zip(&qp).map(|(bi, qi)| bi - qi).collect();
    let mut z = vec![0.0; n];
    precond.apply_into(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let threshold = epsilon * b_norm;

    let mut k = 0;
    let mut r_norm = norm2(&r);
    while r_norm > threshold && k < max_iters {
        if rz == 0.0 {
            break;
        }
        q.apply_into(&p, &mut qp);
        let pq = dot(&p, &qp);
        if !pq.is_finite() {
            return Err(Error::Breakdown {
                iteration: k + 1,
                reason: "non-finite curvature p^t Q p",
            });
        }
        if pq <= 0.0 {
            // Run past convergence (epsilon = 0), the recursive residual keeps
            // shrinking until the curvature underflows: nothing left to solve.
            if r_norm <= EXHAUSTED * b_norm {
                break;
            }
            return Err(Error::Breakdown {
                iteration: k + 1,
                reason: "non-positive curvature p^t Q p",
            });
        }
        let step = rz / pq;
        axpy(step, &p, &mut x);
        axpy(-step, &qp, &mut r);
        k += 1;
        observe(k, &x);

        precond.apply_into(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
        rz = rz_next;
        r_norm = norm2(&r);
        if !r_norm.is_finite() {
            return Err(Error::Breakdown {
                iteration: k,
                reason: "non-finite residual",
            });
        }
    }

    q.apply_into(&x, &mut qp);
    let residual: Vec<f64> = b.iter().zip(&qp).map(|(bi, qi)| bi - qi).collect();
    if !all_finite(&x) || !all_finite(&residual) {
        return Err(Error::Breakdown {
            iteration: k,
            reason: "non-finite iterate",
        });
    }
    let relative_residual = norm2(&residual) / b_norm;
    Ok(CgOutcome {
        solution: x,
        iterations: k,
        relative_residual,
        residual,
    })
}
