//! Perturbation-optimization kernels and a chain driver.
//!
//! Every kernel first draws `eta = Q mu + F^t omega`, then (approximately)
//! solves `Q x = eta`. The kernels differ in how the solve is stopped, where
//! CG starts and whether the proposal is corrected.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::adapt::AdaptController;
use crate::cg::{cg_solve, default_max_iters};
use crate::error::{check_len, Error, Result};
use crate::linop::GaussianTarget;
use crate::rng::RngStream;
use crate::vecops::{all_finite, dot, norm2};

/// Solver tolerance used by [`epo_step`] when no dense factorization exists.
pub const EPO_CG_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelOutcome {
    pub next_sample: Vec<f64>,
    pub proposal: Vec<f64>,
    pub acceptance_probability: f64,
    /// `min(0, -r^t (previous - proposal))`.
    pub log_acceptance: f64,
    pub accepted: bool,
    pub cg_iterations: usize,
    pub relative_residual: f64,
}

/// `eta = Q mu + F^t omega` with fresh `omega ~ N(0, I_N')`.
pub fn perturb(target: &GaussianTarget, stream: &mut RngStream) -> Result<Vec<f64>> {
    let omega = stream.standard_normal_vector(target.precision().factor_dim())?;
    perturb_with(target, &omega)
}

/// [`perturb`] with a caller-supplied `omega`.
pub fn perturb_with(target: &GaussianTarget, omega: &[f64]) -> Result<Vec<f64>> {
    let factor = target.precision().factor();
    let mut eta = factor.apply_transpose(omega)?;
    for (e, p) in eta.iter_mut().zip(target.potential()) {
        *e += p;
    }
    Ok(eta)
}

/// `log alpha = min(0, -r^t (previous - proposal))`.
pub fn log_acceptance(residual: &[f64], previous: &[f64], proposal: &[f64]) -> Result<f64> {
    let s: f64 = residual
        .iter()
        .zip(previous.iter().zip(proposal))
        .map(|(r, (p, x))| r * (p - x))
        .sum();
    if !s.is_finite() {
        return Err(Error::NonFinite("acceptance exponent"));
    }
    Ok((-s).min(0.0))
}

fn check_previous(target: &GaussianTarget, previous: &[f64]) -> Result<()> {
    check_len(target.dim(), previous.len())?;
    if !all_finite(previous) {
        return Err(Error::NonFinite("previous sample"));
    }
    Ok(())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon >= 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::argument(format!("truncation threshold must be >= 0, got {epsilon}")))
    }
}

/// Exact PO: solves `Q x = eta` by the dense Cholesky factor when the target
/// carries a mirror, otherwise by CG run to [`EPO_CG_TOLERANCE`].
pub fn epo_step(target: &GaussianTarget, stream: &mut RngStream) -> Result<KernelOutcome> {
    let eta = perturb(target, stream)?;
    let (x, iterations) = match target.dense_mirror() {
        Some(mirror) => (mirror.solve(&eta).as_slice().to_vec(), 0),
        None => {
            let n = target.dim();
            let out = cg_solve(
                target.precision(),
                &eta,
                &vec![0.0; n],
                EPO_CG_TOLERANCE,
                default_max_iters(n),
            )?;
            (out.solution, out.iterations)
        }
    };
    let qx = target.precision().apply(&x)?;
    let residual: Vec<f64> = eta.iter().zip(&qx).map(|(e, q)| e - q).collect();
    let eta_norm = norm2(&eta);
    let relative_residual = if eta_norm == 0.0 { 0.0 } else { norm2(&residual) / eta_norm };
    Ok(KernelOutcome {
        next_sample: x.clone(),
        proposal: x,
        acceptance_probability: 1.0,
        log_acceptance: 0.0,
        accepted: true,
        cg_iterations: iterations,
        relative_residual,
    })
}

/// Truncated PO: CG from zero, always accepted. The RJ acceptance
/// probability against `previous` is computed for diagnostics only.
pub fn tpo_step(
    target: &GaussianTarget,
    previous: &[f64],
    stream: &mut RngStream,
    epsilon: f64,
    max_iters: usize,
) -> Result<KernelOutcome> {
    check_previous(target, previous)?;
    check_epsilon(epsilon)?;
    let eta = perturb(target, stream)?;
    let x0 = vec![0.0; target.dim()];
    let out = cg_solve(target.precision(), &eta, &x0, epsilon, max_iters)?;
    let log_alpha = log_acceptance(&out.residual, previous, &out.solution)?;
    Ok(KernelOutcome {
        next_sample: out.solution.clone(),
        proposal: out.solution,
        acceptance_probability: libm::exp(log_alpha),
        log_acceptance: log_alpha,
        accepted: true,
        cg_iterations: out.iterations,
        relative_residual: out.relative_residual,
    })
}

/// Reversible-jump PO: CG from `-previous`, then accept with probability
/// `min(1, exp(-r^t (previous - x)))` using the recomputed residual.
pub fn rjpo_step(
    target: &GaussianTarget,
    previous: &[f64],
    stream: &mut RngStream,
    epsilon: f64,
    max_iters: usize,
) -> Result<KernelOutcome> {
    check_previous(target, previous)?;
    check_epsilon(epsilon)?;
    let eta = perturb(target, stream)?;
    let x0: Vec<f64> = previous.iter().map(|v| -v).collect();
    let out = cg_solve(target.precision(), &eta, &x0, epsilon, max_iters)?;
    let log_alpha = log_acceptance(&out.residual, previous, &out.solution)?;
    let accepted = libm::log(stream.uniform()) < log_alpha;
    let next_sample = if accepted {
        out.solution.clone()
    } else {
        previous.to_vec()
    };
    Ok(KernelOutcome {
        next_sample,
        proposal: out.solution,
        acceptance_probability: libm::exp(log_alpha),
        log_acceptance: log_alpha,
        accepted,
        cg_iterations: out.iterations,
        relative_residual: out.relative_residual,
    })
}

/// Auxiliary-variable law `z ~ N(A x + b, B)` of a general reversible move.
/// Dense, for small test problems only.
#[derive(Debug, Clone)]
pub struct GeneralMoveSpec {
    a: DMatrix<f64>,
    b_cov: DMatrix<f64>,
    shift: DVector<f64>,
    b_chol: Cholesky<f64, Dyn>,
}

/// Largest dimension accepted by the dense oracle.
pub const ORACLE_MAX_DIM: usize = 64;

impl GeneralMoveSpec {
    pub fn new(a: DMatrix<f64>, b_cov: DMatrix<f64>, shift: DVector<f64>) -> Result<Self> {
        let n = shift.len();
        if a.shape() != (n, n) || b_cov.shape() != (n, n) {
            return Err(Error::config(format!(
                "general move: A {:?} and B {:?} must be {n}x{n}",
                a.shape(),
                b_cov.shape()
            )));
        }
        let b_chol = Cholesky::new(b_cov.clone())
            .ok_or_else(|| Error::config("general move: B is not positive definite"))?;
        Ok(GeneralMoveSpec {
            a,
            b_cov,
            shift,
            b_chol,
        })
    }

    /// `A = B = Q`, `b = Q mu`: the configuration behind [`rjpo_step`].
    pub fn precision_move(q: &DMatrix<f64>, mean: &DVector<f64>) -> Result<Self> {
        Self::new(q.clone(), q.clone(), q * mean)
    }

    /// `A = C^t`, `B = I` with `Q = C C^t`.
    pub fn cholesky_move(q: &DMatrix<f64>, shift: DVector<f64>) -> Result<Self> {
        let c = Cholesky::new(q.clone())
            .ok_or_else(|| Error::config("general move: Q is not positive definite"))?
            .l();
        let n = q.nrows();
        Self::new(c.transpose(), DMatrix::identity(n, n), shift)
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    /// `A^t B^-1 A`.
    pub fn induced_precision(&self) -> DMatrix<f64> {
        self.a.transpose() * self.b_chol.solve(&self.a)
    }

    /// `z = A previous + b + L_B omega`.
    pub fn draw_auxiliary(&self, previous: &DVector<f64>, stream: &mut RngStream) -> Result<DVector<f64>> {
        let omega = DVector::from_vec(stream.standard_normal_vector(self.dim())?);
        Ok(&self.a * previous + &self.shift + self.b_chol.l() * omega)
    }

    /// `1/2 (Q + A^t B^-1 A)`.
    pub fn system_matrix(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        (q + self.induced_precision()) * 0.5
    }

    /// `Q mu + A^t B^-1 (z - b)`.
    pub fn system_rhs(&self, q: &DMatrix<f64>, mean: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
        q * mean + self.a.transpose() * self.b_chol.solve(&(z - &self.shift))
    }

    /// Exact solution `f(z)` of the move's linear system.
    pub fn exact_move(&self, q: &DMatrix<f64>, mean: &DVector<f64>, z: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.system_matrix(q);
        let chol = Cholesky::new(m)
            .ok_or_else(|| Error::Degenerate("general move system is not positive definite".into()))?;
        Ok(chol.solve(&self.system_rhs(q, mean, z)))
    }

    /// `r(z) = Q mu + A^t B^-1 (z - b) - 1/2 (Q + A^t B^-1 A) f`.
    pub fn residual(
        &self,
        q: &DMatrix<f64>,
        mean: &DVector<f64>,
        z: &DVector<f64>,
        f: &DVector<f64>,
    ) -> DVector<f64> {
        self.system_rhs(q, mean, z) - self.system_matrix(q) * f
    }

    /// `Delta S = -2 log` of the density ratio
    /// `P(x) P(z | x) / (P(previous) P(z | previous))`, from the quadratic forms.
    pub fn delta_s(
        &self,
        q: &DMatrix<f64>,
        mean: &DVector<f64>,
        previous: &DVector<f64>,
        proposal: &DVector<f64>,
        z: &DVector<f64>,
    ) -> f64 {
        let prior = |x: &DVector<f64>| {
            let d = x - mean;
            d.dot(&(q * &d))
        };
        let aux = |x: &DVector<f64>| {
            let d = z - &self.a * x - &self.shift;
            d.dot(&self.b_chol.solve(&d))
        };
        (prior(proposal) - prior(previous)) + (aux(proposal) - aux(previous))
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b_cov(&self) -> &DMatrix<f64> {
        &self.b_cov
    }
}

/// One general reversible-jump step with an exact dense `f(z)`.
pub fn general_rj_step_oracle(
    target: &GaussianTarget,
    spec: &GeneralMoveSpec,
    previous: &[f64],
    stream: &mut RngStream,
) -> Result<KernelOutcome> {
    let mirror = target
        .dense_mirror()
        .ok_or_else(|| Error::config("general oracle needs a target with a dense mirror"))?;
    let n = target.dim();
    if n > ORACLE_MAX_DIM {
        return Err(Error::config(format!(
            "general oracle is limited to N <= {ORACLE_MAX_DIM}, got {n}"
        )));
    }
    check_len(n, spec.dim())?;
    check_previous(target, previous)?;

    let q = mirror.precision();
    let mean = mirror.mean();
    let prev = DVector::from_column_slice(previous);
    let z = spec.draw_auxiliary(&prev, stream)?;
    let f = spec.exact_move(q, mean, &z)?;
    let proposal = &f - &prev;
    let r = spec.residual(q, mean, &z, &f);
    let log_alpha = log_acceptance(r.as_slice(), previous, proposal.as_slice())?;
    let accepted = libm::log(stream.uniform()) < log_alpha;
    let rhs_norm = spec.system_rhs(q, mean, &z).norm();
    let proposal = proposal.as_slice().to_vec();
    Ok(KernelOutcome {
        next_sample: if accepted { proposal.clone() } else { previous.to_vec() },
        proposal,
        acceptance_probability: libm::exp(log_alpha),
        log_acceptance: log_alpha,
        accepted,
        cg_iterations: 0,
        relative_residual: if rhs_norm == 0.0 { 0.0 } else { r.norm() / rhs_norm },
    })
}

/// Kernel used by [`run_chain`].
#[derive(Debug, Clone)]
pub enum KernelChoice {
    Epo,
    Tpo { epsilon: f64, max_iters: Option<usize> },
    Rjpo { epsilon: f64, max_iters: Option<usize> },
    AdaptiveRjpo { controller: AdaptController, max_iters: Option<usize> },
}

#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub n_max: usize,
    /// Burn-in: samples `1..=n_min` are excluded from the moments.
    pub n_min: usize,
    /// Accumulate the empirical covariance (O(N^2) per step).
    pub track_covariance: bool,
    /// Keep every post-burn-in sample.
    pub record_trace: bool,
    /// Starting point; zeros when absent.
    pub initial: Option<Vec<f64>>,
}

impl ChainConfig {
    /// Burn-in defaults to 10% of `n_max`.
    pub fn new(n_max: usize) -> Self {
        ChainConfig {
            n_max,
            n_min: n_max / 10,
            track_covariance: true,
            record_trace: false,
            initial: None,
        }
    }

    pub fn with_burn_in(mut self, n_min: usize) -> Self {
        self.n_min = n_min;
        self
    }

    pub fn with_trace(mut self) -> Self {
        self.record_trace = true;
        self
    }

    pub fn without_covariance(mut self) -> Self {
        self.track_covariance = false;
        self
    }

    pub fn with_initial(mut self, x: Vec<f64>) -> Self {
        self.initial = Some(x);
        self
    }
}

/// Chain position, running moments and per-step histories.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub x: Vec<f64>,
    pub iteration: usize,
    pub n_min: usize,
    pub n_max: usize,
    /// Threshold in force at the last step (`None` for E-PO).
    pub epsilon: Option<f64>,
    samples: usize,
    mean: Vec<f64>,
    comoment: Option<Vec<f64>>,
    pub alpha_history: Vec<f64>,
    pub accepted_history: Vec<bool>,
    pub cg_history: Vec<usize>,
    pub epsilon_history: Vec<f64>,
    /// Post-burn-in samples, row-major `samples x N`, when recorded.
    pub trace: Option<Vec<f64>>,
    pub controller: Option<AdaptController>,
}

impl ChainState {
    fn new(x: Vec<f64>, config: &ChainConfig) -> Self {
        let n = x.len();
        let post = config.n_max - config.n_min;
        ChainState {
            x,
            iteration: 0,
            n_min: config.n_min,
            n_max: config.n_max,
            epsilon: None,
            samples: 0,
            mean: vec![0.0; n],
            comoment: config.track_covariance.then(|| vec![0.0; n * n]),
            alpha_history: Vec::with_capacity(config.n_max),
            accepted_history: Vec::with_capacity(config.n_max),
            cg_history: Vec::with_capacity(config.n_max),
            epsilon_history: Vec::new(),
            trace: config.record_trace.then(|| Vec::with_capacity(post * n)),
            controller: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Number of samples in the moment window.
    pub fn sample_count(&self) -> usize {
        self.samples
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Empirical covariance with the `(n - 1)` denominator.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        let c = self.comoment.as_ref()?;
        if self.samples < 2 {
            return None;
        }
        let n = self.dim();
        let denom = (self.samples - 1) as f64;
        Some(DMatrix::from_fn(n, n, |i, j| c[i * n + j] / denom))
    }

    /// Trace of coordinate `i` over the post-burn-in samples.
    pub fn coordinate_trace(&self, i: usize) -> Option<Vec<f64>> {
        let t = self.trace.as_ref()?;
        let n = self.dim();
        if i >= n {
            return None;
        }
        Some(t.iter().skip(i).step_by(n).copied().collect())
    }

    pub fn mean_acceptance(&self) -> f64 {
        mean_of(self.alpha_history.iter().copied())
    }

    pub fn mean_cg_iterations(&self) -> f64 {
        mean_of(self.cg_history.iter().map(|&j| j as f64))
    }

    pub fn total_cg_iterations(&self) -> usize {
        self.cg_history.iter().sum()
    }

    pub fn acceptance_rate(&self) -> f64 {
        mean_of(self.accepted_history.iter().map(|&a| if a { 1.0 } else { 0.0 }))
    }

    fn record(&mut self, outcome: KernelOutcome, epsilon: Option<f64>) {
        self.iteration += 1;
        self.alpha_history.push(outcome.acceptance_probability);
        self.accepted_history.push(outcome.accepted);
        self.cg_history.push(outcome.cg_iterations);
        if let Some(e) = epsilon {
            self.epsilon_history.push(e);
        }
        self.epsilon = epsilon;
        self.x = outcome.next_sample;
        if self.iteration > self.n_min {
            self.accumulate();
        }
    }

    fn accumulate(&mut self) {
        self.samples += 1;
        let k = self.samples as f64;
        let n = self.dim();
        let mut delta = vec![0.0; n];
        for i in 0..n {
            delta[i] = self.x[i] - self.mean[i];
            self.mean[i] += delta[i] / k;
        }
        if let Some(c) = self.comoment.as_mut() {
            for i in 0..n {
                let after_i = self.x[i] - self.mean[i];
                let row = &mut c[i * n..(i + 1) * n];
                for j in 0..n {
                    row[j] += after_i * delta[j];
                }
            }
        }
        if let Some(t) = self.trace.as_mut() {
            t.extend_from_slice(&self.x);
        }
    }
}

fn mean_of(it: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = it.len();
    if n == 0 {
        0.0
    } else {
        it.sum::<f64>() / n as f64
    }
}

/// Runs `config.n_max` steps of `kernel` on `target`.
pub fn run_chain(
    target: &GaussianTarget,
    kernel: KernelChoice,
    config: &ChainConfig,
    stream: &mut RngStream,
) -> Result<ChainState> {
    if config.n_min >= config.n_max {
        return Err(Error::argument(format!(
            "burn-in n_min = {} leaves no samples before n_max = {}",
            config.n_min, config.n_max
        )));
    }
    let n = target.dim();
    let x0 = match &config.initial {
        Some(x) => {
            check_len(n, x.len())?;
            x.clone()
        }
        None => vec![0.0; n],
    };
    let mut state = ChainState::new(x0, config);
    let cap = |m: Option<usize>| m.unwrap_or_else(|| default_max_iters(n));

    let mut kernel = kernel;
    for step in 1..=config.n_max {
        let wrap = |e: Error| e.at_step(step);
        match &mut kernel {
            KernelChoice::Epo => {
                let out = epo_step(target, stream).map_err(wrap)?;
                state.record(out, None);
            }
            KernelChoice::Tpo { epsilon, max_iters } => {
                let out = tpo_step(target, &state.x, stream, *epsilon, cap(*max_iters)).map_err(wrap)?;
                state.record(out, Some(*epsilon));
            }
            KernelChoice::Rjpo { epsilon, max_iters } => {
                let out = rjpo_step(target, &state.x, stream, *epsilon, cap(*max_iters)).map_err(wrap)?;
                state.record(out, Some(*epsilon));
            }
            KernelChoice::AdaptiveRjpo { controller, max_iters } => {
                let eps = controller.epsilon();
                let out = rjpo_step(target, &state.x, stream, eps, cap(*max_iters)).map_err(wrap)?;
                controller.observe(out.cg_iterations, out.acceptance_probability);
                state.record(out, Some(eps));
            }
        }
    }
    if let KernelChoice::AdaptiveRjpo { controller, .. } = kernel {
        state.controller = Some(controller);
    }
    Ok(state)
}

/// Helper for oracles: `previous - proposal` dotted with `residual`.
pub fn residual_gap(residual: &[f64], previous: &[f64], proposal: &[f64]) -> f64 {
    let d: Vec<f64> = previous.iter().zip(proposal).map(|(p, x)| p - x).collect();
    dot(residual, &d)
}
