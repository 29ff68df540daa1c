use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use rjpo_core::cg::{cg_solve, cg_solve_with, IdentityPreconditioner};
use rjpo_core::linop::{
    decimation_operator, dense_operator, relative_error, stacked_factor, FactoredPrecision,
    LinearOperator, SharedOperator,
};
use rjpo_core::rng::RngStream;
use rjpo_core::sampler::{
    epo_step, general_rj_step_oracle, log_acceptance, rjpo_step, run_chain, ChainConfig,
    GeneralMoveSpec, KernelChoice,
};
use rjpo_core::toy::{ar1_problem, from_dense_precision, spectral_problem};
use rjpo_core::vecops::dot;
use std::sync::Arc;

fn random_matrix(rows: usize, cols: usize, s: &mut RngStream) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, &s.standard_normal_vector(rows * cols).unwrap())
}

fn random_spd(n: usize, s: &mut RngStream) -> DMatrix<f64> {
    let a = random_matrix(n, n, s);
    a.tr_mul(&a) + DMatrix::identity(n, n) * (0.5 * n as f64)
}

fn adjoint_error(op: &dyn LinearOperator, s: &mut RngStream) -> f64 {
    let u = s.standard_normal_vector(op.in_dim()).unwrap();
    let v = s.standard_normal_vector(op.out_dim()).unwrap();
    let lhs = dot(&op.apply(&u).unwrap(), &v);
    let rhs = dot(&u, &op.apply_transpose(&v).unwrap());
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1e-300)
}

#[test]
fn adjoint_on_100_probe_pairs() {
    let mut s = RngStream::new(100);
    let dense: SharedOperator = Arc::new(dense_operator(random_matrix(7, 5, &mut s)).unwrap());
    let dec: SharedOperator = Arc::new(decimation_operator((6, 4), 2, (1, 0)).unwrap());
    let dense_sq: SharedOperator = Arc::new(dense_operator(random_matrix(24, 24, &mut s)).unwrap());
    let stack: SharedOperator = Arc::new(stacked_factor(vec![(2.5, dec.clone()), (0.3, dense_sq)]).unwrap());
    for op in [&dense, &dec, &stack] {
        for _ in 0..100 {
            let e = adjoint_error(op.as_ref(), &mut s);
            assert!(e < 1e-8, "adjoint error {e}");
        }
    }
}

#[test]
fn stacked_precision_matches_dense_assembly() {
    // Q = g_y H^t H + g_x D^t D with H a decimated dense blur and D dense, on 8 pixels.
    let mut s = RngStream::new(101);
    let blur = random_matrix(8, 8, &mut s);
    let dec = decimation_operator((2, 4), 2, (0, 1)).unwrap();
    let mut p = DMatrix::zeros(2, 8);
    for (row, idx) in dec.selected_indices().enumerate() {
        p[(row, idx)] = 1.0;
    }
    let h = &p * &blur;
    let d = random_matrix(8, 8, &mut s);
    let (gy, gx) = (3.7, 0.05);
    let h_op: SharedOperator = Arc::new(dense_operator(h.clone()).unwrap());
    let d_op: SharedOperator = Arc::new(dense_operator(d.clone()).unwrap());
    let q = FactoredPrecision::from_operator(stacked_factor(vec![(gy, h_op), (gx, d_op)]).unwrap());
    let expected = h.tr_mul(&h) * gy + d.tr_mul(&d) * gx;
    assert!((q.to_dense() - &expected).norm() / expected.norm() < 1e-10);
}

#[test]
fn cg_error_is_monotone_in_q_norm() {
    let mut s = RngStream::new(102);
    for &n in &[4usize, 16, 64] {
        for _ in 0..5 {
            let qd = random_spd(n, &mut s);
            let l = qd.clone().cholesky().unwrap().l();
            let q = FactoredPrecision::from_operator(dense_operator(l.transpose()).unwrap());
            let b = s.standard_normal_vector(n).unwrap();
            let exact = qd.clone().cholesky().unwrap().solve(&DVector::from_column_slice(&b));
            let mut errs = Vec::new();
            cg_solve_with(&q, &b, &vec![0.0; n], 0.0, n, &IdentityPreconditioner, |_, x| {
                let e = DVector::from_column_slice(x) - &exact;
                errs.push(e.dot(&(&qd * &e)).sqrt());
            })
            .unwrap();
            for w in errs.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-10) + 1e-12, "{} > {}", w[1], w[0]);
            }
        }
    }
}

/// Exact termination survives rounding only when orthogonality loss is mild,
/// so the systems here are Wishart-plus-shift matrices with modest spread.
#[test]
fn cg_with_zero_threshold_reaches_dense_solution() {
    let mut s = RngStream::new(103);
    for &n in &[5usize, 20, 50, 64] {
        let qd = random_spd(n, &mut s);
        let ev = qd.clone().symmetric_eigenvalues();
        assert!(ev.max() / ev.min() < 1e4);
        let p = from_dense_precision(qd, DVector::zeros(n)).unwrap();
        let b = s.standard_normal_vector(n).unwrap();
        let out = cg_solve(p.target.precision(), &b, &vec![0.0; n], 0.0, n).unwrap();
        let exact = p.covariance.clone() * DVector::from_column_slice(&b);
        let e = relative_error(&out.solution, exact.as_slice());
        assert!(e < 1e-8, "n = {n}: relative error {e}");
    }
}

#[test]
fn cg_is_bitwise_deterministic() {
    let mut s = RngStream::new(104);
    let p = spectral_problem(30, 1e4, 1.0, &mut s).unwrap();
    let b = s.standard_normal_vector(30).unwrap();
    let a = cg_solve(p.target.precision(), &b, &vec![0.1; 30], 1e-6, 300).unwrap();
    let c = cg_solve(p.target.precision(), &b, &vec![0.1; 30], 1e-6, 300).unwrap();
    assert_eq!(a, c);
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn ks_statistic(mut x: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, v)| {
            let c = cdf(*v);
            (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn rjpo_marginals_pass_ks_on_small_ar1() {
    let p = ar1_problem(4, 1.0, 0.8, &mut RngStream::new(105)).unwrap();
    let n = 100_000;
    let cfg = ChainConfig::new(n).with_burn_in(0).with_trace().without_covariance().with_initial(p.mean_vec());
    let chain = run_chain(
        &p.target,
        KernelChoice::Rjpo {
            epsilon: 1e-3,
            max_iters: None,
        },
        &cfg,
        &mut RngStream::new(106),
    )
    .unwrap();
    assert!(chain.mean_acceptance() > 0.5);
    for i in 0..4 {
        let (m, sd) = (p.mean[i], p.covariance[(i, i)].sqrt());
        let d = ks_statistic(chain.coordinate_trace(i).unwrap(), |v| normal_cdf((v - m) / sd));
        let crit = 1.628 / (n as f64).sqrt();
        assert!(d < crit, "coordinate {i}: KS {d} >= {crit}");
    }
}

/// Two-sample energy distance with a permutation p-value.
fn energy_test(x: &[Vec<f64>], y: &[Vec<f64>], perms: usize, s: &mut RngStream) -> f64 {
    let all: Vec<&Vec<f64>> = x.iter().chain(y).collect();
    let total = all.len();
    let mut dist = vec![0.0; total * total];
    for i in 0..total {
        for j in 0..total {
            dist[i * total + j] = all[i].iter().zip(all[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        }
    }
    let stat = |idx: &[usize]| {
        let (a, b) = idx.split_at(x.len());
        let mean = |p: &[usize], q: &[usize]| {
            let mut t = 0.0;
            for &i in p {
                for &j in q {
                    t += dist[i * total + j];
                }
            }
            t / (p.len() * q.len()) as f64
        };
        2.0 * mean(a, b) - mean(a, a) - mean(b, b)
    };
    let mut idx: Vec<usize> = (0..total).collect();
    let observed = stat(&idx);
    let mut exceed = 0;
    for _ in 0..perms {
        for i in (1..total).rev() {
            let j = (s.uniform() * (i + 1) as f64) as usize;
            idx.swap(i, j.min(i));
        }
        if stat(&idx) >= observed {
            exceed += 1;
        }
    }
    (exceed + 1) as f64 / (perms + 1) as f64
}

#[test]
fn epo_matches_cholesky_sampler_by_energy_test() {
    let p = ar1_problem(4, 1.0, 0.8, &mut RngStream::new(107)).unwrap();
    let mut s = RngStream::new(108);
    let x: Vec<Vec<f64>> = (0..300).map(|_| epo_step(&p.target, &mut s).unwrap().next_sample).collect();
    let l = p.covariance.clone().cholesky().unwrap().l();
    let y: Vec<Vec<f64>> = (0..300)
        .map(|_| {
            let w = DVector::from_vec(s.standard_normal_vector(4).unwrap());
            (&p.mean + &l * w).as_slice().to_vec()
        })
        .collect();
    let pval = energy_test(&x, &y, 199, &mut s);
    assert!(pval > 0.01, "p = {pval}");

    // Positive control: a shifted sample must be rejected.
    let shifted: Vec<Vec<f64>> = y.iter().map(|v| v.iter().map(|a| a + 0.5).collect()).collect();
    assert!(energy_test(&x, &shifted, 199, &mut s) <= 0.01);
}

/// `Delta S / (-2)` from the densities vs the residual form, with an inexact `f`.
#[test]
fn density_ratio_matches_residual_form() {
    let mut s = RngStream::new(109);
    for trial in 0..100 {
        let n = 1 + trial % 8;
        let q = random_spd(n, &mut s);
        let mean = DVector::from_vec(s.standard_normal_vector(n).unwrap());
        let a = random_matrix(n, n, &mut s) + DMatrix::identity(n, n) * 2.0;
        let b = random_spd(n, &mut s);
        let shift = DVector::from_vec(s.standard_normal_vector(n).unwrap());
        let spec = GeneralMoveSpec::new(a, b, shift).unwrap();
        let prev = DVector::from_vec(s.standard_normal_vector(n).unwrap());
        let z = spec.draw_auxiliary(&prev, &mut s).unwrap();
        let exact = spec.exact_move(&q, &mean, &z).unwrap();
        let f = &exact + DVector::from_vec(s.standard_normal_vector(n).unwrap()) * 0.3;
        let x = &f - &prev;
        let r = spec.residual(&q, &mean, &z, &f);
        let from_density = -0.5 * spec.delta_s(&q, &mean, &prev, &x, &z);
        let from_residual = -(&prev - &x).dot(&r);
        let rel = (from_density - from_residual).abs() / from_residual.abs().max(1e-300);
        assert!(rel < 1e-8, "trial {trial}: {from_density} vs {from_residual}");
        let la = log_acceptance(r.as_slice(), prev.as_slice(), x.as_slice()).unwrap();
        assert!((la - from_density.min(0.0)).abs() <= 1e-8 * from_density.abs().max(1.0));
    }
}

fn lag1_cross_covariance(trace: &[Vec<f64>]) -> DMatrix<f64> {
    let n = trace[0].len();
    let m = trace.len();
    let mut mean = DVector::zeros(n);
    for t in trace {
        mean += DVector::from_column_slice(t);
    }
    mean /= m as f64;
    let mut c = DMatrix::zeros(n, n);
    for w in trace.windows(2) {
        let a = DVector::from_column_slice(&w[0]) - &mean;
        let b = DVector::from_column_slice(&w[1]) - &mean;
        c += a * b.transpose();
    }
    c / (m as f64)
}

/// Frobenius norm of the standardized lag-1 cross-covariance against the 4-sigma
/// bound of its chi-square law under independence.
fn lag1_statistic(trace: &[Vec<f64>], cov: &DMatrix<f64>) -> (f64, f64) {
    let n = cov.nrows();
    let c = lag1_cross_covariance(trace);
    let z = DMatrix::from_fn(n, n, |i, j| c[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt());
    let k = (n * n) as f64;
    let m = trace.len() as f64;
    (z.norm_squared() * m, k + 4.0 * (2.0 * k).sqrt())
}

#[test]
fn uncorrelated_moves_iff_condition_holds() {
    let p = ar1_problem(3, 1.0, 0.8, &mut RngStream::new(110)).unwrap();
    let q = p.precision().clone();
    let run = |spec: &GeneralMoveSpec, seed: u64| {
        let mut s = RngStream::new(seed);
        let mut x = p.mean_vec();
        let mut trace = Vec::with_capacity(10_000);
        for _ in 0..10_000 {
            x = general_rj_step_oracle(&p.target, spec, &x, &mut s).unwrap().next_sample;
            trace.push(x.clone());
        }
        trace
    };

    let precision_move = GeneralMoveSpec::precision_move(&q, &p.mean).unwrap();
    let (stat, bound) = lag1_statistic(&run(&precision_move, 111), &p.covariance);
    assert!(stat < bound, "{stat} >= {bound}");

    let chol = GeneralMoveSpec::cholesky_move(&q, DVector::from_element(3, 0.7)).unwrap();
    let (stat, bound) = lag1_statistic(&run(&chol, 112), &p.covariance);
    assert!(stat < bound, "{stat} >= {bound}");

    // A^t B^-1 A = Q / 4: successive samples are anti-correlated.
    let mismatched = GeneralMoveSpec::new(q.clone(), &q * 4.0, DVector::zeros(3)).unwrap();
    let (stat, bound) = lag1_statistic(&run(&mismatched, 113), &p.covariance);
    assert!(stat > bound, "{stat} <= {bound}");
}

#[test]
fn exact_rjpo_equals_epo_step() {
    let p = ar1_problem(6, 1.0, 0.8, &mut RngStream::new(114)).unwrap();
    let prev = vec![1.0; 6];
    let a = rjpo_step(&p.target, &prev, &mut RngStream::new(115), 0.0, 60).unwrap();
    let b = epo_step(&p.target, &mut RngStream::new(115)).unwrap();
    assert!(a.accepted);
    assert!(relative_error(&a.next_sample, &b.next_sample) < 1e-10);
}

#[test]
fn tpo_bias_exceeds_rjpo_error() {
    let p = ar1_problem(20, 1.0, 0.8, &mut RngStream::new(116)).unwrap();
    let n = 20_000;
    let cfg = ChainConfig::new(n).with_initial(p.mean_vec());
    let err = |k: KernelChoice, seed: u64| {
        let c = run_chain(&p.target, k, &cfg, &mut RngStream::new(seed)).unwrap();
        rjpo_core::diag::rmse(&c, &p.mean, &p.covariance).unwrap().1
    };
    let tpo = err(KernelChoice::Tpo { epsilon: 1e-2, max_iters: None }, 117);
    let rjpo = err(KernelChoice::Rjpo { epsilon: 1e-2, max_iters: None }, 118);
    assert!(tpo >= 2.0 * rjpo, "T-PO {tpo} vs RJPO {rjpo}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gram_is_symmetric(seed in 0u64..10_000, rows in 1usize..12, cols in 1usize..12) {
        let mut s = RngStream::new(seed);
        let q = FactoredPrecision::from_operator(dense_operator(random_matrix(rows, cols, &mut s)).unwrap());
        let u = s.standard_normal_vector(cols).unwrap();
        let v = s.standard_normal_vector(cols).unwrap();
        let a = dot(&q.apply(&u).unwrap(), &v);
        let b = dot(&u, &q.apply(&v).unwrap());
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        prop_assert!(dot(&q.apply(&u).unwrap(), &u) >= -1e-10);
    }

    #[test]
    fn operators_are_linear(seed in 0u64..10_000, a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let mut s = RngStream::new(seed);
        let op = dense_operator(random_matrix(6, 4, &mut s)).unwrap();
        let u = s.standard_normal_vector(4).unwrap();
        let v = s.standard_normal_vector(4).unwrap();
        let comb: Vec<f64> = u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect();
        let lhs = op.apply(&comb).unwrap();
        let (fu, fv) = (op.apply(&u).unwrap(), op.apply(&v).unwrap());
        let rhs: Vec<f64> = fu.iter().zip(&fv).map(|(x, y)| a * x + b * y).collect();
        prop_assert!(relative_error(&lhs, &rhs) < 1e-12 || lhs.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn cg_meets_threshold_or_cap(seed in 0u64..10_000, n in 2usize..30, log_eps in -10.0f64..-0.5) {
        let mut s = RngStream::new(seed);
        let p = spectral_problem(n, 100.0, 1.0, &mut s).unwrap();
        let b = s.standard_normal_vector(n).unwrap();
        let eps = 10f64.powf(log_eps);
        let out = cg_solve(p.target.precision(), &b, &vec![0.0; n], eps, 10 * n).unwrap();
        // The stop uses the recursive residual; the recomputed one may drift slightly.
        prop_assert!(out.relative_residual <= eps * 1.01 + 1e-13 || out.iterations == 10 * n);
    }

    #[test]
    fn rejection_returns_previous_bitwise(seed in 0u64..10_000) {
        let p = ar1_problem(8, 0.01, 0.8, &mut RngStream::new(seed)).unwrap();
        let mut s = RngStream::new(seed + 1);
        let prev: Vec<f64> = p.mean.iter().map(|v| v + 0.05).collect();
        let out = rjpo_step(&p.target, &prev, &mut s, 3e-2, 80).unwrap();
        prop_assert!((0.0..=1.0).contains(&out.acceptance_probability));
        if !out.accepted {
            prop_assert_eq!(out.next_sample, prev);
        } else {
            prop_assert_eq!(out.next_sample, out.proposal);
        }
    }

    #[test]
    fn exact_solve_accepts_with_probability_one(seed in 0u64..10_000, n in 1usize..10) {
        let mut s = RngStream::new(seed);
        let q = random_spd(n, &mut s);
        let mean = DVector::from_vec(s.standard_normal_vector(n).unwrap());
        let p = from_dense_precision(q, mean).unwrap();
        let prev = s.standard_normal_vector(n).unwrap();
        let out = rjpo_step(&p.target, &prev, &mut s, 0.0, 10 * n).unwrap();
        prop_assert!((out.acceptance_probability - 1.0).abs() < 1e-10);
    }
}
