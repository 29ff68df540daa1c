use nalgebra::{DMatrix, DVector};

use rjpo::superres::{
    run_gibbs, sample_x, synthesize, Psf, SuperResConfig, SuperResModel, XSampler,
};
use rjpo_core::linop::LinearOperator;
use rjpo_core::rng::RngStream;

fn model(dims: (usize, usize), frames: usize, factor: usize, psf: Psf, snr_db: f64) -> SuperResModel {
    SuperResModel::new(SuperResConfig {
        hi_res_dims: dims,
        frames,
        factor,
        psf,
        snr_db,
    })
    .unwrap()
}

fn dense_of(op: &dyn LinearOperator) -> DMatrix<f64> {
    let n = op.in_dim();
    let mut m = DMatrix::zeros(op.out_dim(), n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        m.set_column(j, &DVector::from_vec(op.apply(&e).unwrap()));
        e[j] = 0.0;
    }
    m
}

#[test]
fn stacked_precision_matches_dense_assembly() {
    let m = model((8, 8), 3, 2, Psf::Laplace { fwhm: 0.5 }, 20.0);
    let (gy, gx) = (2.5, 0.3);
    let h = dense_of(m.forward().as_ref());
    let d = dense_of(m.laplacian().as_ref());
    let expected = h.tr_mul(&h) * gy + d.tr_mul(&d) * gx;
    let q = m.precision(gy, gx).unwrap().to_dense();
    let err = (&q - &expected).norm() / expected.norm();
    assert!(err < 1e-10, "{err}");
}

#[test]
fn synthesized_snr_matches_request() {
    let m = model((64, 64), 2, 2, Psf::Laplace { fwhm: 4.0 }, 20.0);
    let truth = rjpo::image::phantom(64, 64);
    let obs = synthesize(&m, &truth.data, &mut RngStream::new(11)).unwrap();
    assert!((obs.empirical_snr_db() - 20.0).abs() < 0.5, "{}", obs.empirical_snr_db());
}

#[test]
fn identity_model_observes_image_plus_noise() {
    let m = model((8, 8), 2, 1, Psf::Delta, 10.0);
    let obs = synthesize(&m, &[5.0; 64], &mut RngStream::new(12)).unwrap();
    assert_eq!(obs.y.len(), 128);
    assert!(obs.clean.iter().all(|v| (v - 5.0).abs() < 1e-12));
    // Variance = 25 / 10.
    assert!((obs.noise_variance - 2.5).abs() < 1e-12);
}

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
            let j = ((s.uniform() * (i + 1) as f64) as usize).min(i);
            idx.swap(i, j);
        }
        if stat(&idx) >= observed {
            exceed += 1;
        }
    }
    (exceed + 1) as f64 / (perms + 1) as f64
}

#[test]
fn exact_rjpo_conditional_matches_cholesky_oracle() {
    let m = model((8, 8), 2, 2, Psf::Delta, 20.0);
    let truth = rjpo::image::phantom(8, 8);
    let mut s = RngStream::new(13);
    let obs = synthesize(&m, &truth.data, &mut s).unwrap();
    let hty = m.forward().apply_transpose(&obs.y).unwrap();
    let (gy, gx) = (0.05, 0.02);

    let q = m.precision(gy, gx).unwrap().to_dense();
    let chol = q.clone().cholesky().unwrap();
    let mu = chol.solve(&(DVector::from_vec(hty.clone()) * gy));
    let oracle: Vec<Vec<f64>> = (0..250)
        .map(|_| {
            let w = DVector::from_vec(s.standard_normal_vector(64).unwrap());
            let z = chol.l().transpose().solve_upper_triangular(&w).unwrap();
            (&mu + z).as_slice().to_vec()
        })
        .collect();

    let mut sampler = XSampler::Rjpo { epsilon: 0.0 };
    let mut x = mu.as_slice().to_vec();
    let mut draws = Vec::new();
    for _ in 0..250 {
        let out = sample_x(&m, &x, &hty, (gy, gx), &mut sampler, &mut s).unwrap();
        assert!(out.acceptance_probability > 1.0 - 1e-8);
        x = out.next_sample;
        draws.push(x.clone());
    }
    let p = energy_test(&draws, &oracle, 199, &mut s);
    assert!(p > 0.01, "p = {p}");

    let sd = (1.0 / q[(0, 0)]).sqrt();
    let shifted: Vec<Vec<f64>> = oracle.iter().map(|v| v.iter().map(|a| a + sd).collect()).collect();
    assert!(energy_test(&draws, &shifted, 199, &mut s) <= 0.01);
}

#[test]
fn gibbs_gammas_stay_positive() {
    let m = model((16, 16), 2, 2, Psf::Laplace { fwhm: 1.0 }, 20.0);
    let truth = rjpo::image::phantom(16, 16);
    let mut s = RngStream::new(14);
    let obs = synthesize(&m, &truth.data, &mut s).unwrap();
    let ctl = rjpo_core::adapt::AdaptController::target_rate(1e-4, 1.0, 0.5, 0.99).unwrap();
    for sampler in [XSampler::Epo, XSampler::Arjpo { controller: ctl }, XSampler::Tpo { epsilon: 1e-3 }] {
        let summary = run_gibbs(&m, &obs.y, 60, 10, sampler, &mut s, None).unwrap();
        assert_eq!(summary.records.len(), 60);
        assert!(summary
            .records
            .iter()
            .all(|r| r.gamma_y > 0.0 && r.gamma_x > 0.0 && r.gamma_y.is_finite() && r.gamma_x.is_finite()));
        assert_eq!(summary.pixel_mean.len(), 256);
        assert!(summary.pixel_sd.iter().all(|v| *v > 0.0));
    }
}

#[test]
fn gibbs_is_deterministic() {
    let m = model((16, 16), 2, 2, Psf::Laplace { fwhm: 1.0 }, 20.0);
    let truth = rjpo::image::phantom(16, 16);
    let obs = synthesize(&m, &truth.data, &mut RngStream::new(15)).unwrap();
    let run = || {
        let ctl = rjpo_core::adapt::AdaptController::target_rate(1e-4, 1.0, 0.5, 0.99).unwrap();
        run_gibbs(&m, &obs.y, 20, 5, XSampler::Arjpo { controller: ctl }, &mut RngStream::new(16), None).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn bad_configurations_are_rejected() {
    let cfg = |dims, frames, factor, psf| SuperResModel::new(SuperResConfig {
        hi_res_dims: dims,
        frames,
        factor,
        psf,
        snr_db: 20.0,
    });
    assert!(cfg((8, 8), 2, 3, Psf::Delta).is_err());
    assert!(cfg((8, 8), 0, 2, Psf::Delta).is_err());
    assert!(cfg((8, 8), 1, 2, Psf::Laplace { fwhm: 4.0 }).is_err());
    assert!(cfg((8, 8), 1, 2, Psf::Laplace { fwhm: -1.0 }).is_err());
}
