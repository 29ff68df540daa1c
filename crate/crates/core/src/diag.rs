//! Chain diagnostics: moment errors, effective sample size, PSRF and
//! acceptance curves.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linop::GaussianTarget;
use crate::rng::RngStream;
use crate::sampler::{run_chain, ChainConfig, ChainState, KernelChoice};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsReport {
    pub rmse_mean: f64,
    pub rmse_cov: f64,
    pub essr: f64,
    pub cces: f64,
    pub mean_acceptance: f64,
    pub mean_cg_iters: f64,
    pub psrf: Option<f64>,
}

impl DiagnosticsReport {
    /// `cces` is derived as `mean_cg_iters / essr`.
    pub fn new(
        rmse: (f64, f64),
        essr: f64,
        mean_acceptance: f64,
        mean_cg_iters: f64,
        psrf: Option<f64>,
    ) -> Self {
        DiagnosticsReport {
            rmse_mean: rmse.0,
            rmse_cov: rmse.1,
            essr,
            cces: mean_cg_iters / essr,
            mean_acceptance,
            mean_cg_iters,
            psrf,
        }
    }
}

/// Relative errors `||mu - mu_hat|| / ||mu||` and `||R - R_hat||_F / ||R||_F`.
pub fn rmse_from_moments(
    mean_hat: &[f64],
    cov_hat: &DMatrix<f64>,
    true_mean: &DVector<f64>,
    true_cov: &DMatrix<f64>,
) -> Result<(f64, f64)> {
    let n = true_mean.len();
    if mean_hat.len() != n || cov_hat.shape() != (n, n) || true_cov.shape() != (n, n) {
        return Err(Error::Shape {
            expected: n,
            found: mean_hat.len(),
        });
    }
    let mn = true_mean.norm();
    let cn = true_cov.norm();
    if mn == 0.0 || cn == 0.0 {
        return Err(Error::argument("RMSE reference mean and covariance must be nonzero"));
    }
    let dm = (DVector::from_column_slice(mean_hat) - true_mean).norm() / mn;
    let dc = (cov_hat - true_cov).norm() / cn;
    Ok((dm, dc))
}

/// Moment errors of a chain that tracked its covariance.
pub fn rmse(chain: &ChainState, true_mean: &DVector<f64>, true_cov: &DMatrix<f64>) -> Result<(f64, f64)> {
    let cov = chain
        .covariance()
        .ok_or_else(|| Error::argument("chain has no covariance estimate (needs >= 2 tracked samples)"))?;
    rmse_from_moments(chain.mean(), &cov, true_mean, true_cov)
}

fn centered(series: &[f64]) -> (Vec<f64>, f64) {
    let n = series.len() as f64;
    let m = series.iter().sum::<f64>() / n;
    let c: Vec<f64> = series.iter().map(|v| v - m).collect();
    let c0 = c.iter().map(|v| v * v).sum::<f64>() / n;
    (c, c0)
}

fn lag_autocovariance(c: &[f64], k: usize) -> f64 {
    let n = c.len();
    c[..n - k].iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64
}

/// Biased (`1/n`) autocorrelations `rho_0 ..= rho_max_lag`.
pub fn autocorrelation(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if series.len() < 2 {
        return Err(Error::argument("autocorrelation needs at least two values"));
    }
    let (c, c0) = centered(series);
    if c0 == 0.0 || !c0.is_finite() {
        return Err(Error::Degenerate("constant series has no autocorrelation".into()));
    }
    let max_lag = max_lag.min(series.len() - 1);
    Ok((0..=max_lag).map(|k| lag_autocovariance(&c, k) / c0).collect())
}

/// Effective sample size `n / (1 + 2 sum rho_k)`, summing until the first
/// nonpositive autocorrelation, clamped to `[1, n]`.
pub fn ess(series: &[f64]) -> Result<f64> {
    let n = series.len();
    if n < 10 {
        return Err(Error::argument(format!("ess needs at least 10 values, got {n}")));
    }
    let (c, c0) = centered(series);
    if c0 == 0.0 || !c0.is_finite() {
        return Err(Error::Degenerate("constant series has no autocorrelation".into()));
    }
    let mut sum = 0.0;
    for k in 1..n {
        let rho = lag_autocovariance(&c, k) / c0;
        if rho <= 0.0 {
            break;
        }
        sum += rho;
    }
    let nf = n as f64;
    Ok((nf / (1.0 + 2.0 * sum)).clamp(1.0, nf))
}

/// Mean over coordinates of `ess / n` for a chain that recorded its trace.
pub fn chain_essr(chain: &ChainState) -> Result<f64> {
    if chain.trace.is_none() {
        return Err(Error::argument("chain_essr needs a recorded trace"));
    }
    let n = chain.dim();
    let mut total = 0.0;
    for i in 0..n {
        let t = chain.coordinate_trace(i).unwrap_or_default();
        total += match ess(&t) {
            Ok(e) => e / t.len() as f64,
            // A chain that never left its start has no effective samples.
            Err(Error::Degenerate(_)) => 1.0 / t.len() as f64,
            Err(e) => return Err(e),
        };
    }
    Ok(total / n as f64)
}

/// Potential scale reduction factor `sqrt(V / W)`, `V = (n-1)/n W + B/n`.
pub fn gelman_rubin<S: AsRef<[f64]>>(chains: &[S]) -> Result<f64> {
    let m = chains.len();
    if m < 2 {
        return Err(Error::argument("Gelman-Rubin needs at least two chains"));
    }
    let n = chains[0].as_ref().len();
    if n < 10 {
        return Err(Error::argument(format!("Gelman-Rubin needs chains of length >= 10, got {n}")));
    }
    if chains.iter().any(|c| c.as_ref().len() != n) {
        return Err(Error::argument("Gelman-Rubin chains must share a length"));
    }
    let nf = n as f64;
    let mut means = Vec::with_capacity(m);
    let mut within = 0.0;
    for c in chains {
        let c = c.as_ref();
        let mean = c.iter().sum::<f64>() / nf;
        within += c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
        means.push(mean);
    }
    let w = within / m as f64;
    if w == 0.0 || !w.is_finite() {
        return Err(Error::Degenerate("zero within-chain variance".into()));
    }
    let grand = means.iter().sum::<f64>() / m as f64;
    let b = nf * means.iter().map(|v| (v - grand) * (v - grand)).sum::<f64>() / (m as f64 - 1.0);
    let v = (nf - 1.0) / nf * w + b / nf;
    Ok(libm::sqrt(v / w))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub epsilon: f64,
    pub mean_alpha: f64,
    pub mean_j: f64,
}

/// One RJPO chain per threshold; chain `i` uses `stream.derive(i)`.
pub fn acceptance_curve(
    target: &GaussianTarget,
    epsilons: &[f64],
    n_max: usize,
    stream: &RngStream,
) -> Result<Vec<CurveRow>> {
    check_grid(epsilons)?;
    let config = ChainConfig::new(n_max).without_covariance();
    epsilons
        .iter()
        .enumerate()
        .map(|(i, &eps)| {
            let mut s = stream.derive(i as u64);
            let chain = run_chain(
                target,
                KernelChoice::Rjpo {
                    epsilon: eps,
                    max_iters: None,
                },
                &config,
                &mut s,
            )?;
            Ok(CurveRow {
                epsilon: eps,
                mean_alpha: chain.mean_acceptance(),
                mean_j: chain.mean_cg_iterations(),
            })
        })
        .collect()
}

/// Thresholds must be nonempty, positive, finite and strictly increasing.
pub fn check_grid(epsilons: &[f64]) -> Result<()> {
    if epsilons.is_empty() {
        return Err(Error::config("epsilon grid is empty"));
    }
    if epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
        return Err(Error::config("epsilon grid values must be positive and finite"));
    }
    if epsilons.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("epsilon grid must be strictly increasing"));
    }
    Ok(())
}

/// `count` log-spaced points from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return alloc::vec![lo];
    }
    let (a, b) = (libm::log10(lo), libm::log10(hi));
    (0..count)
        .map(|i| libm::pow(10.0, a + (b - a) * i as f64 / (count - 1) as f64))
        .collect()
}
