//! Unsupervised multi-frame super-resolution.
//!
//! Model: `y = H x + n` with `H` stacking `P_f B` over frames (`B` a circular
//! blur, `P_f` a decimation on frame `f`'s sub-lattice), white noise of
//! precision `gamma_y` and a Laplacian smoothness prior of precision
//! `gamma_x`. Both precisions carry Jeffreys priors. The Gibbs sampler draws
//! `gamma_y`, `gamma_x` and then `x` from its Gaussian conditional.

use std::sync::Arc;

use rjpo_core::adapt::AdaptController;
use rjpo_core::cg::default_max_iters;
use rjpo_core::linop::{
    decimation_operator, stacked_factor, DecimationOperator, FactoredPrecision, GaussianTarget,
    LinearOperator, SharedOperator,
};
use rjpo_core::rng::RngStream;
use rjpo_core::sampler::{epo_step, rjpo_step, tpo_step, KernelOutcome};
use rjpo_core::vecops::{dot, norm2};
use rjpo_core::{Error, Result};

use crate::circulant::{circulant_with_center, CirculantOperator};

/// Discrete Laplacian stencil used for the prior, centred at `(1, 1)`.
pub const LAPLACIAN_STENCIL: [f64; 9] = [0.0, -1.0, 0.0, -1.0, 4.0, -1.0, 0.0, -1.0, 0.0];

/// Mass of the Laplace PSF allowed outside its truncated support.
pub const PSF_TAIL_MASS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psf {
    Delta,
    Laplace { fwhm: f64 },
}

/// Normalized kernel `exp(-(|i| + |j|) 2 ln 2 / fwhm)` on `[-R, R]^2`, with
/// the smallest `R` leaving less than [`PSF_TAIL_MASS`] of the 2-D mass out.
/// Returns `(kernel, side)` with the centre at `(R, R)`.
pub fn laplace_psf(fwhm: f64) -> Result<(Vec<f64>, usize)> {
    if !(fwhm > 0.0 && fwhm.is_finite()) {
        return Err(Error::config(format!("PSF FWHM must be positive, got {fwhm}")));
    }
    let q = (-2.0 * std::f64::consts::LN_2 / fwhm).exp();
    // 1-D sums: infinite sum (1 + q) / (1 - q); truncated 1 + 2 q (1 - q^R) / (1 - q).
    let total = (1.0 + q) / (1.0 - q);
    let mut radius = 0usize;
    loop {
        let kept = 1.0 + 2.0 * q * (1.0 - q.powi(radius as i32)) / (1.0 - q);
        if 1.0 - (kept / total).powi(2) < PSF_TAIL_MASS {
            break;
        }
        radius += 1;
    }
    let side = 2 * radius + 1;
    let mut k = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            let d = i.abs_diff(radius) + j.abs_diff(radius);
            k.push(q.powi(d as i32));
        }
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    Ok((k, side))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperResConfig {
    pub hi_res_dims: (usize, usize),
    pub frames: usize,
    pub factor: usize,
    pub psf: Psf,
    pub snr_db: f64,
}

impl Default for SuperResConfig {
    fn default() -> Self {
        SuperResConfig {
            hi_res_dims: (64, 64),
            frames: 2,
            factor: 2,
            psf: Psf::Laplace { fwhm: 4.0 },
            snr_db: 20.0,
        }
    }
}

/// `H = [P_1 B; P_2 B; ...]`.
pub struct ForwardModel {
    blur: CirculantOperator,
    frames: Vec<DecimationOperator>,
    frame_len: usize,
}

impl ForwardModel {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn frame_offsets(&self) -> Vec<(usize, usize)> {
        self.frames.iter().map(|p| p.offset()).collect()
    }

    pub fn blur(&self) -> &CirculantOperator {
        &self.blur
    }

    fn scatter(&self, y: &[f64], hi: &mut [f64]) {
        hi.fill(0.0);
        for (f, p) in self.frames.iter().enumerate() {
            let seg = &y[f * self.frame_len..(f + 1) * self.frame_len];
            for (v, idx) in seg.iter().zip(p.selected_indices()) {
                hi[idx] += v;
            }
        }
    }
}

impl LinearOperator for ForwardModel {
    fn in_dim(&self) -> usize {
        self.blur.in_dim()
    }

    fn out_dim(&self) -> usize {
        self.frame_len * self.frames.len()
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let mut b = vec![0.0; self.in_dim()];
        self.blur.apply_into(x, &mut b);
        for (f, p) in self.frames.iter().enumerate() {
            p.apply_into(&b, &mut out[f * self.frame_len..(f + 1) * self.frame_len]);
        }
    }

    fn apply_transpose_into(&self, y: &[f64], out: &mut [f64]) {
        let mut hi = vec![0.0; self.in_dim()];
        self.scatter(y, &mut hi);
        self.blur.apply_transpose_into(&hi, out);
    }

    fn gram_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.in_dim();
        let mut b = vec![0.0; n];
        self.blur.apply_into(x, &mut b);
        let mut masked = vec![0.0; n];
        for p in &self.frames {
            for idx in p.selected_indices() {
                masked[idx] += b[idx];
            }
        }
        self.blur.apply_transpose_into(&masked, out);
    }
}

pub struct SuperResModel {
    config: SuperResConfig,
    forward: Arc<ForwardModel>,
    laplacian: Arc<CirculantOperator>,
    psf_side: usize,
}

impl SuperResModel {
    pub fn new(config: SuperResConfig) -> Result<Self> {
        let (rows, cols) = config.hi_res_dims;
        if rows == 0 || cols == 0 {
            return Err(Error::config("high-resolution image must be non-empty"));
        }
        if config.frames == 0 {
            return Err(Error::config("at least one frame is needed"));
        }
        if config.factor == 0 || rows % config.factor != 0 || cols % config.factor != 0 {
            return Err(Error::config(format!(
                "decimation factor {} must divide {rows}x{cols}",
                config.factor
            )));
        }
        if config.snr_db.is_nan() {
            return Err(Error::config("SNR must be a number (use inf to disable noise)"));
        }
        let (kernel, side) = match config.psf {
            Psf::Delta => (vec![1.0], 1),
            Psf::Laplace { fwhm } => laplace_psf(fwhm)?,
        };
        let c = side / 2;
        let blur = circulant_with_center(&kernel, (side, side), (c, c), (rows, cols))?;
        let f = config.factor;
        let frames = (0..config.frames)
            .map(|k| decimation_operator((rows, cols), f, (k % f, (k / f) % f)))
            .collect::<Result<Vec<_>>>()?;
        let frame_len = rows * cols / (f * f);
        let laplacian = circulant_with_center(&LAPLACIAN_STENCIL, (3, 3), (1, 1), (rows, cols))?;
        Ok(SuperResModel {
            config,
            forward: Arc::new(ForwardModel {
                blur,
                frames,
                frame_len,
            }),
            laplacian: Arc::new(laplacian),
            psf_side: side,
        })
    }

    pub fn config(&self) -> &SuperResConfig {
        &self.config
    }

    /// Number of unknowns `N`.
    pub fn n(&self) -> usize {
        self.config.hi_res_dims.0 * self.config.hi_res_dims.1
    }

    /// Number of observations `M`.
    pub fn m(&self) -> usize {
        self.forward.out_dim()
    }

    pub fn psf_side(&self) -> usize {
        self.psf_side
    }

    pub fn forward(&self) -> &Arc<ForwardModel> {
        &self.forward
    }

    pub fn laplacian(&self) -> &Arc<CirculantOperator> {
        &self.laplacian
    }

    /// `Q = gamma_y H^t H + gamma_x D^t D` through its stacked factor.
    pub fn precision(&self, gamma_y: f64, gamma_x: f64) -> Result<FactoredPrecision> {
        let h: SharedOperator = self.forward.clone();
        let d: SharedOperator = self.laplacian.clone();
        Ok(FactoredPrecision::from_operator(stacked_factor(vec![(gamma_y, h), (gamma_x, d)])?))
    }

    /// Conditional of `x`: precision as above and potential `gamma_y H^t y`.
    pub fn conditional(&self, gamma_y: f64, gamma_x: f64, hty: &[f64]) -> Result<GaussianTarget> {
        let potential = hty.iter().map(|v| gamma_y * v).collect();
        GaussianTarget::new(self.precision(gamma_y, gamma_x)?, potential)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub y: Vec<f64>,
    pub clean: Vec<f64>,
    pub noise_variance: f64,
}

impl Observations {
    /// `10 log10(||H x||^2 / ||y - H x||^2)`.
    pub fn empirical_snr_db(&self) -> f64 {
        let noise: f64 = self.y.iter().zip(&self.clean).map(|(a, b)| (a - b) * (a - b)).sum();
        10.0 * (dot(&self.clean, &self.clean) / noise).log10()
    }
}

/// `y = H x + n` with white noise of variance `||H x||^2 / (M 10^(snr/10))`.
pub fn synthesize(model: &SuperResModel, truth: &[f64], stream: &mut RngStream) -> Result<Observations> {
    let clean = model.forward.apply(truth)?;
    let m = clean.len();
    let snr = model.config.snr_db;
    if snr == f64::INFINITY {
        return Ok(Observations {
            y: clean.clone(),
            clean,
            noise_variance: 0.0,
        });
    }
    let variance = dot(&clean, &clean) / (m as f64 * 10f64.powf(snr / 10.0));
    let sd = variance.sqrt();
    let noise = stream.standard_normal_vector(m)?;
    let y = clean.iter().zip(&noise).map(|(c, n)| c + sd * n).collect();
    Ok(Observations {
        y,
        clean,
        noise_variance: variance,
    })
}

/// `gamma_y ~ G(1 + M/2, 2 / ||y - H x||^2)`.
pub fn sample_gamma_y(model: &SuperResModel, x: &[f64], y: &[f64], stream: &mut RngStream) -> Result<f64> {
    let hx = model.forward.apply(x)?;
    if hx.len() != y.len() {
        return Err(Error::Shape {
            expected: hx.len(),
            found: y.len(),
        });
    }
    let rss: f64 = y.iter().zip(&hx).map(|(a, b)| (a - b) * (a - b)).sum();
    if !(rss > 0.0 && rss.is_finite()) {
        return Err(Error::Degenerate(format!("data residual norm^2 = {rss}")));
    }
    stream.gamma_draw(1.0 + y.len() as f64 / 2.0, 2.0 / rss)
}

/// `gamma_x ~ G(1 + (N-1)/2, 2 / ||D x||^2)`.
pub fn sample_gamma_x(model: &SuperResModel, x: &[f64], stream: &mut RngStream) -> Result<f64> {
    let dx = model.laplacian.apply(x)?;
    let energy = dot(&dx, &dx);
    if !(energy > 1e-300 * x.len() as f64 * (1.0 + norm2(x).powi(2))) || !energy.is_finite() {
        return Err(Error::Degenerate(
            "Laplacian of x vanishes (constant image), gamma_x conditional is improper".into(),
        ));
    }
    stream.gamma_draw(1.0 + (x.len() as f64 - 1.0) / 2.0, 2.0 / energy)
}

/// Kernel used for the Gaussian step.
#[derive(Debug, Clone)]
pub enum XSampler {
    /// Exact PO, CG run to machine accuracy.
    Epo,
    Tpo { epsilon: f64 },
    /// RJPO whose threshold is tuned by the controller; a fixed-threshold
    /// RJPO is obtained with `Rjpo`.
    Arjpo { controller: AdaptController },
    Rjpo { epsilon: f64 },
}

impl XSampler {
    pub fn name(&self) -> &'static str {
        match self {
            XSampler::Epo => "epo",
            XSampler::Tpo { .. } => "tpo",
            XSampler::Arjpo { .. } => "arjpo",
            XSampler::Rjpo { .. } => "rjpo",
        }
    }

    fn epsilon(&self) -> f64 {
        match self {
            XSampler::Epo => 0.0,
            XSampler::Tpo { epsilon } | XSampler::Rjpo { epsilon } => *epsilon,
            XSampler::Arjpo { controller } => controller.epsilon(),
        }
    }
}

/// Draws `x` from `N(mu, Q^-1)` with `Q = gamma_y H^t H + gamma_x D^t D` and
/// `Q mu = gamma_y H^t y`.
pub fn sample_x(
    model: &SuperResModel,
    x: &[f64],
    hty: &[f64],
    gammas: (f64, f64),
    sampler: &mut XSampler,
    stream: &mut RngStream,
) -> Result<KernelOutcome> {
    let (gy, gx) = gammas;
    if !(gy > 0.0 && gx > 0.0 && gy.is_finite() && gx.is_finite()) {
        return Err(Error::argument(format!("gammas must be positive, got ({gy}, {gx})")));
    }
    let target = model.conditional(gy, gx, hty)?;
    let cap = default_max_iters(model.n());
    match sampler {
        XSampler::Epo => epo_step(&target, stream),
        XSampler::Tpo { epsilon } => tpo_step(&target, x, stream, *epsilon, cap),
        XSampler::Rjpo { epsilon } => rjpo_step(&target, x, stream, *epsilon, cap),
        XSampler::Arjpo { controller } => {
            let out = rjpo_step(&target, x, stream, controller.epsilon(), cap)?;
            controller.observe(out.cg_iterations, out.acceptance_probability);
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GibbsRecord {
    pub iter: usize,
    pub gamma_y: f64,
    pub gamma_x: f64,
    pub alpha: f64,
    pub cg_iters: usize,
    pub epsilon: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GibbsSummary {
    pub sampler: &'static str,
    pub iterations: usize,
    pub burn_in: usize,
    pub gamma_y_mean: f64,
    pub gamma_y_sd: f64,
    pub gamma_x_mean: f64,
    pub gamma_x_sd: f64,
    pub pixel_mean: Vec<f64>,
    pub pixel_sd: Vec<f64>,
    pub mean_alpha: f64,
    pub mean_cg_iters: f64,
    pub peak_cg_iters: usize,
    pub records: Vec<GibbsRecord>,
}

fn mean_sd(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let m = v.clone().sum::<f64>() / n;
    let var = v.map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

/// Nearest-neighbour upsampling of the first frame, the default start.
pub fn initial_guess(model: &SuperResModel, y: &[f64]) -> Vec<f64> {
    let (rows, cols) = model.config.hi_res_dims;
    let f = model.config.factor;
    let lc = cols / f;
    (0..rows * cols)
        .map(|k| {
            let (i, j) = (k / cols, k % cols);
            y[(i / f) * lc + j / f]
        })
        .collect()
}

/// Runs `iterations` Gibbs sweeps; moments use sweeps `burn_in + 1 ..= iterations`.
pub fn run_gibbs(
    model: &SuperResModel,
    y: &[f64],
    iterations: usize,
    burn_in: usize,
    mut sampler: XSampler,
    stream: &mut RngStream,
    initial: Option<Vec<f64>>,
) -> Result<GibbsSummary> {
    if burn_in >= iterations {
        return Err(Error::argument(format!(
            "burn-in {burn_in} leaves no samples in {iterations} iterations"
        )));
    }
    if y.len() != model.m() {
        return Err(Error::Shape {
            expected: model.m(),
            found: y.len(),
        });
    }
    let n = model.n();
    let mut x = initial.unwrap_or_else(|| initial_guess(model, y));
    if x.len() != n {
        return Err(Error::Shape {
            expected: n,
            found: x.len(),
        });
    }
    let hty = model.forward.apply_transpose(y)?;
    let mut records = Vec::with_capacity(iterations);
    let mut mean = vec![0.0; n];
    let mut m2 = vec![0.0; n];
    let mut kept = 0usize;

    for it in 1..=iterations {
        let step = |e: Error| e.at_step(it);
        let gy = sample_gamma_y(model, &x, y, stream).map_err(step)?;
        let gx = sample_gamma_x(model, &x, stream).map_err(step)?;
        let epsilon = sampler.epsilon();
        let out = sample_x(model, &x, &hty, (gy, gx), &mut sampler, stream).map_err(step)?;
        x = out.next_sample;
        records.push(GibbsRecord {
            iter: it,
            gamma_y: gy,
            gamma_x: gx,
            alpha: out.acceptance_probability,
            cg_iters: out.cg_iterations,
            epsilon,
            accepted: out.accepted,
        });
        if it > burn_in {
            kept += 1;
            let k = kept as f64;
            for i in 0..n {
                let d = x[i] - mean[i];
                mean[i] += d / k;
                m2[i] += d * (x[i] - mean[i]);
            }
        }
    }

    let post = &records[burn_in..];
    let (gamma_y_mean, gamma_y_sd) = mean_sd(post.iter().map(|r| r.gamma_y));
    let (gamma_x_mean, gamma_x_sd) = mean_sd(post.iter().map(|r| r.gamma_x));
    let denom = (kept as f64 - 1.0).max(1.0);
    Ok(GibbsSummary {
        sampler: sampler.name(),
        iterations,
        burn_in,
        gamma_y_mean,
        gamma_y_sd,
        gamma_x_mean,
        gamma_x_sd,
        pixel_sd: m2.iter().map(|v| (v / denom).sqrt()).collect(),
        pixel_mean: mean,
        mean_alpha: records.iter().map(|r| r.alpha).sum::<f64>() / iterations as f64,
        mean_cg_iters: records.iter().map(|r| r.cg_iters as f64).sum::<f64>() / iterations as f64,
        peak_cg_iters: records.iter().map(|r| r.cg_iters).max().unwrap_or(0),
        records,
    })
}
