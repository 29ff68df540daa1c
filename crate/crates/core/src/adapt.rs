//! Robbins-Monro control of the CG truncation threshold.
//!
//! Both controllers act on `log epsilon` with step sizes `K_n = K0 / n^kappa`.
//! `TargetRate` drives the mean acceptance probability to `alpha_t`;
//! `MinCces` searches for the root of `g = J dalpha/dJ - alpha + alpha^2 / 2`,
//! where the cost per effective sample is stationary.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const DEFAULT_K0: f64 = 1.0;
pub const DEFAULT_KAPPA: f64 = 0.5;
pub const DEFAULT_WINDOW: usize = 50;
/// Lower clamp applied to alpha in the slope window.
pub const ALPHA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdaptMode {
    TargetRate { alpha_t: f64 },
    MinCces { window: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptController {
    log_epsilon: f64,
    k0: f64,
    kappa: f64,
    step_index: usize,
    mode: AdaptMode,
    history: VecDeque<(f64, f64)>,
    degenerate: bool,
    last_slope: f64,
    residuals: Vec<f64>,
}

fn check_common(epsilon0: f64, k0: f64, kappa: f64) -> Result<()> {
    if !(epsilon0 > 0.0 && epsilon0.is_finite()) {
        return Err(Error::config(format!("initial epsilon must be positive, got {epsilon0}")));
    }
    if !(k0 > 0.0 && k0.is_finite()) {
        return Err(Error::config(format!("K0 must be positive, got {k0}")));
    }
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::config(format!("kappa must lie in (0, 1], got {kappa}")));
    }
    Ok(())
}

impl AdaptController {
    pub fn target_rate(epsilon0: f64, k0: f64, kappa: f64, alpha_t: f64) -> Result<Self> {
        check_common(epsilon0, k0, kappa)?;
        if !(alpha_t > 0.0 && alpha_t < 1.0) {
            return Err(Error::config(format!("alpha_t must lie in (0, 1), got {alpha_t}")));
        }
        Ok(Self::build(epsilon0, k0, kappa, AdaptMode::TargetRate { alpha_t }))
    }

    pub fn min_cces(epsilon0: f64, k0: f64, kappa: f64, window: usize) -> Result<Self> {
        check_common(epsilon0, k0, kappa)?;
        if window < 2 {
            return Err(Error::config(format!("slope window must hold >= 2 steps, got {window}")));
        }
        Ok(Self::build(epsilon0, k0, kappa, AdaptMode::MinCces { window }))
    }

    fn build(epsilon0: f64, k0: f64, kappa: f64, mode: AdaptMode) -> Self {
        let cap = match mode {
            AdaptMode::MinCces { window } => window,
            AdaptMode::TargetRate { .. } => 0,
        };
        AdaptController {
            log_epsilon: libm::log(epsilon0),
            k0,
            kappa,
            step_index: 1,
            mode,
            history: VecDeque::with_capacity(cap),
            degenerate: false,
            last_slope: 0.0,
            residuals: Vec::new(),
        }
    }

    pub fn epsilon(&self) -> f64 {
        libm::exp(self.log_epsilon)
    }

    pub fn log_epsilon(&self) -> f64 {
        self.log_epsilon
    }

    pub fn mode(&self) -> AdaptMode {
        self.mode
    }

    pub fn k0(&self) -> f64 {
        self.k0
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Index `n` of the next update (starts at 1).
    pub fn step_index(&self) -> usize {
        self.step_index
    }

    /// `K_n` for the next update.
    pub fn step_size(&self) -> f64 {
        step_size(self.k0, self.kappa, self.step_index)
    }

    /// True when the last slope estimate came from a window with a single J value.
    pub fn degenerate_window(&self) -> bool {
        self.degenerate
    }

    pub fn last_slope(&self) -> f64 {
        self.last_slope
    }

    /// Per-step values of `g` seen by the `MinCces` controller.
    pub fn residual_history(&self) -> &[f64] {
        &self.residuals
    }

    /// Mean of `g` over the last `count` updates.
    pub fn trailing_residual(&self, count: usize) -> Option<f64> {
        if count == 0 || self.residuals.len() < count {
            return None;
        }
        let tail = &self.residuals[self.residuals.len() - count..];
        Some(tail.iter().sum::<f64>() / count as f64)
    }

    /// `log eps += K_n (alpha_n - alpha_t)`.
    pub fn update_target_rate(&mut self, alpha_n: f64) -> Result<()> {
        let AdaptMode::TargetRate { alpha_t } = self.mode else {
            return Err(Error::argument("update_target_rate on a MinCces controller"));
        };
        check_alpha(alpha_n)?;
        self.log_epsilon += self.step_size() * (alpha_n - alpha_t);
        self.step_index += 1;
        Ok(())
    }

    /// Records `(J_n, alpha_n)`, re-estimates `dalpha/dJ` over the window and
    /// moves `log eps` against `g`, so that too-cheap solves (g > 0) tighten
    /// the threshold.
    pub fn update_min_cces(&mut self, j_n: usize, alpha_n: f64) -> Result<()> {
        let AdaptMode::MinCces { window } = self.mode else {
            return Err(Error::argument("update_min_cces on a TargetRate controller"));
        };
        check_alpha(alpha_n)?;
        if self.history.len() == window {
            self.history.pop_front();
        }
        self.history
            .push_back((j_n as f64, alpha_n.clamp(ALPHA_FLOOR, 1.0)));
        let (slope, degenerate) = match least_squares_slope(self.history.iter().copied()) {
            Some(s) => (s, false),
            None => (0.0, true),
        };
        self.last_slope = slope;
        self.degenerate = degenerate;
        let g = fixed_point_residual(j_n as f64, slope, alpha_n);
        self.residuals.push(g);
        self.log_epsilon -= self.step_size() * g;
        self.step_index += 1;
        Ok(())
    }

    /// Dispatches on the mode.
    pub fn observe(&mut self, j_n: usize, alpha_n: f64) {
        // Inputs come from a kernel, which only emits alpha in [0, 1].
        let _ = match self.mode {
            AdaptMode::TargetRate { .. } => self.update_target_rate(alpha_n),
            AdaptMode::MinCces { .. } => self.update_min_cces(j_n, alpha_n),
        };
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::argument(format!("acceptance probability {alpha} outside [0, 1]")))
    }
}

/// `K0 / n^kappa`.
pub fn step_size(k0: f64, kappa: f64, n: usize) -> f64 {
    k0 / libm::pow(n.max(1) as f64, kappa)
}

/// `J dalpha/dJ - alpha + alpha^2 / 2`; zero at a stationary point of J / ESSR.
pub fn fixed_point_residual(j: f64, slope: f64, alpha: f64) -> f64 {
    j * slope - alpha + 0.5 * alpha * alpha
}

/// Effective sample size ratio of a chain whose lag-1 correlation is `1 - alpha`.
pub fn essr_from_alpha(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::argument(format!(
            "ESSR needs alpha in (0, 1], got {alpha}: the chain never moves"
        )));
    }
    Ok(alpha / (2.0 - alpha))
}

/// Ordinary least-squares slope of `y` on `x`; `None` when all `x` coincide.
pub fn least_squares_slope(points: impl Iterator<Item = (f64, f64)> + Clone) -> Option<f64> {
    let (n, sx, sy) = points
        .clone()
        .fold((0usize, 0.0, 0.0), |(n, sx, sy), (x, y)| (n + 1, sx + x, sy + y));
    if n < 2 {
        return None;
    }
    let mx = sx / n as f64;
    let my = sy / n as f64;
    let (sxx, sxy) = points.fold((0.0, 0.0), |(sxx, sxy), (x, y)| {
        (sxx + (x - mx) * (x - mx), sxy + (x - mx) * (y - my))
    });
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}
