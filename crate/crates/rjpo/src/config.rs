//! Run configuration: per-command defaults, `key = value` files and flag
//! overrides. Every key can be written back by [`RunConfig::pairs`], which is
//! what the metadata record stores, so a run can be repeated from it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{AppError, AppResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Toy,
    Curve,
    Adapt,
    Superres,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Toy => "toy",
            Command::Curve => "curve",
            Command::Adapt => "adapt",
            Command::Superres => "superres",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem {
    /// `R_ij = sigma2 rho^|i-j|`.
    Ar1,
    /// Log-spaced spectrum in a random basis.
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerName {
    Epo,
    Tpo,
    Rjpo,
    Arjpo,
}

impl SamplerName {
    pub fn name(self) -> &'static str {
        match self {
            SamplerName::Epo => "epo",
            SamplerName::Tpo => "tpo",
            SamplerName::Rjpo => "rjpo",
            SamplerName::Arjpo => "arjpo",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "epo" | "cholesky" | "cholesky_epo" => SamplerName::Epo,
            "tpo" => SamplerName::Tpo,
            "rjpo" => SamplerName::Rjpo,
            "arjpo" => SamplerName::Arjpo,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeName {
    TargetRate,
    MinCces,
}

/// Where toy chains start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Start {
    Zeros,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub out: PathBuf,
    pub problem: Problem,
    pub n: usize,
    pub sigma2: f64,
    pub rho: f64,
    pub condition: f64,
    pub scale: f64,
    pub n_max: usize,
    pub n_min: usize,
    pub chains: usize,
    pub start: Start,
    pub epsilon: f64,
    pub epsilon_grid: Vec<f64>,
    pub sampler: Vec<SamplerName>,
    pub mode: ModeName,
    pub alpha_t: Vec<f64>,
    pub k0: f64,
    pub kappa: f64,
    pub eps0: f64,
    pub window: usize,
    /// Leading coordinates written per chain CSV row.
    pub trace_coords: usize,
    pub gelman_rubin: bool,
    pub psrf_threshold: f64,
    pub dims: (usize, usize),
    pub frames: usize,
    pub factor: usize,
    pub fwhm: f64,
    pub snr_db: f64,
    pub iterations: usize,
    pub burn_in: usize,
    pub input: Option<PathBuf>,
    pub reference: bool,
}

fn bad(key: &str, value: &str, what: &str) -> AppError {
    AppError::Config(format!("{key} = {value:?}: {what}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> AppResult<T> {
    value.trim().parse().map_err(|_| bad(key, value, "not a valid number"))
}

fn float(key: &str, value: &str) -> AppResult<f64> {
    let v: f64 = num(key, value)?;
    if v.is_nan() {
        return Err(bad(key, value, "NaN is not allowed"));
    }
    Ok(v)
}

fn float_list(key: &str, value: &str) -> AppResult<Vec<f64>> {
    value.split(',').filter(|s| !s.trim().is_empty()).map(|s| float(key, s)).collect()
}

fn flag(key: &str, value: &str) -> AppResult<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(bad(key, value, "expected true or false")),
    }
}

/// `lo:hi:count` for a log grid, or an explicit comma list.
fn parse_grid(key: &str, value: &str) -> AppResult<Vec<f64>> {
    let parts: Vec<&str> = value.split(':').collect();
    if parts.len() == 3 {
        let lo = float(key, parts[0])?;
        let hi = float(key, parts[1])?;
        let count: usize = num(key, parts[2])?;
        if !(lo > 0.0 && hi > lo) || count == 0 {
            return Err(bad(key, value, "log grid needs 0 < lo < hi and count >= 1"));
        }
        return Ok(rjpo_core::diag::log_grid(lo, hi, count));
    }
    float_list(key, value)
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn defaults(command: Command) -> Self {
        let mut c = RunConfig {
            command,
            seed: 1,
            out: PathBuf::from("out"),
            problem: Problem::Ar1,
            n: 20,
            sigma2: 1.0,
            rho: 0.8,
            condition: 100.0,
            scale: 1.0,
            n_max: 100_000,
            n_min: 10_000,
            chains: 10,
            start: Start::Zeros,
            epsilon: 1e-2,
            epsilon_grid: rjpo_core::diag::log_grid(1e-6, 1e-1, 10),
            sampler: vec![SamplerName::Epo, SamplerName::Tpo, SamplerName::Rjpo],
            mode: ModeName::TargetRate,
            alpha_t: vec![0.5, 0.8, 0.99],
            k0: rjpo_core::adapt::DEFAULT_K0,
            kappa: rjpo_core::adapt::DEFAULT_KAPPA,
            eps0: 1e-3,
            window: rjpo_core::adapt::DEFAULT_WINDOW,
            trace_coords: 2,
            gelman_rubin: false,
            psrf_threshold: 1.1,
            dims: (64, 64),
            frames: 2,
            factor: 2,
            fwhm: 4.0,
            snr_db: 20.0,
            iterations: 1000,
            burn_in: 100,
            input: None,
            reference: false,
        };
        match command {
            Command::Toy => {}
            Command::Curve => {
                c.problem = Problem::Spectral;
                c.n = 16;
                c.n_max = 10_000;
                c.n_min = 1_000;
                c.start = Start::Mean;
                c.sampler = vec![SamplerName::Rjpo, SamplerName::Tpo, SamplerName::Epo];
            }
            Command::Adapt => {
                c.n_max = 1000;
                c.n_min = 0;
                c.sampler = vec![SamplerName::Arjpo];
            }
            Command::Superres => {
                c.sampler = vec![SamplerName::Arjpo];
                c.alpha_t = vec![0.99];
                c.eps0 = 1e-4;
                c.epsilon = 1e-4;
            }
        }
        c
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> AppResult<()> {
        let v = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "command" => {
                if v != self.command.name() {
                    return Err(bad(key, v, &format!("file is for `{v}`, not `{}`", self.command.name())));
                }
            }
            "seed" => self.seed = num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "problem" => {
                self.problem = match v {
                    "ar1" => Problem::Ar1,
                    "spectral" => Problem::Spectral,
                    _ => return Err(bad(key, v, "expected ar1 or spectral")),
                }
            }
            "n" => self.n = num(key, v)?,
            "sigma2" => self.sigma2 = float(key, v)?,
            "rho" => self.rho = float(key, v)?,
            "condition" => self.condition = float(key, v)?,
            "scale" => self.scale = float(key, v)?,
            "n_max" => self.n_max = num(key, v)?,
            "n_min" => self.n_min = num(key, v)?,
            "chains" => self.chains = num(key, v)?,
            "start" => {
                self.start = match v {
                    "zeros" => Start::Zeros,
                    "mean" => Start::Mean,
                    _ => return Err(bad(key, v, "expected zeros or mean")),
                }
            }
            "epsilon" => self.epsilon = float(key, v)?,
            "epsilon_grid" => self.epsilon_grid = parse_grid(key, v)?,
            "sampler" => {
                self.sampler = v
                    .split(',')
                    .map(|s| SamplerName::parse(s.trim()).ok_or_else(|| bad(key, s, "unknown sampler")))
                    .collect::<AppResult<_>>()?
            }
            "mode" => {
                self.mode = match v {
                    "target_rate" => ModeName::TargetRate,
                    "min_cces" => ModeName::MinCces,
                    _ => return Err(bad(key, v, "expected target_rate or min_cces")),
                }
            }
            "alpha_t" => self.alpha_t = float_list(key, v)?,
            "k0" => self.k0 = float(key, v)?,
            "kappa" => self.kappa = float(key, v)?,
            "eps0" => self.eps0 = float(key, v)?,
            "window" => self.window = num(key, v)?,
            "trace_coords" => self.trace_coords = num(key, v)?,
            "gelman_rubin" => self.gelman_rubin = flag(key, v)?,
            "psrf_threshold" => self.psrf_threshold = float(key, v)?,
            "dims" => {
                let (r, c) = v.split_once('x').ok_or_else(|| bad(key, v, "expected ROWSxCOLS"))?;
                self.dims = (num(key, r)?, num(key, c)?);
            }
            "frames" => self.frames = num(key, v)?,
            "factor" => self.factor = num(key, v)?,
            "fwhm" => self.fwhm = float(key, v)?,
            "snr_db" => self.snr_db = float(key, v)?,
            "iterations" => self.iterations = num(key, v)?,
            "burn_in" => self.burn_in = num(key, v)?,
            "input" => self.input = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "reference" => self.reference = flag(key, v)?,
            other => return Err(AppError::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Parses a `key = value` file (`#` starts a comment) or a metadata JSON
    /// record written by a previous run.
    pub fn apply_text(&mut self, text: &str) -> AppResult<()> {
        if text.trim_start().starts_with('{') {
            let meta: serde_json::Value = serde_json::from_str(text)
                .map_err(|e| AppError::Config(format!("metadata JSON: {e}")))?;
            let cfg = meta
                .get("config")
                .and_then(|c| c.as_object())
                .ok_or_else(|| AppError::Config("metadata JSON has no `config` object".into()))?;
            for (k, v) in cfg {
                let s = v.as_str().ok_or_else(|| AppError::Config(format!("metadata key {k} is not a string")))?;
                self.set(k, s)?;
            }
            return Ok(());
        }
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| AppError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> AppResult<()> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        self.apply_text(&text)
    }

    /// Every setting as `(key, value)`, in a fixed order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let samplers = self.sampler.iter().map(|s| s.name()).collect::<Vec<_>>().join(",");
        vec![
            ("command", self.command.name().into()),
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            (
                "problem",
                match self.problem {
                    Problem::Ar1 => "ar1",
                    Problem::Spectral => "spectral",
                }
                .into(),
            ),
            ("n", self.n.to_string()),
            ("sigma2", format!("{:e}", self.sigma2)),
            ("rho", format!("{:e}", self.rho)),
            ("condition", format!("{:e}", self.condition)),
            ("scale", format!("{:e}", self.scale)),
            ("n_max", self.n_max.to_string()),
            ("n_min", self.n_min.to_string()),
            ("chains", self.chains.to_string()),
            (
                "start",
                match self.start {
                    Start::Zeros => "zeros",
                    Start::Mean => "mean",
                }
                .into(),
            ),
            ("epsilon", format!("{:e}", self.epsilon)),
            ("epsilon_grid", fmt_list(&self.epsilon_grid)),
            ("sampler", samplers),
            (
                "mode",
                match self.mode {
                    ModeName::TargetRate => "target_rate",
                    ModeName::MinCces => "min_cces",
                }
                .into(),
            ),
            ("alpha_t", fmt_list(&self.alpha_t)),
            ("k0", format!("{:e}", self.k0)),
            ("kappa", format!("{:e}", self.kappa)),
            ("eps0", format!("{:e}", self.eps0)),
            ("window", self.window.to_string()),
            ("trace_coords", self.trace_coords.to_string()),
            ("gelman_rubin", self.gelman_rubin.to_string()),
            ("psrf_threshold", format!("{:e}", self.psrf_threshold)),
            ("dims", format!("{}x{}", self.dims.0, self.dims.1)),
            ("frames", self.frames.to_string()),
            ("factor", self.factor.to_string()),
            ("fwhm", format!("{:e}", self.fwhm)),
            ("snr_db", format!("{:e}", self.snr_db)),
            ("iterations", self.iterations.to_string()),
            ("burn_in", self.burn_in.to_string()),
            ("input", self.input.as_ref().map(|p| p.display().to_string()).unwrap_or_default()),
            ("reference", self.reference.to_string()),
        ]
    }

    /// The settings as a `key = value` file.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Checks the settings the selected command will use.
    pub fn validate(&self) -> AppResult<()> {
        let err = |m: String| Err(AppError::Config(m));
        match self.command {
            Command::Toy | Command::Curve | Command::Adapt => {
                if self.n == 0 {
                    return err("n must be positive".into());
                }
                match self.problem {
                    Problem::Ar1 => {
                        if !(self.rho > -1.0 && self.rho < 1.0) {
                            return err(format!("rho must lie in (-1, 1), got {}", self.rho));
                        }
                        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
                            return err(format!("sigma2 must be positive, got {}", self.sigma2));
                        }
                    }
                    Problem::Spectral => {
                        if !(self.condition >= 1.0 && self.condition.is_finite()) {
                            return err(format!("condition must be >= 1, got {}", self.condition));
                        }
                        if !(self.scale > 0.0 && self.scale.is_finite()) {
                            return err(format!("scale must be positive, got {}", self.scale));
                        }
                    }
                }
                if self.n_min >= self.n_max {
                    return err(format!("n_min = {} must be below n_max = {}", self.n_min, self.n_max));
                }
            }
            Command::Superres => {
                if self.burn_in >= self.iterations {
                    return err(format!(
                        "burn_in = {} must be below iterations = {}",
                        self.burn_in, self.iterations
                    ));
                }
                if self.sampler.len() != 1 {
                    return err("superres takes exactly one sampler".into());
                }
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return err(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if self.sampler.is_empty() {
            return err("no sampler selected".into());
        }
        if self.command == Command::Curve {
            rjpo_core::diag::check_grid(&self.epsilon_grid).map_err(|e| AppError::Config(e.to_string()))?;
            if self.gelman_rubin && self.chains < 2 {
                return err("Gelman-Rubin needs chains >= 2".into());
            }
        }
        if self.command == Command::Adapt || self.sampler.contains(&SamplerName::Arjpo) {
            if !(self.kappa > 0.0 && self.kappa <= 1.0) {
                return err(format!("kappa must lie in (0, 1], got {}", self.kappa));
            }
            if !(self.k0 > 0.0) || !(self.eps0 > 0.0) {
                return err("k0 and eps0 must be positive".into());
            }
            if self.alpha_t.is_empty() || self.alpha_t.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
                return err(format!("alpha_t values must lie in (0, 1), got {:?}", self.alpha_t));
            }
            if self.window < 2 {
                return err("window must be at least 2".into());
            }
        }
        Ok(())
    }
}
