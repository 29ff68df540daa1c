//! The four experiment commands. Each has a compute function returning
//! in-memory results and a `cmd_*` wrapper that writes the files.
//!
//! Stream layout: the problem (toy mean, basis) comes from stream 0 of the
//! seed; task `k` of a command uses `derive(k)`. Tasks run on the rayon pool
//! and are collected in task order, so outputs do not depend on scheduling.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Value};

use rjpo_core::adapt::AdaptController;
use rjpo_core::diag::{chain_essr, gelman_rubin, rmse, DiagnosticsReport};
use rjpo_core::rng::RngStream;
use rjpo_core::sampler::{run_chain, ChainConfig, ChainState, KernelChoice};
use rjpo_core::toy::{ar1_problem, spectral_problem, ToyProblem};

use crate::config::{Command, ModeName, Problem, RunConfig, SamplerName, Start};
use crate::error::AppResult;
use crate::image::{phantom, read_pgm, write_pgm, Image};
use crate::output::{ensure_dir, num, write_json, write_metadata, Cell, Csv};
use crate::superres::{run_gibbs, synthesize, GibbsSummary, Observations, Psf, SuperResConfig, SuperResModel, XSampler};

/// Builds the toy target from stream 0 of the seed.
pub fn build_problem(cfg: &RunConfig) -> AppResult<ToyProblem> {
    let mut s = RngStream::new(cfg.seed);
    Ok(match cfg.problem {
        Problem::Ar1 => ar1_problem(cfg.n, cfg.sigma2, cfg.rho, &mut s)?,
        Problem::Spectral => spectral_problem(cfg.n, cfg.condition, cfg.scale, &mut s)?,
    })
}

fn chain_config(cfg: &RunConfig, problem: &ToyProblem) -> ChainConfig {
    let c = ChainConfig::new(cfg.n_max).with_burn_in(cfg.n_min);
    match cfg.start {
        Start::Zeros => c,
        Start::Mean => c.with_initial(problem.mean_vec()),
    }
}

fn kernel(cfg: &RunConfig, sampler: SamplerName, epsilon: f64, alpha_t: f64) -> AppResult<KernelChoice> {
    Ok(match sampler {
        SamplerName::Epo => KernelChoice::Epo,
        SamplerName::Tpo => KernelChoice::Tpo {
            epsilon,
            max_iters: None,
        },
        SamplerName::Rjpo => KernelChoice::Rjpo {
            epsilon,
            max_iters: None,
        },
        SamplerName::Arjpo => KernelChoice::AdaptiveRjpo {
            controller: controller(cfg, alpha_t)?,
            max_iters: None,
        },
    })
}

fn controller(cfg: &RunConfig, alpha_t: f64) -> AppResult<AdaptController> {
    Ok(match cfg.mode {
        ModeName::TargetRate => AdaptController::target_rate(cfg.eps0, cfg.k0, cfg.kappa, alpha_t)?,
        ModeName::MinCces => AdaptController::min_cces(cfg.eps0, cfg.k0, cfg.kappa, cfg.window)?,
    })
}

fn report(chain: &ChainState, problem: &ToyProblem) -> AppResult<DiagnosticsReport> {
    let moments = rmse(chain, &problem.mean, &problem.covariance)?;
    let essr = chain_essr(chain)?;
    Ok(DiagnosticsReport::new(
        moments,
        essr,
        chain.mean_acceptance(),
        chain.mean_cg_iterations(),
        None,
    ))
}

fn report_json(r: &DiagnosticsReport) -> Value {
    json!({
        "rmse_mean": num(r.rmse_mean),
        "rmse_cov": num(r.rmse_cov),
        "essr": num(r.essr),
        "cces": num(r.cces),
        "mean_acceptance": num(r.mean_acceptance),
        "mean_cg_iters": num(r.mean_cg_iters),
    })
}

pub struct ToyRun {
    pub sampler: SamplerName,
    pub chain: ChainState,
    pub report: DiagnosticsReport,
}

/// One chain per selected sampler at `cfg.epsilon`.
pub fn toy_runs(cfg: &RunConfig, problem: &ToyProblem) -> AppResult<Vec<ToyRun>> {
    let alpha_t = cfg.alpha_t.first().copied().unwrap_or(0.99);
    cfg.sampler
        .par_iter()
        .enumerate()
        .map(|(k, &sampler)| {
            let mut s = RngStream::new(cfg.seed).derive(k as u64);
            let conf = chain_config(cfg, problem).with_trace();
            let chain = run_chain(&problem.target, kernel(cfg, sampler, cfg.epsilon, alpha_t)?, &conf, &mut s)?;
            let report = report(&chain, problem)?;
            Ok(ToyRun { sampler, chain, report })
        })
        .collect()
}

fn chain_csv(chain: &ChainState, coords: usize) -> Csv {
    let coords = coords.min(chain.dim());
    let mut header: Vec<String> = ["iter", "alpha", "accepted", "cg_iters", "epsilon"].map(String::from).to_vec();
    header.extend((0..coords).map(|i| format!("x_{i}")));
    let mut csv = Csv::new(&header);
    let trace = chain.trace.as_deref().unwrap_or(&[]);
    let n = chain.dim();
    let mut cells = Vec::with_capacity(5 + coords);
    for step in (chain.n_min + 1)..=chain.iteration {
        let t = step - 1;
        cells.clear();
        cells.push(Cell::U(step));
        cells.push(Cell::F(chain.alpha_history[t]));
        cells.push(Cell::B(chain.accepted_history[t]));
        cells.push(Cell::U(chain.cg_history[t]));
        cells.push(Cell::F(chain.epsilon_history.get(t).copied().unwrap_or(0.0)));
        let row = (step - chain.n_min - 1) * n;
        cells.extend(trace[row..row + coords].iter().map(|v| Cell::F(*v)));
        csv.row(&cells);
    }
    csv
}

fn problem_json(problem: &ToyProblem) -> Value {
    json!({
        "dim": problem.dim(),
        "condition_number": num(problem.condition_number()),
        "mean": problem.mean.iter().copied().map(num).collect::<Vec<_>>(),
    })
}

pub fn cmd_toy(cfg: &RunConfig) -> AppResult<Value> {
    let problem = build_problem(cfg)?;
    let runs = toy_runs(cfg, &problem)?;
    let out = &cfg.out;
    let mut mean_csv = Csv::new(&["index", "mu"]);
    for (i, m) in problem.mean.iter().enumerate() {
        mean_csv.row(&[i.into(), (*m).into()]);
    }
    mean_csv.write(&out.join("mean.csv"))?;
    let mut table = Csv::new(&[
        "sampler", "epsilon", "rmse_mean", "rmse_cov", "essr", "cces", "mean_alpha", "mean_J",
    ]);
    let mut summary = serde_json::Map::new();
    for r in &runs {
        let eps = if r.sampler == SamplerName::Epo { 0.0 } else { cfg.epsilon };
        let rep = &r.report;
        table.row(&[
            r.sampler.name().into(),
            eps.into(),
            rep.rmse_mean.into(),
            rep.rmse_cov.into(),
            rep.essr.into(),
            rep.cces.into(),
            rep.mean_acceptance.into(),
            rep.mean_cg_iters.into(),
        ]);
        chain_csv(&r.chain, cfg.trace_coords).write(&out.join(format!("chain_{}.csv", r.sampler.name())))?;
        summary.insert(r.sampler.name().into(), report_json(rep));
    }
    table.write(&out.join("rmse.csv"))?;
    let v = json!({ "problem": problem_json(&problem), "samplers": summary });
    write_json(&out.join("summary.json"), &v)?;
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub sampler: SamplerName,
    pub epsilon: f64,
    pub report: DiagnosticsReport,
}

/// Every selected sampler at every grid threshold; E-PO once, at epsilon 0.
pub fn curve_points(cfg: &RunConfig, problem: &ToyProblem) -> AppResult<Vec<CurvePoint>> {
    let mut tasks: Vec<(SamplerName, f64)> = Vec::new();
    for &e in &cfg.epsilon_grid {
        for &s in cfg.sampler.iter().filter(|s| **s != SamplerName::Epo) {
            tasks.push((s, e));
        }
    }
    if cfg.sampler.contains(&SamplerName::Epo) {
        tasks.push((SamplerName::Epo, 0.0));
    }
    let alpha_t = cfg.alpha_t.first().copied().unwrap_or(0.99);
    tasks
        .par_iter()
        .enumerate()
        .map(|(k, &(sampler, epsilon))| {
            let mut s = RngStream::new(cfg.seed).derive(k as u64);
            let conf = chain_config(cfg, problem).with_trace();
            let chain = run_chain(&problem.target, kernel(cfg, sampler, epsilon, alpha_t)?, &conf, &mut s)?;
            Ok(CurvePoint {
                sampler,
                epsilon,
                report: report(&chain, problem)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrRow {
    pub epsilon: f64,
    /// First checkpoint where the largest coordinate PSRF is below threshold.
    pub converged_at: Option<usize>,
    pub psrf: f64,
    /// CG iterations per chain spent up to `converged_at`.
    pub j_tot: f64,
}

/// Multi-chain RJPO convergence check. Chains start at `mu + 5 sd * N(0, 1)`
/// and PSRF is evaluated on the second half of each prefix.
pub fn gelman_rubin_rows(cfg: &RunConfig, problem: &ToyProblem) -> AppResult<Vec<GrRow>> {
    let base = 1_000_000u64;
    let n = problem.dim();
    let sd: Vec<f64> = (0..n).map(|i| problem.covariance[(i, i)].sqrt()).collect();
    cfg.epsilon_grid
        .par_iter()
        .enumerate()
        .map(|(k, &epsilon)| {
            let root = RngStream::new(cfg.seed).derive(base + k as u64);
            let chains = (0..cfg.chains)
                .map(|c| {
                    let mut s = root.derive(c as u64);
                    let start: Vec<f64> = (0..n)
                        .map(|i| problem.mean[i] + 5.0 * sd[i] * s.standard_normal())
                        .collect();
                    let conf = ChainConfig::new(cfg.n_max)
                        .with_burn_in(0)
                        .without_covariance()
                        .with_trace()
                        .with_initial(start);
                    let kc = KernelChoice::Rjpo {
                        epsilon,
                        max_iters: None,
                    };
                    Ok(run_chain(&problem.target, kc, &conf, &mut s)?)
                })
                .collect::<AppResult<Vec<ChainState>>>()?;
            let traces: Vec<Vec<Vec<f64>>> = chains
                .iter()
                .map(|c| (0..n).map(|i| c.coordinate_trace(i).unwrap_or_default()).collect())
                .collect();
            let every = (cfg.n_max / 50).max(20);
            let mut row = GrRow {
                epsilon,
                converged_at: None,
                psrf: f64::INFINITY,
                j_tot: f64::NAN,
            };
            let mut len = every;
            while len <= cfg.n_max {
                let mut worst: f64 = 1.0;
                for i in 0..n {
                    let parts: Vec<&[f64]> = traces.iter().map(|t| &t[i][len / 2..len]).collect();
                    worst = match gelman_rubin(&parts) {
                        Ok(p) => worst.max(p),
                        Err(_) => f64::INFINITY,
                    };
                }
                row.psrf = worst;
                if worst < cfg.psrf_threshold {
                    row.converged_at = Some(len);
                    let total: usize = chains.iter().map(|c| c.cg_history[..len].iter().sum::<usize>()).sum();
                    row.j_tot = total as f64 / chains.len() as f64;
                    break;
                }
                len += every;
            }
            Ok(row)
        })
        .collect()
}

pub fn cmd_curve(cfg: &RunConfig) -> AppResult<Value> {
    let problem = build_problem(cfg)?;
    let points = curve_points(cfg, &problem)?;
    let out = &cfg.out;
    let mut acc = Csv::new(&["epsilon", "mean_alpha", "mean_J"]);
    let mut table = Csv::new(&[
        "sampler", "epsilon", "mean_alpha", "mean_J", "essr", "cces", "rmse_mean", "rmse_cov",
    ]);
    for p in &points {
        let r = &p.report;
        if p.sampler == SamplerName::Rjpo {
            acc.row(&[p.epsilon.into(), r.mean_acceptance.into(), r.mean_cg_iters.into()]);
        }
        table.row(&[
            p.sampler.name().into(),
            p.epsilon.into(),
            r.mean_acceptance.into(),
            r.mean_cg_iters.into(),
            r.essr.into(),
            r.cces.into(),
            r.rmse_mean.into(),
            r.rmse_cov.into(),
        ]);
    }
    acc.write(&out.join("acceptance.csv"))?;
    table.write(&out.join("curve.csv"))?;
    let best = points
        .iter()
        .filter(|p| p.sampler == SamplerName::Rjpo && p.report.cces.is_finite())
        .min_by(|a, b| a.report.cces.total_cmp(&b.report.cces));
    let mut v = json!({
        "problem": problem_json(&problem),
        "min_cces_epsilon": best.map(|p| num(p.epsilon)),
        "min_cces": best.map(|p| num(p.report.cces)),
    });
    if cfg.gelman_rubin {
        let rows = gelman_rubin_rows(cfg, &problem)?;
        let mut gr = Csv::new(&["epsilon", "converged_at", "psrf", "j_tot"]);
        for r in &rows {
            gr.row(&[r.epsilon.into(), r.converged_at.unwrap_or(0).into(), r.psrf.into(), r.j_tot.into()]);
        }
        gr.write(&out.join("gelman_rubin.csv"))?;
        v["psrf_threshold"] = num(cfg.psrf_threshold);
    }
    write_json(&out.join("summary.json"), &v)?;
    Ok(v)
}

pub struct AdaptRun {
    /// Target rate, or NaN for the CCES mode.
    pub alpha_t: f64,
    pub chain: ChainState,
}

/// Trailing statistics use the last 10% of steps, at least 200.
pub fn trailing_len(n_max: usize) -> usize {
    (n_max / 10).max(200).min(n_max)
}

pub fn adapt_runs(cfg: &RunConfig, problem: &ToyProblem) -> AppResult<Vec<AdaptRun>> {
    let targets: Vec<f64> = match cfg.mode {
        ModeName::TargetRate => cfg.alpha_t.clone(),
        ModeName::MinCces => vec![f64::NAN],
    };
    targets
        .par_iter()
        .enumerate()
        .map(|(k, &alpha_t)| {
            let mut s = RngStream::new(cfg.seed).derive(k as u64);
            let conf = chain_config(cfg, problem).without_covariance();
            let kc = KernelChoice::AdaptiveRjpo {
                controller: controller(cfg, if alpha_t.is_nan() { 0.5 } else { alpha_t })?,
                max_iters: None,
            };
            Ok(AdaptRun {
                alpha_t,
                chain: run_chain(&problem.target, kc, &conf, &mut s)?,
            })
        })
        .collect()
}

fn tail_mean<T: Copy + Into<f64>>(v: &[T], count: usize) -> f64 {
    let t = &v[v.len() - count.min(v.len())..];
    t.iter().map(|x| (*x).into()).sum::<f64>() / t.len().max(1) as f64
}

pub fn cmd_adapt(cfg: &RunConfig) -> AppResult<Value> {
    let problem = build_problem(cfg)?;
    let runs = adapt_runs(cfg, &problem)?;
    let tail = trailing_len(cfg.n_max);
    let mut summaries = Vec::new();
    let csv = match cfg.mode {
        ModeName::TargetRate => {
            let mut csv = Csv::new(&["alpha_t", "n", "epsilon", "alpha", "J"]);
            for r in &runs {
                let c = &r.chain;
                for t in 0..c.iteration {
                    csv.row(&[
                        r.alpha_t.into(),
                        (t + 1).into(),
                        c.epsilon_history[t].into(),
                        c.alpha_history[t].into(),
                        c.cg_history[t].into(),
                    ]);
                }
            }
            csv
        }
        ModeName::MinCces => {
            let mut csv = Csv::new(&["n", "epsilon", "alpha", "J", "residual"]);
            let c = &runs[0].chain;
            let g = c.controller.as_ref().map(|k| k.residual_history()).unwrap_or(&[]);
            for t in 0..c.iteration {
                csv.row(&[
                    (t + 1).into(),
                    c.epsilon_history[t].into(),
                    c.alpha_history[t].into(),
                    c.cg_history[t].into(),
                    g.get(t).copied().unwrap_or(f64::NAN).into(),
                ]);
            }
            csv
        }
    };
    for r in &runs {
        let c = &r.chain;
        let ctl = c.controller.as_ref();
        let cg: Vec<f64> = c.cg_history.iter().map(|&j| j as f64).collect();
        summaries.push(json!({
            "alpha_t": num(r.alpha_t),
            "final_epsilon": num(ctl.map(|k| k.epsilon()).unwrap_or(f64::NAN)),
            "trailing_steps": tail,
            "trailing_mean_alpha": num(tail_mean(&c.alpha_history, tail)),
            "trailing_mean_J": num(tail_mean(&cg, tail)),
            "trailing_residual": num(ctl.and_then(|k| k.trailing_residual(tail)).unwrap_or(f64::NAN)),
        }));
    }
    csv.write(&cfg.out.join("trajectory.csv"))?;
    let v = json!({ "problem": problem_json(&problem), "runs": summaries });
    write_json(&cfg.out.join("summary.json"), &v)?;
    Ok(v)
}

pub struct SuperresRun {
    pub model: SuperResModel,
    pub truth: Image,
    pub observations: Observations,
    pub summary: GibbsSummary,
    pub seconds: f64,
    pub reference: Option<(GibbsSummary, f64)>,
}

pub fn model_config(cfg: &RunConfig, dims: (usize, usize)) -> SuperResConfig {
    SuperResConfig {
        hi_res_dims: dims,
        frames: cfg.frames,
        factor: cfg.factor,
        psf: if cfg.fwhm == 0.0 { Psf::Delta } else { Psf::Laplace { fwhm: cfg.fwhm } },
        snr_db: cfg.snr_db,
    }
}

pub fn x_sampler(cfg: &RunConfig, name: SamplerName) -> AppResult<XSampler> {
    Ok(match name {
        SamplerName::Epo => XSampler::Epo,
        SamplerName::Tpo => XSampler::Tpo { epsilon: cfg.epsilon },
        SamplerName::Rjpo => XSampler::Rjpo { epsilon: cfg.epsilon },
        SamplerName::Arjpo => XSampler::Arjpo {
            controller: AdaptController::target_rate(cfg.eps0, cfg.k0, cfg.kappa, cfg.alpha_t[0])?,
        },
    })
}

/// Synthesizes data (stream 0) and runs the selected sampler (stream 1),
/// plus the E-PO reference (stream 2) alongside when requested.
pub fn superres_run(cfg: &RunConfig) -> AppResult<SuperresRun> {
    let truth = match &cfg.input {
        Some(p) => read_pgm(p)?,
        None => phantom(cfg.dims.0, cfg.dims.1),
    };
    let model = SuperResModel::new(model_config(cfg, truth.dims()))?;
    let root = RngStream::new(cfg.seed);
    let observations = synthesize(&model, &truth.data, &mut root.derive(0))?;
    let y = &observations.y;
    let timed = |sampler: XSampler, index: u64| -> AppResult<(GibbsSummary, f64)> {
        let t0 = Instant::now();
        let s = run_gibbs(&model, y, cfg.iterations, cfg.burn_in, sampler, &mut root.derive(index), None)?;
        Ok((s, t0.elapsed().as_secs_f64()))
    };
    let main = x_sampler(cfg, cfg.sampler[0])?;
    let (a, b) = rayon::join(
        || timed(main, 1),
        || cfg.reference.then(|| timed(XSampler::Epo, 2)).transpose(),
    );
    let (summary, seconds) = a?;
    let reference = b?;
    Ok(SuperresRun {
        model,
        truth,
        observations,
        summary,
        seconds,
        reference,
    })
}

fn gibbs_csv(s: &GibbsSummary) -> Csv {
    let mut csv = Csv::new(&["iter", "gamma_y", "gamma_x", "alpha", "cg_iters"]);
    for r in &s.records {
        csv.row(&[r.iter.into(), r.gamma_y.into(), r.gamma_x.into(), r.alpha.into(), r.cg_iters.into()]);
    }
    csv
}

fn gibbs_json(s: &GibbsSummary, seconds: f64) -> Value {
    json!({
        "sampler": s.sampler,
        "iterations": s.iterations,
        "burn_in": s.burn_in,
        "gamma_y_mean": num(s.gamma_y_mean),
        "gamma_y_sd": num(s.gamma_y_sd),
        "gamma_x_mean": num(s.gamma_x_mean),
        "gamma_x_sd": num(s.gamma_x_sd),
        "mean_alpha": num(s.mean_alpha),
        "mean_cg_iters": num(s.mean_cg_iters),
        "peak_cg_iters": s.peak_cg_iters,
        "pixel_sd_mean": num(s.pixel_sd.iter().sum::<f64>() / s.pixel_sd.len() as f64),
        "wall_seconds": num(seconds),
    })
}

pub fn cmd_superres(cfg: &RunConfig) -> AppResult<Value> {
    let run = superres_run(cfg)?;
    let out = &cfg.out;
    let (rows, cols) = run.truth.dims();
    write_pgm(&out.join("truth.pgm"), &run.truth)?;
    let f = cfg.factor;
    let frame0 = Image::new(rows / f, cols / f, run.observations.y[..rows * cols / (f * f)].to_vec())?;
    write_pgm(&out.join("frame_0.pgm"), &frame0)?;
    write_pgm(&out.join("posterior_mean.pgm"), &Image::new(rows, cols, run.summary.pixel_mean.clone())?)?;
    gibbs_csv(&run.summary).write(&out.join("chains.csv"))?;
    let mut v = json!({
        "hi_res_dims": [rows, cols],
        "observations": run.model.m(),
        "noise_variance": num(run.observations.noise_variance),
        "empirical_snr_db": num(run.observations.empirical_snr_db()),
        "true_gamma_y": num(1.0 / run.observations.noise_variance),
        "run": gibbs_json(&run.summary, run.seconds),
    });
    if let Some((r, secs)) = &run.reference {
        gibbs_csv(r).write(&out.join("reference_chains.csv"))?;
        write_pgm(&out.join("reference_mean.pgm"), &Image::new(rows, cols, r.pixel_mean.clone())?)?;
        v["reference"] = gibbs_json(r, *secs);
        v["relative_gap"] = json!({
            "gamma_y": num((run.summary.gamma_y_mean - r.gamma_y_mean).abs() / r.gamma_y_mean),
            "gamma_x": num((run.summary.gamma_x_mean - r.gamma_x_mean).abs() / r.gamma_x_mean),
        });
    }
    write_json(&out.join("summary.json"), &v)?;
    Ok(v)
}

/// Validates, creates the output directory, writes metadata and runs.
pub fn run(cfg: &RunConfig) -> AppResult<PathBuf> {
    cfg.validate()?;
    ensure_dir(&cfg.out)?;
    write_metadata(cfg)?;
    match cfg.command {
        Command::Toy => cmd_toy(cfg),
        Command::Curve => cmd_curve(cfg),
        Command::Adapt => cmd_adapt(cfg),
        Command::Superres => cmd_superres(cfg),
    }?;
    Ok(cfg.out.clone())
}

