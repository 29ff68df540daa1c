use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rjpo::config::{Command, RunConfig};
use rjpo::AppResult;

/// Reversible-jump perturbation-optimization samplers for Gaussian targets.
#[derive(Parser, Debug)]
#[command(name = "rjpo", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Sub {
    /// AR(1) toy target: moment errors and chains per sampler.
    Toy,
    /// Acceptance, ESSR, CCES and RMSE across an epsilon grid.
    Curve,
    /// Adaptive threshold trajectories.
    Adapt,
    /// Unsupervised super-resolution Gibbs sampler.
    Superres,
}

#[derive(Args, Debug)]
struct Opts {
    /// key = value file, or a metadata.json from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Output directory (created if missing).
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true)]
    n_max: Option<String>,
    #[arg(long, global = true)]
    n_min: Option<String>,
    #[arg(long, global = true)]
    chains: Option<String>,
    #[arg(long, global = true)]
    epsilon: Option<String>,
    /// LO:HI:COUNT log grid or a comma list.
    #[arg(long, global = true)]
    epsilon_grid: Option<String>,
    /// One value, or a comma list for `adapt`.
    #[arg(long, global = true)]
    alpha_t: Option<String>,
    /// target_rate or min_cces.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// epo, tpo, rjpo or arjpo; comma list for `toy` and `curve`.
    #[arg(long, global = true)]
    sampler: Option<String>,
    /// Any other setting, KEY=VALUE; may repeat.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn build(cli: &Cli) -> AppResult<RunConfig> {
    let command = match cli.command {
        Sub::Toy => Command::Toy,
        Sub::Curve => Command::Curve,
        Sub::Adapt => Command::Adapt,
        Sub::Superres => Command::Superres,
    };
    let mut cfg = RunConfig::defaults(command);
    if let Some(p) = &cli.opts.config {
        cfg.apply_file(p)?;
    }
    let o = &cli.opts;
    let flags = [
        ("seed", &o.seed),
        ("out", &o.out),
        ("n_max", &o.n_max),
        ("n_min", &o.n_min),
        ("chains", &o.chains),
        ("epsilon", &o.epsilon),
        ("epsilon_grid", &o.epsilon_grid),
        ("alpha_t", &o.alpha_t),
        ("mode", &o.mode),
        ("sampler", &o.sampler),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    for kv in &o.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| rjpo::AppError::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match build(&cli).and_then(|cfg| rjpo::commands::run(&cfg)) {
        Ok(dir) => {
            eprintln!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
