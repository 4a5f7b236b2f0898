use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fbdsdej::config::{parse_seed, Backend, ProblemConfig, DEFAULT_SEED, SEED_ENV};
use fbdsdej::report::{run_calculus, run_checks, run_solve, run_study, write_atomic, Status, SweepSpec};
use fbdsdej::Error;

#[derive(Parser)]
#[command(name = "fbdsdej", version, about = "Continuation solver for coupled forward-backward doubly stochastic equations with jumps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Output document; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed; overrides FBDSDEJ_SEED and the config file.
    #[arg(long, global = true, value_parser = seed_arg)]
    seed: Option<u64>,
    /// tree or mc; overrides the config file.
    #[arg(long, global = true)]
    backend: Option<Backend>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a problem by continuation.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Per-iteration trace as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the coefficient checkers.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the stochastic-calculus identity suite.
    Calculus {
        /// Step counts of the reversal trees, comma separated.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        /// Use the left endpoint for backward sums (the suite must fail).
        #[arg(long)]
        wrong_endpoint: bool,
        /// Run the product-formula battery with J = 0.
        #[arg(long)]
        no_jumps: bool,
    },
    /// Step-count, δ and uniqueness sweeps.
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        steps: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        deltas: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        trials: usize,
    },
}

fn seed_arg(s: &str) -> Result<u64, String> {
    parse_seed(s).ok_or_else(|| format!("not a u64: {s:?}"))
}

fn env_seed() -> Option<String> {
    std::env::var(SEED_ENV).ok()
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("document serializes")
}

fn run(cli: Cli) -> Result<Status, Error> {
    if let Some(n) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("--threads: {e}")))?;
    }
    let out = cli.common.out.as_deref();
    match cli.command {
        Command::Solve { config, csv } => {
            let cfg = ProblemConfig::load(&config)?;
            let seed = cfg.resolve_seed(cli.common.seed, env_seed().as_deref())?;
            let backend = cli.common.backend.unwrap_or(cfg.backend);
            let (doc, _) = run_solve(&cfg, seed, backend)?;
            emit(out, &doc.to_json())?;
            if let Some(p) = csv {
                write_atomic(&p, doc.trace_csv()?.as_bytes())?;
            }
            match (&doc.summary, &doc.message) {
                (Some(s), _) => eprintln!(
                    "converged: y_0 = {:?}, Y_0 = {:?}, E[y_T] = {:?}, E[Y_T] = {:?}",
                    s.y0, s.big_y0, s.y_terminal_mean, s.big_y_terminal_mean
                ),
                (None, Some(m)) => eprintln!("error: {m}"),
                _ => {}
            }
            Ok(doc.status)
        }
        Command::Check { config } => {
            let cfg = ProblemConfig::load(&config)?;
            let seed = cfg.resolve_seed(cli.common.seed, env_seed().as_deref())?;
            let res = run_checks(&cfg, seed)?;
            emit(out, &to_json(&res))?;
            if let Some(w) = &res.monotonicity.bracket.witness {
                eprintln!("monotonicity witness: υ = {:?}, ῡ = {:?}, margin {:e}", w.upsilon, w.upsilon_bar, w.margin);
            }
            for v in &res.preconditions.violations {
                eprintln!("precondition: {v}");
            }
            Ok(if res.pass { Status::Ok } else { Status::CheckFailed })
        }
        Command::Calculus { sizes, wrong_endpoint, no_jumps } => {
            let seed = match (cli.common.seed, env_seed()) {
                (Some(s), _) => s,
                (None, Some(v)) => parse_seed(&v).ok_or_else(|| Error::Config(format!("{SEED_ENV}: not a u64: {v:?}")))?,
                (None, None) => DEFAULT_SEED,
            };
            let rep = run_calculus(seed, sizes, wrong_endpoint, !no_jumps)?;
            emit(out, &to_json(&rep))?;
            eprintln!(
                "reversal {:e}, martingale {:e}, anticipating {:e}",
                rep.reversal_max_deviation, rep.martingale_max_violation, rep.anticipating_violation
            );
            Ok(if rep.pass { Status::Ok } else { Status::CheckFailed })
        }
        Command::Study { config, steps, deltas, trials } => {
            let cfg = ProblemConfig::load(&config)?;
            let seed = cfg.resolve_seed(cli.common.seed, env_seed().as_deref())?;
            let backend = cli.common.backend.unwrap_or(cfg.backend);
            let res = run_study(&cfg, seed, backend, &SweepSpec { steps, deltas, trials })?;
            emit(out, &to_json(&res))?;
            if let Some(d) = &res.decay {
                eprintln!("{:>6} {:>12} {:>12} {:>12}", "N", "dt", "residual", "error");
                for r in &d.rows {
                    let e = r.error.map_or("-".to_string(), |e| format!("{e:.4e}"));
                    eprintln!("{:>6} {:>12.4e} {:>12.4e} {:>12}", r.steps, r.dt, r.residual_max, e);
                }
                match d.slope {
                    Some(s) => eprintln!("slope of {}: {s:.3}", d.slope_of),
                    None => eprintln!("slope of {}: undefined", d.slope_of),
                }
            }
            for r in &res.delta_sweep {
                eprintln!("δ = {}: max ratio {:?}, levels {}", r.delta, r.max_ratio, r.levels);
            }
            if let Some(u) = &res.uniqueness {
                eprintln!("uniqueness: {} trials, max distance {:e}", u.trials, u.max_distance);
            }
            Ok(Status::Ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(status) => ExitCode::from(status.code() as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(Status::of(&e).code() as u8)
        }
    }
}
