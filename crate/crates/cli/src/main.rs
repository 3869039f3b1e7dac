use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mfc_cli::commands::{self, CliError, CliResult, PolicyChoice};
use mfc_cli::config::{parse_config, Config};
use mfc_core::experiments::trailing_mean;

/// Mean-field Cucker–Smale control: simulation, training and benchmarks.
#[derive(Debug, Parser)]
#[command(name = "mfc", version)]
struct Cli {
    /// Configuration file (`key = value` lines); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path; standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Riccati solution `t,nu`.
    Riccati,
    /// One simulated path: `t,mean_v,var_v,running_cost`.
    Simulate {
        /// `zero`, `lq`, or a network checkpoint file.
        #[arg(long, default_value = "lq")]
        policy: String,
    },
    /// Policy-gradient training; history `iteration,cost,lr`.
    Train {
        /// Writes the trained network here.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Time-step convergence study: `M,h,value,reference,abs_error` and `slope,<v>`.
    Converge,
    /// Exact LQ value and a Monte-Carlo check.
    Lqvalue,
    /// Optimality identity of the linear-convex feedback; exit 0 iff below 1e-12.
    Lqcheck {
        #[arg(long, default_value_t = 100)]
        draws: usize,
    },
    /// Finite-difference check of the gradient; exit 0 iff below 1e-5.
    Gradcheck {
        #[arg(long, default_value_t = 8)]
        particles: usize,
        #[arg(long, default_value_t = 4)]
        steps: usize,
        #[arg(long, default_value_t = 20)]
        coords: usize,
    },
}

const LQCHECK_TOL: f64 = 1e-12;
const GRADCHECK_TOL: f64 = 1e-5;

fn load_config(cli: &Cli) -> CliResult<Config> {
    let text = match &cli.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut cfg = parse_config(&text)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn emit(out: &Option<PathBuf>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn configure_workers() -> CliResult<()> {
    if let Ok(raw) = std::env::var("MFC_WORKERS") {
        let n: usize = raw.parse().map_err(|_| {
            CliError::Usage(format!(
                "MFC_WORKERS must be a positive integer, got `{raw}`"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {n} workers: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    configure_workers()?;
    let cfg = load_config(&cli)?;
    eprintln!("mfc {:?} seed={}", cli.command, cfg.seed);
    for line in cfg.render().lines() {
        eprintln!("# {line}");
    }
    match &cli.command {
        Command::Riccati => emit(&cli.out, &commands::riccati_csv(&cfg)?)?,
        Command::Simulate { policy } => {
            let choice = PolicyChoice::load(policy)?;
            emit(&cli.out, &commands::simulate_csv(&cfg, &choice)?)?;
        }
        Command::Train { checkpoint } => {
            let k = cfg.iterations;
            let (net, csv, history) = commands::train_csv(&cfg, |r| {
                if r.iteration % 50 == 0 || r.iteration + 1 == k {
                    eprintln!(
                        "iteration {} cost {:.6e} lr {:.3e}",
                        r.iteration, r.cost, r.lr
                    );
                }
            })?;
            emit(&cli.out, &csv)?;
            if let Some(avg) = trailing_mean(&history, 50) {
                eprintln!("final 50-iteration mean cost {avg:.6e}");
            }
            if let Some(path) = checkpoint {
                std::fs::write(path, net.to_checkpoint())?;
            }
        }
        Command::Converge => {
            let report = commands::converge_report(&cfg)?;
            for r in report.rows.iter().filter(|r| r.below_noise || r.excluded) {
                eprintln!(
                    "note: M={} error {:.3e} within Monte-Carlo noise ({:.3e}){}",
                    r.steps,
                    r.abs_error,
                    r.std_err,
                    if r.excluded {
                        ", excluded from fit"
                    } else {
                        ""
                    }
                );
            }
            emit(&cli.out, &report.to_csv())?;
        }
        Command::Lqvalue => emit(&cli.out, &commands::lqvalue_csv(&cfg)?)?,
        Command::Lqcheck { draws } => {
            let worst = commands::lqcheck(cfg.seed, *draws)?;
            emit(&cli.out, &format!("max_residual,{worst:e}\n"))?;
            if worst.is_nan() || worst >= LQCHECK_TOL {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Gradcheck {
            particles,
            steps,
            coords,
        } => {
            let rep = commands::gradcheck(&cfg, *particles, *steps, *coords)?;
            let mut s = String::from("index,analytic,finite_difference,rel_error\n");
            for e in &rep.entries {
                s.push_str(&format!(
                    "{},{:e},{:e},{:e}\n",
                    e.index, e.analytic, e.finite_difference, e.rel_error
                ));
            }
            s.push_str(&format!("max_rel_error,{:e}\n", rep.max_rel_error));
            emit(&cli.out, &s)?;
            if rep.max_rel_error.is_nan() || rep.max_rel_error >= GRADCHECK_TOL {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
