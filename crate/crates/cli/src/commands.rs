//! Subcommand bodies. Each returns its CSV output as a string so callers
//! (the binary, the acceptance tests) decide where it goes.

use std::fmt::Write as _;

use mfc_core::cost::cell_cost;
use mfc_core::experiments::{
    convergence_study, evaluate_policy, ConvergenceReport, HistoryRow, ProjectedLqEstimator,
    Reference, StudyConfig, TrainedEstimator, LABEL_EVAL,
};
use mfc_core::linconvex::{
    feedback_controls, optimality_residual, residual_scale, LinConvexCoeffs,
};
use mfc_core::policy::{gradient_check, GradCheckReport, MlpPolicy};
use mfc_core::rng::{Purpose, Tag};
use mfc_core::{
    exact_lq_value, rollout, solve_riccati, Ensemble, FeedbackPolicy, LqFeedbackPolicy,
    SeededStream, TimeGrid, ZeroPolicy,
};
use thiserror::Error;

use crate::config::{Config, ConfigError, Protocol};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("usage: {0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(#[from] mfc_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 2 for bad input, 1 for failures while computing or writing.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Config(_) | Self::Usage(_) => 2,
            Self::Numerical(_) | Self::Io(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// `t,nu` on the Riccati grid.
pub fn riccati_csv(cfg: &Config) -> CliResult<String> {
    let ric = solve_riccati(&cfg.lq_params(), cfg.riccati_steps)?;
    let mut s = String::from("t,nu\n");
    for (t, nu) in ric.grid().nodes().iter().zip(ric.nu()) {
        let _ = writeln!(s, "{t:e},{nu:e}");
    }
    Ok(s)
}

/// Feedback used by `simulate`.
#[derive(Debug, Clone)]
pub enum PolicyChoice {
    Zero,
    /// Exact LQ feedback (meaningful for `beta = 0`).
    Lq,
    Network(MlpPolicy<f64>),
}

impl PolicyChoice {
    /// `zero`, `lq`, or a path to a network checkpoint.
    pub fn load(spec: &str) -> CliResult<Self> {
        match spec {
            "zero" => Ok(Self::Zero),
            "lq" => Ok(Self::Lq),
            path => {
                let text = std::fs::read_to_string(path)?;
                Ok(Self::Network(MlpPolicy::from_checkpoint(&text)?))
            }
        }
    }
}

/// One simulated path, one row per node:
/// `t,mean_v,var_v,running_cost` where `running_cost` accumulates over the
/// cells before `t` and `var_v` is the mean squared deviation from the mean
/// velocity. For `d > 1` the mean column becomes `mean_v1,...,mean_vd`.
pub fn simulate_csv(cfg: &Config, choice: &PolicyChoice) -> CliResult<String> {
    let cs = cfg.cs_params();
    let grid = TimeGrid::uniform(0.0, cfg.horizon, cfg.steps)?;
    let stream = SeededStream::new(cfg.seed).derive(LABEL_EVAL).derive(0);
    let e0 = Ensemble::uniform(cfg.particles, cfg.dim, &stream)?;
    let lq;
    let policy: &dyn FeedbackPolicy<f64> = match choice {
        PolicyChoice::Zero => &ZeroPolicy,
        PolicyChoice::Lq => {
            lq = LqFeedbackPolicy::new(
                solve_riccati(&cfg.lq_params(), cfg.riccati_steps)?,
                cfg.gamma1,
            )?;
            &lq
        }
        PolicyChoice::Network(net) => net,
    };
    let traj = rollout(&e0, policy, &grid, &cs, &stream)?;
    let mut s = String::from("t,");
    if cfg.dim == 1 {
        s.push_str("mean_v");
    } else {
        let cols: Vec<String> = (1..=cfg.dim).map(|c| format!("mean_v{c}")).collect();
        s.push_str(&cols.join(","));
    }
    s.push_str(",var_v,running_cost\n");
    let mut running = 0.0;
    for (m, e) in traj.states.iter().enumerate() {
        let mom = e.moments();
        let _ = write!(s, "{:e}", grid.node(m));
        for mv in &mom.mean_v {
            let _ = write!(s, ",{mv:e}");
        }
        let _ = writeln!(s, ",{:e},{running:e}", mom.var_v);
        if m < grid.steps() {
            let (state, control) = cell_cost(e, &traj.controls[m], grid.step(), cfg.gamma1);
            running += state + control;
        }
    }
    Ok(s)
}

/// Runs training, streaming each history row to `observer`. Returns the
/// network and the history CSV (`iteration,cost,lr`).
pub fn train_csv(
    cfg: &Config,
    mut observer: impl FnMut(&HistoryRow<f64>),
) -> CliResult<(MlpPolicy<f64>, String, Vec<HistoryRow<f64>>)> {
    let (policy, history) =
        mfc_core::experiments::train_with(&cfg.train_config(), |r| observer(r))?;
    let mut s = format!("{}\n", HistoryRow::<f64>::CSV_HEADER);
    for r in &history {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    Ok((policy, s, history))
}

/// Convergence study over `M_list` with `N` particles and `reps`
/// repetitions. The exact protocol needs `beta = 0`; with `beta > 0` the
/// errors are Cauchy differences between consecutive resolutions.
pub fn converge_report(cfg: &Config) -> CliResult<ConvergenceReport<f64>> {
    let cs = cfg.cs_params();
    let study = StudyConfig {
        steps: cfg.m_list.clone(),
        particles: cfg.particles,
        reps: cfg.reps,
        seed: cfg.seed,
    };
    let reference = if cfg.beta == 0.0 {
        let ric = solve_riccati(&cfg.lq_params(), cfg.riccati_steps)?;
        Reference::Exact(exact_lq_value(&cfg.lq_params(), &ric)?)
    } else {
        Reference::Cauchy
    };
    let report = match cfg.protocol {
        Protocol::Exact => {
            if cfg.beta != 0.0 {
                return Err(CliError::Usage(
                    "protocol = exact requires beta = 0; use protocol = trained".into(),
                ));
            }
            let ric = solve_riccati(&cfg.lq_params(), cfg.riccati_steps)?;
            let est = ProjectedLqEstimator {
                ric,
                gamma1: cfg.gamma1,
            };
            convergence_study(&study, &cs, reference, &est)?
        }
        Protocol::Trained => {
            let est = TrainedEstimator {
                base: cfg.train_config(),
            };
            convergence_study(&study, &cs, reference, &est)?
        }
    };
    Ok(report)
}

/// `nu0,integral,exact,mc_mean,mc_stderr,rel_gap`: the closed-form value and
/// a Monte-Carlo estimate under the exact feedback with `N`, `M`, `reps`.
pub fn lqvalue_csv(cfg: &Config) -> CliResult<String> {
    if cfg.beta != 0.0 {
        return Err(CliError::Usage(
            "the exact LQ value exists only for beta = 0".into(),
        ));
    }
    let p = cfg.lq_params();
    let ric = solve_riccati(&p, cfg.riccati_steps)?;
    let exact = exact_lq_value(&p, &ric)?;
    let pol = LqFeedbackPolicy::new(ric.clone(), cfg.gamma1)?;
    let ev = evaluate_policy(
        &pol,
        &cfg.cs_params(),
        cfg.particles,
        cfg.steps,
        cfg.seed,
        cfg.reps,
    )?;
    let gap = (ev.mean - exact).abs() / exact.abs();
    Ok(format!(
        "nu0,integral,exact,mc_mean,mc_stderr,rel_gap\n{:e},{:e},{:e},{:e},{:e},{:e}\n",
        ric.nu()[0],
        ric.integral(),
        exact,
        ev.mean,
        ev.std_err,
        gap
    ))
}

/// Largest `|residual| / scale` of the closed-form feedback over `draws`
/// random coefficient sets (`q` in [0.1, 5], `qbar` in [0, 5], the rest in
/// [-3, 3]) and sample sets of 1 to 64 points in [-10, 10]^2.
pub fn lqcheck(seed: u64, draws: usize) -> CliResult<f64> {
    let s = SeededStream::new(seed);
    let mut worst = 0.0f64;
    for k in 0..draws {
        let mut slot = 0u32;
        let mut u = |lo: f64, hi: f64| {
            let z = s.uniform(Tag::new(Purpose::Coefficients, k as u64, slot, 0));
            slot += 1;
            lo + (hi - lo) * z
        };
        let coeffs = LinConvexCoeffs::constant(
            u(-3.0, 3.0),
            u(-3.0, 3.0),
            u(0.1, 5.0),
            u(0.0, 5.0),
            u(-3.0, 3.0),
            u(-3.0, 3.0),
            0.1,
        );
        let n = 1 + (u(0.0, 64.0) as usize).min(63);
        let samples: Vec<(f64, f64)> = (0..n).map(|_| (u(-10.0, 10.0), u(-10.0, 10.0))).collect();
        let t = 0.0;
        let a = feedback_controls(&samples, &t, &coeffs)?;
        let res = optimality_residual(&samples, &t, &coeffs, &a)?;
        let scale = residual_scale(&samples, &t, &coeffs, &a)?;
        for (r, sc) in res.iter().zip(&scale) {
            if *sc > 0.0 {
                worst = worst.max(r.abs() / sc);
            } else if *r != 0.0 {
                worst = f64::INFINITY;
            }
        }
    }
    Ok(worst)
}

/// Finite-difference check of the pathwise gradient on a small problem with
/// `particles` particles and `steps` steps (other parameters from `cfg`).
pub fn gradcheck(
    cfg: &Config,
    particles: usize,
    steps: usize,
    coords: usize,
) -> CliResult<GradCheckReport<f64>> {
    let cs = cfg.cs_params();
    let grid = TimeGrid::uniform(0.0, cfg.horizon, steps)?;
    let root = SeededStream::new(cfg.seed);
    let net = cfg.train_config().initial_policy()?;
    let e0 = Ensemble::uniform(particles, cfg.dim, &root.derive(LABEL_EVAL))?;
    Ok(gradient_check(
        &net,
        &e0,
        &grid,
        &cs,
        &root.derive(LABEL_EVAL).derive(1),
        coords,
        1e-5,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn riccati_header_and_rows() {
        let cfg = parse_config("riccati_steps = 8").unwrap();
        let csv = riccati_csv(&cfg).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,nu");
        assert_eq!(lines.len(), 10);
        assert!(lines[9].ends_with(",2e0"));
    }

    #[test]
    fn simulate_columns() {
        let cfg = parse_config("N = 20\nM = 4").unwrap();
        let csv = simulate_csv(&cfg, &PolicyChoice::Lq).unwrap();
        assert!(csv.starts_with("t,mean_v,var_v,running_cost\n"));
        assert_eq!(csv.lines().count(), 6);
        let cfg = parse_config("N = 20\nM = 4\nd = 2\nbeta = 1").unwrap();
        let csv = simulate_csv(&cfg, &PolicyChoice::Zero).unwrap();
        assert!(csv.starts_with("t,mean_v1,mean_v2,var_v,running_cost\n"));
    }

    #[test]
    fn exact_protocol_needs_beta_zero() {
        let cfg = parse_config("beta = 1\nN = 4\nreps = 1").unwrap();
        let e = converge_report(&cfg).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn lqcheck_passes() {
        assert!(lqcheck(3, 20).unwrap() < 1e-12);
    }

    #[test]
    fn gradcheck_small() {
        let cfg = parse_config("seed = 7").unwrap();
        let rep = gradcheck(&cfg, 8, 4, 20).unwrap();
        assert_eq!(rep.entries.len(), 20);
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
    }
}
