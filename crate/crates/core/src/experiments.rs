//! Drivers: policy-gradient training, Monte-Carlo evaluation of a feedback,
//! and time-step convergence studies with common random numbers.

use rayon::prelude::*;

use crate::cost::{empirical_cs_cost, CostBreakdown};
use crate::dynamics::{rollout_with_noise, CsParams, FeatureSet, FeedbackPolicy, NoiseField};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linconvex::project_piecewise_constant;
use crate::policy::{
    adam_step, cost_and_grad_with_noise, lr_at, Activation, AdamState, LrSchedule, MlpPolicy,
};
use crate::riccati::RiccatiSolution;
use crate::rng::SeededStream;
use crate::scalar::Real;

/// Stream labels under the root seed. Each consumer owns one subtree.
pub const LABEL_WEIGHTS: u64 = 1;
pub const LABEL_TRAIN: u64 = 2;
pub const LABEL_EVAL: u64 = 3;
pub const LABEL_STUDY: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub cs: CsParams<T>,
    pub particles: usize,
    pub steps: usize,
    pub iterations: usize,
    pub seed: u64,
    pub schedule: LrSchedule<T>,
    pub features: FeatureSet,
    pub hidden: usize,
    pub layers: usize,
    pub activation: Activation,
}

impl<T: Real> TrainConfig<T> {
    /// The reference setup: N = 1000, M = 128, K = 800, two hidden layers
    /// of 110 units, features chosen by `beta`.
    pub fn reference(cs: CsParams<T>) -> Self {
        let features = cs.features();
        Self {
            cs,
            particles: 1000,
            steps: 128,
            iterations: 800,
            seed: 0,
            schedule: LrSchedule::default(),
            features,
            hidden: crate::policy::DEFAULT_HIDDEN,
            layers: crate::policy::DEFAULT_HIDDEN_LAYERS,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.cs.validate()?;
        self.schedule.validate()?;
        for (name, v) in [
            ("N", self.particles),
            ("M", self.steps),
            ("K", self.iterations),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return Err(Error::invalid(name, "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid<T>> {
        TimeGrid::uniform(T::zero(), self.cs.horizon, self.steps)
    }

    /// Freshly initialized network for this configuration.
    pub fn initial_policy(&self) -> Result<MlpPolicy<T>> {
        let d = self.cs.dim;
        let root = SeededStream::new(self.seed);
        MlpPolicy::standard(
            self.features.input_dim(d),
            d,
            self.hidden,
            self.layers,
            self.activation,
            &root.derive(LABEL_WEIGHTS),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow<T> {
    pub iteration: usize,
    /// Empirical cost before the update of this iteration.
    pub cost: T,
    pub lr: T,
}

impl<T: Real> HistoryRow<T> {
    pub const CSV_HEADER: &'static str = "iteration,cost,lr";

    pub fn csv_row(&self) -> String {
        format!("{},{:e},{:e}", self.iteration, self.cost, self.lr)
    }
}

/// Initial ensemble and Brownian increments of one training or evaluation
/// sample: positions and velocities uniform on `[0, 1)^d`.
pub fn sample_problem<T: Real>(
    stream: &SeededStream,
    n: usize,
    grid: &TimeGrid<T>,
    d: usize,
) -> Result<(Ensemble<T>, NoiseField<T>)> {
    let e0 = Ensemble::uniform(n, d, stream)?;
    let noise = NoiseField::sample(stream, n, d, grid);
    Ok((e0, noise))
}

/// Policy-gradient training with Adam. Every iteration draws a fresh initial
/// ensemble and fresh increments.
pub fn train<T: Real>(cfg: &TrainConfig<T>) -> Result<(MlpPolicy<T>, Vec<HistoryRow<T>>)> {
    train_with(cfg, |_| {})
}

/// As [`train`], calling `observer` after every iteration.
pub fn train_with<T: Real>(
    cfg: &TrainConfig<T>,
    mut observer: impl FnMut(&HistoryRow<T>),
) -> Result<(MlpPolicy<T>, Vec<HistoryRow<T>>)> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let mut policy = cfg.initial_policy()?;
    if policy.input_dim() != cfg.features.input_dim(cfg.cs.dim) {
        return Err(Error::invalid("features", "network input width mismatch"));
    }
    let mut adam = AdamState::new(policy.num_params());
    let root = SeededStream::new(cfg.seed).derive(LABEL_TRAIN);
    let mut history = Vec::with_capacity(cfg.iterations);
    for k in 0..cfg.iterations {
        let (e0, noise) = sample_problem(&root.derive(k as u64), cfg.particles, &grid, cfg.cs.dim)?;
        let cg = cost_and_grad_with_noise(&policy, &e0, &grid, &cfg.cs, noise)
            .map_err(|e| Error::non_finite(format!("iteration {k}: {e}")))?;
        let lr = lr_at(&cfg.schedule, k);
        adam_step(policy.params_mut(), &cg.grad, &mut adam, lr)?;
        let row = HistoryRow {
            iteration: k,
            cost: cg.cost.total,
            lr,
        };
        observer(&row);
        history.push(row);
    }
    Ok((policy, history))
}

/// Mean cost over the last `window` history rows.
pub fn trailing_mean<T: Real>(history: &[HistoryRow<T>], window: usize) -> Option<T> {
    if history.is_empty() || window == 0 {
        return None;
    }
    let tail = &history[history.len().saturating_sub(window)..];
    Some(tail.iter().map(|r| r.cost).sum::<T>() / T::from_count(tail.len()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<T> {
    pub mean: T,
    pub std_err: T,
    pub costs: Vec<CostBreakdown<T>>,
}

fn mean_and_stderr<T: Real>(xs: &[T]) -> (T, T) {
    let n = T::from_count(xs.len());
    let mean = xs.iter().copied().sum::<T>() / n;
    if xs.len() < 2 {
        return (mean, T::zero());
    }
    let ss: T = xs.iter().map(|&x| (x - mean) * (x - mean)).sum();
    let var = ss / T::from_count(xs.len() - 1);
    (mean, (var / n).sqrt())
}

/// Mean and standard error of the empirical cost over `reps` independent
/// samples with uniform initial ensembles.
pub fn evaluate_policy<T: Real, P: FeedbackPolicy<T> + ?Sized>(
    policy: &P,
    cs: &CsParams<T>,
    particles: usize,
    steps: usize,
    seed: u64,
    reps: usize,
) -> Result<Evaluation<T>> {
    evaluate_policy_with(policy, cs, particles, steps, seed, reps, |s, n, d| {
        Ensemble::uniform(n, d, s)
    })
}

/// As [`evaluate_policy`] with a caller-chosen initial ensemble.
pub fn evaluate_policy_with<T: Real, P: FeedbackPolicy<T> + ?Sized, I>(
    policy: &P,
    cs: &CsParams<T>,
    particles: usize,
    steps: usize,
    seed: u64,
    reps: usize,
    init: I,
) -> Result<Evaluation<T>>
where
    I: Fn(&SeededStream, usize, usize) -> Result<Ensemble<T>> + Sync,
{
    if reps == 0 {
        return Err(Error::invalid("reps", "must be at least 1"));
    }
    let grid = TimeGrid::uniform(T::zero(), cs.horizon, steps)?;
    let root = SeededStream::new(seed).derive(LABEL_EVAL);
    let costs = (0..reps)
        .into_par_iter()
        .map(|r| {
            let s = root.derive(r as u64);
            let e0 = init(&s, particles, cs.dim)?;
            let noise = NoiseField::sample(&s, e0.len(), cs.dim, &grid);
            let traj = rollout_with_noise(&e0, policy, &grid, cs, noise)?;
            empirical_cs_cost(&traj, cs.gamma1)
        })
        .collect::<Result<Vec<_>>>()?;
    let totals: Vec<T> = costs.iter().map(|c| c.total).collect();
    let (mean, std_err) = mean_and_stderr(&totals);
    Ok(Evaluation {
        mean,
        std_err,
        costs,
    })
}

/// The exact LQ feedback with `nu` held at the left endpoint of each cell of
/// a fixed grid.
#[derive(Debug, Clone)]
pub struct ProjectedLqFeedback<T> {
    grid: TimeGrid<T>,
    /// Gain `nu / (2 gamma1)` per node of `grid`.
    gains: Vec<T>,
}

impl<T: Real> ProjectedLqFeedback<T> {
    /// `grid` must be nested in the Riccati grid.
    pub fn new(ric: &RiccatiSolution<T>, gamma1: T, grid: &TimeGrid<T>) -> Result<Self> {
        if !(gamma1 > T::zero()) {
            return Err(Error::invalid("gamma1", "must be > 0"));
        }
        let held = project_piecewise_constant(ric.nu(), ric.grid(), grid)?;
        let r = ric.grid().refinement_of(grid)?;
        let two_g = T::lit(2.0) * gamma1;
        let gains = (0..=grid.steps())
            .map(|m| held[(m * r).min(held.len() - 1)] / two_g)
            .collect();
        Ok(Self {
            grid: grid.clone(),
            gains,
        })
    }

    pub fn gains(&self) -> &[T] {
        &self.gains
    }
}

impl<T: Real> FeedbackPolicy<T> for ProjectedLqFeedback<T> {
    fn controls(&self, t: T, grid: &TimeGrid<T>, e: &Ensemble<T>) -> Result<Vec<T>> {
        if grid.steps() != self.grid.steps() {
            return Err(Error::NotNested(format!(
                "feedback held on {} cells, simulation uses {}",
                self.grid.steps(),
                grid.steps()
            )));
        }
        let pos = ((t - grid.start()) / grid.step()).round();
        let m = pos
            .to_usize()
            .filter(|&m| m <= grid.steps())
            .ok_or(Error::OutOfSpan {
                t: t.as_f64(),
                start: grid.start().as_f64(),
                end: grid.end().as_f64(),
            })?;
        let gain = self.gains[m];
        let mean = e.mean_velocity();
        Ok(e.velocities()
            .chunks_exact(e.dim())
            .flat_map(|row| row.iter().zip(&mean).map(move |(&v, &mu)| -gain * (v - mu)))
            .collect())
    }
}

/// Supplies the feedback used at each time resolution of a convergence study.
pub trait ValueEstimator<T: Real>: Sync {
    type Policy: FeedbackPolicy<T>;
    fn policy_for(&self, grid: &TimeGrid<T>) -> Result<Self::Policy>;
}

/// Exact LQ feedback projected onto each grid.
#[derive(Debug, Clone)]
pub struct ProjectedLqEstimator<T> {
    pub ric: RiccatiSolution<T>,
    pub gamma1: T,
}

impl<T: Real> ValueEstimator<T> for ProjectedLqEstimator<T> {
    type Policy = ProjectedLqFeedback<T>;

    fn policy_for(&self, grid: &TimeGrid<T>) -> Result<Self::Policy> {
        ProjectedLqFeedback::new(&self.ric, self.gamma1, grid)
    }
}

/// Trains a fresh network at each resolution (expensive).
#[derive(Debug, Clone)]
pub struct TrainedEstimator<T> {
    pub base: TrainConfig<T>,
}

impl<T: Real> ValueEstimator<T> for TrainedEstimator<T> {
    type Policy = MlpPolicy<T>;

    fn policy_for(&self, grid: &TimeGrid<T>) -> Result<Self::Policy> {
        let cfg = TrainConfig {
            steps: grid.steps(),
            ..self.base.clone()
        };
        Ok(train(&cfg)?.0)
    }
}

/// Reference for the error column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference<T> {
    /// A known limit value.
    Exact(T),
    /// Differences to the next finer resolution in the sweep.
    Cauchy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub steps: Vec<usize>,
    pub particles: usize,
    pub reps: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow<T> {
    pub steps: usize,
    pub h: T,
    pub value: T,
    pub reference: T,
    pub abs_error: T,
    /// Monte-Carlo standard error of `value - reference`.
    pub std_err: T,
    /// Error within two standard errors of zero.
    pub below_noise: bool,
    /// Left out of the fit (zero error).
    pub excluded: bool,
}

impl<T: Real> ConvergenceRow<T> {
    pub const CSV_HEADER: &'static str = "M,h,value,reference,abs_error";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e}",
            self.steps, self.h, self.value, self.reference, self.abs_error
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport<T> {
    /// Sorted by `M` ascending.
    pub rows: Vec<ConvergenceRow<T>>,
    pub slope: T,
    pub intercept: T,
}

impl<T: Real> ConvergenceReport<T> {
    /// Rows, then the `slope,<value>` summary line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(ConvergenceRow::<T>::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s.push_str(&format!("slope,{:e}\n", self.slope));
        s
    }
}

/// Coarsens `fine` successively onto each entry of `steps` (descending,
/// first entry equal to `fine.steps()`), so every coarse increment is the sum
/// of the nested increments of the previous level.
pub fn nested_noise<T: Real>(fine: &NoiseField<T>, steps: &[usize]) -> Result<Vec<NoiseField<T>>> {
    let mut out: Vec<NoiseField<T>> = Vec::with_capacity(steps.len());
    for &m in steps {
        let prev = out.last().unwrap_or(fine);
        if m == 0 || !prev.steps().is_multiple_of(m) {
            return Err(Error::NotNested(format!(
                "{m} steps do not divide {}",
                prev.steps()
            )));
        }
        let level = if m == prev.steps() {
            prev.clone()
        } else {
            prev.coarsen(prev.steps() / m)?
        };
        out.push(level);
    }
    Ok(out)
}

/// Evaluates the estimator's feedback at every resolution in `cfg.steps` on
/// shared samples: each repetition draws one initial ensemble and one
/// Brownian path on the finest grid, coarsened level by level.
pub fn convergence_study<T: Real, E: ValueEstimator<T>>(
    cfg: &StudyConfig,
    cs: &CsParams<T>,
    reference: Reference<T>,
    estimator: &E,
) -> Result<ConvergenceReport<T>> {
    cs.validate()?;
    if cfg.reps == 0 || cfg.particles == 0 {
        return Err(Error::invalid(
            "reps",
            "reps and particles must be at least 1",
        ));
    }
    let mut levels = cfg.steps.clone();
    levels.sort_unstable_by(|a, b| b.cmp(a));
    levels.dedup();
    if levels.is_empty() || levels.contains(&0) {
        return Err(Error::invalid(
            "M_list",
            "needs at least one positive entry",
        ));
    }
    if let Reference::Exact(v) = reference {
        if !v.is_finite() {
            return Err(Error::invalid("reference", "must be finite"));
        }
    }
    if reference == Reference::Cauchy && levels.len() < 2 {
        return Err(Error::invalid(
            "M_list",
            "Cauchy differences need two resolutions",
        ));
    }
    let grids = levels
        .iter()
        .map(|&m| TimeGrid::uniform(T::zero(), cs.horizon, m))
        .collect::<Result<Vec<_>>>()?;
    let policies = grids
        .iter()
        .map(|g| estimator.policy_for(g))
        .collect::<Result<Vec<_>>>()?;
    let root = SeededStream::new(cfg.seed).derive(LABEL_STUDY);

    // values[r][level], levels descending in M
    let values = (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let s = root.derive(r as u64);
            let (e0, fine) = sample_problem(&s, cfg.particles, &grids[0], cs.dim)?;
            let noises = nested_noise(&fine, &levels)?;
            drop(fine);
            noises
                .into_iter()
                .zip(&grids)
                .zip(&policies)
                .map(|((noise, g), pol)| {
                    let traj = rollout_with_noise(&e0, pol, g, cs, noise)?;
                    Ok(empirical_cs_cost(&traj, cs.gamma1)?.total)
                })
                .collect::<Result<Vec<T>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let column = |l: usize| values.iter().map(|v| v[l]).collect::<Vec<T>>();
    let two = T::lit(2.0);
    let mut rows = Vec::with_capacity(levels.len());
    for (l, &m) in levels.iter().enumerate() {
        let (value, se_value) = mean_and_stderr(&column(l));
        let (reference, diff_se) = match reference {
            Reference::Exact(v) => (v, se_value),
            Reference::Cauchy => {
                if l == 0 {
                    continue;
                }
                let diffs: Vec<T> = values.iter().map(|v| v[l] - v[l - 1]).collect();
                (mean_and_stderr(&column(l - 1)).0, mean_and_stderr(&diffs).1)
            }
        };
        let abs_error = (value - reference).abs();
        rows.push(ConvergenceRow {
            steps: m,
            h: grids[l].step(),
            value,
            reference,
            abs_error,
            std_err: diff_se,
            below_noise: abs_error <= two * diff_se,
            excluded: abs_error == T::zero(),
        });
    }
    rows.reverse();
    let pairs: Vec<(T, T)> = rows
        .iter()
        .filter(|r| !r.excluded)
        .map(|r| (r.h, r.abs_error))
        .collect();
    let fit = fit_loglog_slope(&pairs)?;
    Ok(ConvergenceReport {
        rows,
        slope: fit.slope,
        intercept: fit.intercept,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit<T> {
    pub slope: T,
    pub intercept: T,
    /// Sum of squared residuals in log space.
    pub residual: T,
}

/// Least squares of `log err` on `log h`.
pub fn fit_loglog_slope<T: Real>(pairs: &[(T, T)]) -> Result<LogLogFit<T>> {
    if pairs.len() < 2 {
        return Err(Error::invalid("pairs", "need at least two points"));
    }
    if let Some((h, e)) = pairs
        .iter()
        .find(|(h, e)| !(*h > T::zero() && *e > T::zero()) || !h.is_finite() || !e.is_finite())
    {
        return Err(Error::invalid(
            "pairs",
            format!("entries must be positive and finite, got ({h}, {e})"),
        ));
    }
    let n = T::from_count(pairs.len());
    let xs: Vec<T> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<T> = pairs.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let sxx: T = xs.iter().map(|&x| (x - mx) * (x - mx)).sum();
    if sxx == T::zero() {
        return Err(Error::invalid("pairs", "all step sizes are equal"));
    }
    let sxy: T = xs.iter().zip(&ys).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    Ok(LogLogFit {
        slope,
        intercept,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::{exact_lq_value, solve_riccati, LqFeedbackPolicy, LqParams};

    fn lq_cs() -> CsParams<f64> {
        CsParams {
            phi: 1.0,
            beta: 0.0,
            sigma: 0.1,
            gamma1: 0.1,
            horizon: 1.0,
            dim: 1,
        }
    }

    fn ric() -> RiccatiSolution<f64> {
        let p = LqParams {
            phi: 1.0,
            gamma1: 0.1,
            sigma: 0.1,
            horizon: 1.0,
            dim: 1,
            var_v0: 1.0 / 12.0,
        };
        solve_riccati(&p, 4096).unwrap()
    }

    /// Expected empirical cost of N particles under gains `k_m` held on M
    /// cells: the mean-square deviation obeys a scalar linear recursion,
    /// scaled by (1 - 1/N) relative to the mean-field limit.
    fn discrete_value_oracle(gains: &[f64], steps: usize, n: usize) -> f64 {
        let (phi, sigma, gamma, h) = (1.0, 0.1, 0.1, 1.0 / steps as f64);
        let shrink = 1.0 - 1.0 / n as f64;
        let mut var = shrink / 12.0;
        let mut cost = 0.0;
        for &k in &gains[..steps] {
            cost += h * (1.0 + gamma * k * k) * var;
            let c = 1.0 - h * (k + phi);
            var = c * c * var + sigma * sigma * h * shrink;
        }
        cost + var
    }

    #[test]
    fn loglog_examples() {
        let f = fit_loglog_slope(&[(1.0f64, 2.0), (0.5, 1.0)]).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-15);
        let f = fit_loglog_slope(&[(1.0f64, 1.0), (0.25, 0.5)]).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-15);
        let f = fit_loglog_slope(&[(1.0, 3.0), (0.5, 1.5), (0.25, 0.75)]).unwrap();
        assert!(f.residual < 1e-28);
        assert!(fit_loglog_slope(&[(1.0, 0.0), (0.5, 1.0)]).is_err());
        assert!(fit_loglog_slope(&[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn planted_orders() {
        for order in [1.0, 0.5] {
            let pairs: Vec<(f64, f64)> = [4, 8, 16, 32, 64, 128]
                .iter()
                .map(|&m| {
                    let h = 1.0 / m as f64;
                    (h, 0.3 * h.powf(order))
                })
                .collect();
            let f = fit_loglog_slope(&pairs).unwrap();
            assert!((f.slope - order).abs() < 1e-12);
        }
    }

    #[test]
    fn nested_noise_sums() {
        let grid = TimeGrid::uniform(0.0, 1.0, 16).unwrap();
        let fine = NoiseField::<f64>::sample(&SeededStream::new(9), 5, 2, &grid);
        let levels = nested_noise(&fine, &[16, 8, 4]).unwrap();
        assert_eq!(levels[0], fine);
        for pair in levels.windows(2) {
            let (f, c) = (&pair[0], &pair[1]);
            for m in 0..c.steps() {
                for (k, z) in c.step(m).iter().enumerate() {
                    assert_eq!(*z, f.step(2 * m)[k] + f.step(2 * m + 1)[k]);
                }
            }
        }
        assert!(nested_noise(&fine, &[16, 6]).is_err());
    }

    #[test]
    fn single_iteration_training() {
        let mut cfg = TrainConfig::reference(lq_cs());
        cfg.particles = 16;
        cfg.steps = 4;
        cfg.iterations = 1;
        cfg.hidden = 8;
        let (pol, hist) = train(&cfg).unwrap();
        assert_eq!(hist.len(), 1);
        assert_ne!(pol, cfg.initial_policy().unwrap());
        let (_, again) = train(&cfg).unwrap();
        assert_eq!(hist, again);
    }

    #[test]
    fn training_reduces_cost() {
        let mut cfg = TrainConfig::reference(lq_cs());
        cfg.particles = 64;
        cfg.steps = 8;
        cfg.iterations = 150;
        cfg.hidden = 16;
        cfg.schedule.lr0 = 0.005;
        let (_, hist) = train(&cfg).unwrap();
        let first = hist[..20].iter().map(|r| r.cost).sum::<f64>() / 20.0;
        let last = trailing_mean(&hist, 20).unwrap();
        assert!(last < 0.8 * first, "{first} -> {last}");
    }

    #[test]
    fn flocked_noiseless_evaluation_is_zero() {
        let cs = CsParams {
            sigma: 0.0,
            ..lq_cs()
        };
        let pol = LqFeedbackPolicy::new(ric(), 0.1).unwrap();
        let ev = evaluate_policy_with(&pol, &cs, 8, 16, 3, 4, |s, n, d| {
            let x = Ensemble::<f64>::uniform(n, d, s)?.into_parts().0;
            Ensemble::new(d, x, vec![0.25; n * d])
        })
        .unwrap();
        assert_eq!((ev.mean, ev.std_err), (0.0, 0.0));
    }

    #[test]
    fn repetition_seeds_are_prefix_stable() {
        let pol = LqFeedbackPolicy::new(ric(), 0.1).unwrap();
        let one = evaluate_policy(&pol, &lq_cs(), 20, 8, 5, 1).unwrap();
        let two = evaluate_policy(&pol, &lq_cs(), 20, 8, 5, 2).unwrap();
        assert_eq!(one.costs[0], two.costs[0]);
    }

    #[test]
    fn projected_gains_follow_nodes() {
        let r = ric();
        let grid = TimeGrid::uniform(0.0, 1.0, 8).unwrap();
        let pol = ProjectedLqFeedback::new(&r, 0.1, &grid).unwrap();
        for m in 0..8 {
            assert_eq!(pol.gains()[m], r.nu()[m * 512] / 0.2);
        }
        assert!(
            ProjectedLqFeedback::new(&r, 0.1, &TimeGrid::uniform(0.0, 1.0, 3).unwrap()).is_err()
        );
    }

    #[test]
    fn simulation_matches_variance_recursion() {
        let r = ric();
        let cs = lq_cs();
        for steps in [4usize, 16] {
            let grid = TimeGrid::uniform(0.0, 1.0, steps).unwrap();
            let pol = ProjectedLqFeedback::new(&r, 0.1, &grid).unwrap();
            let n = 400;
            let ev = evaluate_policy(&pol, &cs, n, steps, 17, 200).unwrap();
            let oracle = discrete_value_oracle(pol.gains(), steps, n);
            let z = (ev.mean - oracle) / ev.std_err;
            assert!(
                z.abs() < 4.0,
                "M={steps}: mc {} oracle {oracle} z {z}",
                ev.mean
            );
        }
    }

    #[test]
    fn oracle_limit_is_exact_value() {
        // the recursion converges to the continuous value as M grows
        let r = ric();
        let p = LqParams {
            phi: 1.0,
            gamma1: 0.1,
            sigma: 0.1,
            horizon: 1.0,
            dim: 1,
            var_v0: 1.0 / 12.0,
        };
        let exact = exact_lq_value(&p, &r).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 4096).unwrap();
        let pol = ProjectedLqFeedback::new(&r, 0.1, &grid).unwrap();
        let v = discrete_value_oracle(pol.gains(), 4096, usize::MAX);
        assert!((v - exact).abs() < 2e-5, "{v} vs {exact}");
    }

    #[test]
    fn convergence_errors_shrink() {
        let cs = lq_cs();
        let r = ric();
        let exact = exact_lq_value(
            &LqParams {
                phi: 1.0,
                gamma1: 0.1,
                sigma: 0.1,
                horizon: 1.0,
                dim: 1,
                var_v0: 1.0 / 12.0,
            },
            &r,
        )
        .unwrap();
        let cfg = StudyConfig {
            steps: vec![32, 4, 16, 8],
            particles: 2000,
            reps: 10,
            seed: 1,
        };
        let est = ProjectedLqEstimator {
            ric: r,
            gamma1: 0.1,
        };
        let rep = convergence_study(&cfg, &cs, Reference::Exact(exact), &est).unwrap();
        let ms: Vec<usize> = rep.rows.iter().map(|r| r.steps).collect();
        assert_eq!(ms, vec![4, 8, 16, 32]);
        for w in rep.rows.windows(2) {
            assert!(
                w[1].abs_error <= w[0].abs_error || w[1].below_noise,
                "{:?}",
                rep.rows
            );
        }
        assert!(rep.slope.is_finite());
        assert!(rep
            .to_csv()
            .starts_with("M,h,value,reference,abs_error\n4,"));
    }

    #[test]
    fn cauchy_reference_rows() {
        let cs = lq_cs();
        let cfg = StudyConfig {
            steps: vec![4, 8, 16],
            particles: 50,
            reps: 3,
            seed: 2,
        };
        let est = ProjectedLqEstimator {
            ric: ric(),
            gamma1: 0.1,
        };
        let rep = convergence_study(&cfg, &cs, Reference::Cauchy, &est).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert_eq!(rep.rows[0].reference, rep.rows[1].value);
    }
}
