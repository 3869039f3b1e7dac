//! Exact linear-quadratic benchmark for the `beta = 0` Cucker–Smale problem.
//!
//! With no distance decay the velocity dynamics are linear in the deviation
//! `w = v - E[v]`, and the mean-field problem decouples into `d` scalar LQ
//! problems. The value `p(t) w^2 + s(t)` with `nu = 2p` gives
//!
//! ```text
//! nu' - 2 Phi nu - nu^2 / (2 gamma1) + 2 = 0,   nu(T) = 2
//! alpha*(t, v) = -(nu(t) / (2 gamma1)) (v - E[v_t])
//! V = d * ( nu(0)/2 * var_v0 + sigma^2/2 * int_0^T nu(t) dt )
//! ```

use crate::dynamics::FeedbackPolicy;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::scalar::Real;

pub const DEFAULT_RICCATI_STEPS: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct LqParams<T> {
    pub phi: T,
    pub gamma1: T,
    pub sigma: T,
    pub horizon: T,
    pub dim: usize,
    /// Per-component variance of the initial velocities (1/12 for uniform on [0, 1)).
    pub var_v0: T,
}

impl<T: Real> LqParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma1 > T::zero()) {
            return Err(Error::invalid(
                "gamma1",
                format!("must be > 0, got {}", self.gamma1),
            ));
        }
        if !(self.horizon > T::zero()) {
            return Err(Error::invalid(
                "T",
                format!("must be > 0, got {}", self.horizon),
            ));
        }
        if self.dim == 0 {
            return Err(Error::invalid("d", "must be at least 1"));
        }
        if !(self.var_v0 >= T::zero()) {
            return Err(Error::invalid("var_v0", "must be >= 0"));
        }
        if !(self.phi >= T::zero()) || !(self.sigma >= T::zero()) {
            return Err(Error::invalid("Phi/sigma", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution<T> {
    grid: TimeGrid<T>,
    nu: Vec<T>,
}

impl<T: Real> RiccatiSolution<T> {
    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn nu(&self) -> &[T] {
        &self.nu
    }

    /// `nu(t)` by linear interpolation between grid nodes.
    pub fn at(&self, t: T) -> Result<T> {
        let g = &self.grid;
        if !g.contains(t) {
            return Err(Error::OutOfSpan {
                t: t.as_f64(),
                start: g.start().as_f64(),
                end: g.end().as_f64(),
            });
        }
        let pos = (t - g.start()) / g.step();
        let i = pos.floor().to_usize().unwrap_or(0).min(g.steps() - 1);
        let w = (t - g.node(i)) / g.step();
        if w == T::zero() {
            return Ok(self.nu[i]);
        }
        Ok(self.nu[i] + w * (self.nu[i + 1] - self.nu[i]))
    }

    /// Trapezoid rule for `int nu dt` over the grid.
    pub fn integral(&self) -> T {
        let h = self.grid.step();
        let half = T::lit(0.5);
        self.nu
            .windows(2)
            .map(|w| half * h * (w[0] + w[1]))
            .fold(T::zero(), |a, b| a + b)
    }
}

/// Right-hand side of `nu' = 2 Phi nu + nu^2 / (2 gamma1) - 2`.
fn riccati_rhs<T: Real>(nu: T, phi: T, gamma1: T) -> T {
    let two = T::lit(2.0);
    two * phi * nu + nu * nu / (two * gamma1) - two
}

/// Integrates the Riccati equation backward from `nu(T) = 2` with the
/// classical fourth-order Runge–Kutta method on a uniform grid.
pub fn solve_riccati<T: Real>(p: &LqParams<T>, steps: usize) -> Result<RiccatiSolution<T>> {
    if !(p.gamma1 > T::zero()) {
        return Err(Error::invalid(
            "gamma1",
            format!("must be > 0, got {}", p.gamma1),
        ));
    }
    let grid = TimeGrid::uniform(T::zero(), p.horizon, steps)?;
    let h = -grid.step();
    let (two, six) = (T::lit(2.0), T::lit(6.0));
    let half = T::lit(0.5);
    let f = |nu: T| riccati_rhs(nu, p.phi, p.gamma1);

    let mut nu = vec![T::zero(); steps + 1];
    nu[steps] = two;
    for i in (0..steps).rev() {
        let y = nu[i + 1];
        let k1 = f(y);
        let k2 = f(y + half * h * k1);
        let k3 = f(y + half * h * k2);
        let k4 = f(y + h * k3);
        let next = y + h / six * (k1 + two * k2 + two * k3 + k4);
        if !next.is_finite() {
            return Err(Error::non_finite(format!(
                "Riccati solution blew up at t = {}",
                grid.node(i)
            )));
        }
        nu[i] = next;
    }
    Ok(RiccatiSolution { grid, nu })
}

/// Optimal feedback `-(nu(t) / (2 gamma1)) (v - mean_v)`.
pub fn exact_lq_feedback<T: Real>(
    t: T,
    v: &[T],
    mean_v: &[T],
    ric: &RiccatiSolution<T>,
    gamma1: T,
) -> Result<Vec<T>> {
    if !(gamma1 > T::zero()) {
        return Err(Error::invalid("gamma1", "must be > 0"));
    }
    if v.len() != mean_v.len() {
        return Err(Error::ShapeMismatch {
            what: "mean velocity",
            expected: v.len(),
            got: mean_v.len(),
        });
    }
    let gain = ric.at(t)? / (T::lit(2.0) * gamma1);
    Ok(v.iter()
        .zip(mean_v)
        .map(|(&vi, &mi)| -gain * (vi - mi))
        .collect())
}

/// Exact mean-field value under the optimal feedback.
pub fn exact_lq_value<T: Real>(p: &LqParams<T>, ric: &RiccatiSolution<T>) -> Result<T> {
    p.validate()?;
    if ric.grid().end() != p.horizon {
        return Err(Error::invalid("ric", "horizon does not match parameters"));
    }
    let half = T::lit(0.5);
    let per_component = half * ric.nu()[0] * p.var_v0 + half * p.sigma * p.sigma * ric.integral();
    if !per_component.is_finite() {
        return Err(Error::non_finite("LQ value"));
    }
    Ok(T::from_count(p.dim) * per_component)
}

/// [`exact_lq_feedback`] applied to a whole ensemble, with `nu` read off
/// the Riccati solution at each node time.
#[derive(Debug, Clone)]
pub struct LqFeedbackPolicy<T> {
    ric: RiccatiSolution<T>,
    gamma1: T,
}

impl<T: Real> LqFeedbackPolicy<T> {
    pub fn new(ric: RiccatiSolution<T>, gamma1: T) -> Result<Self> {
        if !(gamma1 > T::zero()) {
            return Err(Error::invalid("gamma1", "must be > 0"));
        }
        Ok(Self { ric, gamma1 })
    }
}

impl<T: Real> FeedbackPolicy<T> for LqFeedbackPolicy<T> {
    fn controls(&self, t: T, _grid: &TimeGrid<T>, e: &Ensemble<T>) -> Result<Vec<T>> {
        let mean = e.mean_velocity();
        let gain = self.ric.at(t)? / (T::lit(2.0) * self.gamma1);
        Ok(e.velocities()
            .chunks_exact(e.dim())
            .flat_map(|row| row.iter().zip(&mean).map(move |(&v, &m)| -gain * (v - m)))
            .collect())
    }
}
