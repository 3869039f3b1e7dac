//! Empirical Cucker–Smale objective
//!
//! ```text
//! J = (1/N) sum_i [ sum_{m<M} h (|v_m^i - vbar_m|^2 + gamma1 |a_m^i|^2) + |v_M^i - vbar_M|^2 ]
//! ```
//!
//! with `vbar_m` the empirical mean velocity at node `m`. Running terms use
//! left endpoints.

use crate::dynamics::Trajectory;
use crate::ensemble::{mean_sq_deviation, Ensemble};
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostBreakdown<T> {
    pub total: T,
    /// `sum_m h (1/N) sum_i |v - vbar|^2`
    pub running_state: T,
    /// `sum_m h gamma1 (1/N) sum_i |a|^2`
    pub running_control: T,
    pub terminal: T,
}

impl<T: Real> CostBreakdown<T> {
    pub const CSV_HEADER: &'static str = "total,running_state,running_control,terminal";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.total, self.running_state, self.running_control, self.terminal
        )
    }
}

/// Running contribution of a single cell: `(state part, control part)`.
pub fn cell_cost<T: Real>(e: &Ensemble<T>, controls: &[T], h: T, gamma1: T) -> (T, T) {
    let mean_v = e.mean_velocity();
    let state = h * mean_sq_deviation(e.velocities(), e.dim(), &mean_v);
    let effort = controls
        .iter()
        .map(|&a| a * a)
        .fold(T::zero(), |s, z| s + z);
    let control = h * gamma1 * (effort / T::from_count(e.len()));
    (state, control)
}

/// `(1/N) sum_i |v_i - vbar|^2` at the final node.
pub fn terminal_cost<T: Real>(e: &Ensemble<T>) -> T {
    let mean_v = e.mean_velocity();
    mean_sq_deviation(e.velocities(), e.dim(), &mean_v)
}

pub(crate) fn cs_cost_parts<T: Real>(
    states: &[Ensemble<T>],
    controls: &[Vec<T>],
    h: T,
    gamma1: T,
) -> Result<CostBreakdown<T>> {
    if states.len() != controls.len() + 1 {
        return Err(Error::ShapeMismatch {
            what: "trajectory states",
            expected: controls.len() + 1,
            got: states.len(),
        });
    }
    let mut running_state = T::zero();
    let mut running_control = T::zero();
    for (e, a) in states.iter().zip(controls) {
        if a.len() != e.len() * e.dim() {
            return Err(Error::ShapeMismatch {
                what: "trajectory controls",
                expected: e.len() * e.dim(),
                got: a.len(),
            });
        }
        let (s, c) = cell_cost(e, a, h, gamma1);
        running_state = running_state + s;
        running_control = running_control + c;
    }
    let terminal = terminal_cost(states.last().expect("at least one state"));
    Ok(CostBreakdown {
        total: running_state + running_control + terminal,
        running_state,
        running_control,
        terminal,
    })
}

/// Cost of a simulated path.
pub fn empirical_cs_cost<T: Real>(traj: &Trajectory<T>, gamma1: T) -> Result<CostBreakdown<T>> {
    if traj.states.len() != traj.grid.steps() + 1 {
        return Err(Error::ShapeMismatch {
            what: "trajectory states",
            expected: traj.grid.steps() + 1,
            got: traj.states.len(),
        });
    }
    cs_cost_parts(&traj.states, &traj.controls, traj.grid.step(), gamma1)
}
