use crate::error::{Error, Result};
use crate::scalar::Real;

/// Uniform partition `t0 = t_0 < t_1 < ... < t_M = T`.
///
/// Controls in the discrete problem are held constant on each cell
/// `[t_m, t_{m+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid<T> {
    start: T,
    end: T,
    steps: usize,
    step: T,
    nodes: Vec<T>,
}

impl<T: Real> TimeGrid<T> {
    /// Builds the grid with `h = (end - start) / steps`. Node `m` is
    /// `start + m h`, except the last node which is pinned to `end`.
    pub fn uniform(start: T, end: T, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidGrid("step count must be at least 1".into()));
        }
        if !start.is_finite() || !end.is_finite() {
            return Err(Error::InvalidGrid("endpoints must be finite".into()));
        }
        if end <= start {
            return Err(Error::InvalidGrid(format!(
                "end time {end} must exceed start time {start}"
            )));
        }
        let step = (end - start) / T::from_count(steps);
        let mut nodes: Vec<T> = (0..=steps)
            .map(|m| start + T::from_count(m) * step)
            .collect();
        nodes[steps] = end;
        Ok(Self {
            start,
            end,
            steps,
            step,
            nodes,
        })
    }

    pub fn start(&self) -> T {
        self.start
    }

    pub fn end(&self) -> T {
        self.end
    }

    /// Number of cells `M`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Cell width `h`.
    pub fn step(&self) -> T {
        self.step
    }

    pub fn nodes(&self) -> &[T] {
        &self.nodes
    }

    pub fn node(&self, m: usize) -> T {
        self.nodes[m]
    }

    /// `(t - start) / (end - start)`, the time feature fed to policies.
    pub fn normalized(&self, t: T) -> T {
        (t - self.start) / (self.end - self.start)
    }

    pub fn contains(&self, t: T) -> bool {
        t >= self.start && t <= self.end
    }

    /// Number of fine cells per cell of `coarse`, if `coarse` nodes are a
    /// subset of `self`'s nodes.
    pub fn refinement_of(&self, coarse: &TimeGrid<T>) -> Result<usize> {
        if self.start != coarse.start || self.end != coarse.end {
            return Err(Error::NotNested(format!(
                "spans [{}, {}] and [{}, {}] differ",
                coarse.start, coarse.end, self.start, self.end
            )));
        }
        if !self.steps.is_multiple_of(coarse.steps) {
            return Err(Error::NotNested(format!(
                "{} fine steps are not a multiple of {} coarse steps",
                self.steps, coarse.steps
            )));
        }
        Ok(self.steps / coarse.steps)
    }
}

/// Convenience wrapper matching the operation name used throughout the docs.
pub fn make_uniform_grid<T: Real>(start: T, end: T, steps: usize) -> Result<TimeGrid<T>> {
    TimeGrid::uniform(start, end, steps)
}
