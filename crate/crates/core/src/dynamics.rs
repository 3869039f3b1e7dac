//! Cucker–Smale particle dynamics under piecewise-constant feedback.
//!
//! One explicit Euler–Maruyama step of the `N`-particle system reads
//!
//! ```text
//! x_i' = x_i + h v_i
//! v_i' = v_i + h (a_i + (1/N) sum_j Phi (v_j - v_i) / (1 + |x_j - x_i|^2)^beta) + sigma dW_i
//! ```
//!
//! with every drift evaluated on the pre-step ensemble.

use rayon::prelude::*;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::rng::{Purpose, SeededStream};
use crate::scalar::Real;

/// Rows per parallel work item. Fixed so that results never depend on the
/// number of worker threads.
pub(crate) const PAR_ROWS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct CsParams<T> {
    pub phi: T,
    pub beta: T,
    pub sigma: T,
    pub gamma1: T,
    pub horizon: T,
    pub dim: usize,
}

impl<T: Real> CsParams<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, val) in [
            ("Phi", self.phi),
            ("beta", self.beta),
            ("sigma", self.sigma),
            ("gamma1", self.gamma1),
        ] {
            if !(val >= T::zero()) || !val.is_finite() {
                return Err(Error::invalid(
                    name,
                    format!("must be finite and >= 0, got {val}"),
                ));
            }
        }
        if !(self.horizon > T::zero()) {
            return Err(Error::invalid("T", "horizon must be > 0"));
        }
        if self.dim == 0 {
            return Err(Error::invalid("d", "dimension must be at least 1"));
        }
        Ok(())
    }

    pub fn features(&self) -> FeatureSet {
        FeatureSet::for_beta(self.beta)
    }
}

/// Inputs fed to a learned feedback map at each node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSet {
    /// `(t/T, v)`, input dimension `d + 1`.
    Velocity,
    /// `(t/T, x, v)`, input dimension `2d + 1`.
    PositionVelocity,
}

impl FeatureSet {
    /// Positions only matter when the kernel decays with distance.
    pub fn for_beta<T: Real>(beta: T) -> Self {
        if beta == T::zero() {
            FeatureSet::Velocity
        } else {
            FeatureSet::PositionVelocity
        }
    }

    pub fn input_dim(self, d: usize) -> usize {
        match self {
            FeatureSet::Velocity => d + 1,
            FeatureSet::PositionVelocity => 2 * d + 1,
        }
    }

    pub fn from_input_dim(input: usize, d: usize) -> Option<Self> {
        if input == d + 1 {
            Some(FeatureSet::Velocity)
        } else if input == 2 * d + 1 {
            Some(FeatureSet::PositionVelocity)
        } else {
            None
        }
    }

    /// Offset of the position block within a feature row, if present.
    pub fn position_offset(self) -> Option<usize> {
        match self {
            FeatureSet::Velocity => None,
            FeatureSet::PositionVelocity => Some(1),
        }
    }

    pub fn velocity_offset(self, d: usize) -> usize {
        match self {
            FeatureSet::Velocity => 1,
            FeatureSet::PositionVelocity => 1 + d,
        }
    }

    /// Row-major `N × input_dim` feature matrix for the ensemble at time `t`.
    pub fn batch<T: Real>(self, grid: &TimeGrid<T>, t: T, e: &Ensemble<T>) -> Vec<T> {
        let d = e.dim();
        let width = self.input_dim(d);
        let tn = grid.normalized(t);
        let mut out = vec![T::zero(); e.len() * width];
        for (i, row) in out.chunks_exact_mut(width).enumerate() {
            row[0] = tn;
            if let Some(off) = self.position_offset() {
                row[off..off + d].copy_from_slice(e.position(i));
            }
            let off = self.velocity_offset(d);
            row[off..off + d].copy_from_slice(e.velocity(i));
        }
        out
    }
}

/// Distance decay `(1 + r2)^(-beta)` expressed through `inv = 1 / (1 + r2)`,
/// with the exponent classified once so pair loops stay branch-free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Decay<T> {
    Flat,
    Linear,
    Int(i32),
    Frac(T),
}

impl<T: Real> Decay<T> {
    pub(crate) fn new(beta: T) -> Self {
        if beta == T::zero() {
            Self::Flat
        } else if beta == T::one() {
            Self::Linear
        } else if beta.fract() == T::zero() && beta < T::lit(64.0) {
            Self::Int(beta.to_i32().unwrap_or(0))
        } else {
            Self::Frac(beta)
        }
    }

    #[inline(always)]
    pub(crate) fn weight(self, inv: T) -> T {
        match self {
            Self::Flat => T::one(),
            Self::Linear => inv,
            Self::Int(k) => inv.powi(k),
            Self::Frac(b) => inv.powf(b),
        }
    }
}

#[inline]
pub(crate) fn squared_distance<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&p, &q)| (q - p) * (q - p))
        .fold(T::zero(), |s, z| s + z)
}

/// Alignment kernel `Phi (vp - v) / (1 + |xp - x|^2)^beta`.
pub fn cs_kernel<T: Real>(x: &[T], v: &[T], xp: &[T], vp: &[T], phi: T, beta: T) -> Vec<T> {
    let inv = T::one() / (T::one() + squared_distance(x, xp));
    let w = Decay::new(beta).weight(inv);
    v.iter()
        .zip(vp)
        .map(|(&a, &b)| phi * (w * (b - a)))
        .collect()
}

/// `sum_j w(1 / (1 + (x_j - xi)^2)) (v_j - vi)` for scalar positions.
#[inline(always)]
fn pair_sum_scalar<T: Real>(xi: T, vi: T, pos: &[T], vel: &[T], w: impl Fn(T) -> T) -> T {
    let mut acc = T::zero();
    for (&xj, &vj) in pos.iter().zip(vel) {
        let dx = xj - xi;
        acc = acc + w(T::one() / (T::one() + dx * dx)) * (vj - vi);
    }
    acc
}

/// Mean-field interaction felt by a particle at `(xi, vi)`, written into `out`.
///
/// `pos` and `vel` are strided views of the whole sample: particle `j`'s
/// position starts at `pos[j * stride]` and its velocity at
/// `vel[j * stride]`. When `beta = 0` the average collapses to
/// `Phi (mean_v - v_i)`, which is what is evaluated.
#[allow(clippy::too_many_arguments)]
pub(crate) fn interaction_at<T: Real>(
    xi: &[T],
    vi: &[T],
    pos: &[T],
    vel: &[T],
    stride: usize,
    n: usize,
    phi: T,
    beta: T,
    mean_v: &[T],
    out: &mut [T],
) {
    let d = vi.len();
    let decay = Decay::new(beta);
    if decay == Decay::Flat {
        for ((o, &m), &v) in out.iter_mut().zip(mean_v).zip(vi) {
            *o = phi * (m - v);
        }
        return;
    }
    let nn = T::from_count(n);
    if d == 1 && stride == 1 {
        let (pos, vel) = (&pos[..n], &vel[..n]);
        let acc = match decay {
            Decay::Linear => pair_sum_scalar(xi[0], vi[0], pos, vel, |inv| inv),
            Decay::Int(k) => pair_sum_scalar(xi[0], vi[0], pos, vel, move |inv: T| inv.powi(k)),
            _ => pair_sum_scalar(xi[0], vi[0], pos, vel, move |inv: T| decay.weight(inv)),
        };
        out[0] = phi * acc / nn;
        return;
    }
    out.iter_mut().for_each(|o| *o = T::zero());
    for j in 0..n {
        let xj = &pos[j * stride..j * stride + d];
        let vj = &vel[j * stride..j * stride + d];
        let w = decay.weight(T::one() / (T::one() + squared_distance(xi, xj)));
        for c in 0..d {
            out[c] = out[c] + w * (vj[c] - vi[c]);
        }
    }
    out.iter_mut().for_each(|o| *o = phi * *o / nn);
}

/// Interaction term for every particle, `N × d` row-major.
pub fn interaction<T: Real>(e: &Ensemble<T>, phi: T, beta: T) -> Vec<T> {
    let (n, d) = (e.len(), e.dim());
    let mean_v = e.mean_velocity();
    let mut out = vec![T::zero(); n * d];
    let fill = |(blk, rows): (usize, &mut [T])| {
        for (r, row) in rows.chunks_exact_mut(d).enumerate() {
            let i = blk * PAR_ROWS + r;
            interaction_at(
                e.position(i),
                e.velocity(i),
                e.positions(),
                e.velocities(),
                d,
                n,
                phi,
                beta,
                &mean_v,
                row,
            );
        }
    };
    if beta == T::zero() {
        out.chunks_mut(PAR_ROWS * d).enumerate().for_each(fill);
    } else {
        out.par_chunks_mut(PAR_ROWS * d).enumerate().for_each(fill);
    }
    out
}

/// Velocity drift `a_i + (1/N) sum_j kernel(i, j)` of particle `i`.
pub fn cs_drift<T: Real>(e: &Ensemble<T>, i: usize, a_i: &[T], p: &CsParams<T>) -> Result<Vec<T>> {
    if i >= e.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            len: e.len(),
        });
    }
    if a_i.len() != e.dim() {
        return Err(Error::ShapeMismatch {
            what: "control",
            expected: e.dim(),
            got: a_i.len(),
        });
    }
    let d = e.dim();
    let mean_v = if p.beta == T::zero() {
        e.mean_velocity()
    } else {
        Vec::new()
    };
    let mut out = vec![T::zero(); d];
    interaction_at(
        e.position(i),
        e.velocity(i),
        e.positions(),
        e.velocities(),
        d,
        e.len(),
        p.phi,
        p.beta,
        &mean_v,
        &mut out,
    );
    for (o, &a) in out.iter_mut().zip(a_i) {
        *o = a + *o;
    }
    Ok(out)
}

/// One synchronous Euler–Maruyama step. `noise` holds the Brownian
/// increments `dW_i ~ N(0, h)` for this step.
pub fn cs_euler_step<T: Real>(
    e: &Ensemble<T>,
    controls: &[T],
    p: &CsParams<T>,
    h: T,
    noise: &[T],
) -> Result<Ensemble<T>> {
    let nd = e.len() * e.dim();
    if controls.len() != nd {
        return Err(Error::ShapeMismatch {
            what: "controls",
            expected: nd,
            got: controls.len(),
        });
    }
    if noise.len() != nd {
        return Err(Error::ShapeMismatch {
            what: "noise",
            expected: nd,
            got: noise.len(),
        });
    }
    if !(h > T::zero()) {
        return Err(Error::invalid("h", "step must be > 0"));
    }
    let inter = interaction(e, p.phi, p.beta);
    let x: Vec<T> = e
        .positions()
        .iter()
        .zip(e.velocities())
        .map(|(&x, &v)| x + h * v)
        .collect();
    let v: Vec<T> = e
        .velocities()
        .iter()
        .zip(controls.iter().zip(&inter))
        .zip(noise)
        .map(|((&v, (&a, &i)), &dw)| v + h * (a + i) + p.sigma * dw)
        .collect();
    if let Some(k) = x.iter().chain(&v).position(|z| !z.is_finite()) {
        return Err(Error::non_finite(format!(
            "Euler step, particle {}",
            (k % nd) / e.dim()
        )));
    }
    Ok(Ensemble::from_parts_unchecked(e.dim(), x, v))
}

/// Brownian increments for every step, particle and component, stored
/// `steps × N × d` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseField<T> {
    steps: usize,
    len: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Real> NoiseField<T> {
    pub fn zeros(steps: usize, len: usize, dim: usize) -> Self {
        Self {
            steps,
            len,
            dim,
            data: vec![T::zero(); steps * len * dim],
        }
    }

    pub fn from_vec(steps: usize, len: usize, dim: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != steps * len * dim {
            return Err(Error::ShapeMismatch {
                what: "noise field",
                expected: steps * len * dim,
                got: data.len(),
            });
        }
        Ok(Self {
            steps,
            len,
            dim,
            data,
        })
    }

    /// Draws `dW ~ N(0, h)` for each cell of `grid` from the Brownian
    /// purpose of `stream`.
    pub fn sample(stream: &SeededStream, len: usize, dim: usize, grid: &TimeGrid<T>) -> Self {
        let steps = grid.steps();
        let scale = grid.step().sqrt();
        let mut data = vec![T::zero(); steps * len * dim];
        data.par_chunks_mut(len * dim)
            .enumerate()
            .for_each(|(m, block)| {
                for (i, row) in block.chunks_exact_mut(dim).enumerate() {
                    stream.fill_normal(Purpose::Brownian, i as u64, m as u32, scale, row);
                }
            });
        Self {
            steps,
            len,
            dim,
            data,
        }
    }

    /// Increments on a grid with `steps / factor` cells: each coarse
    /// increment is the sum of the `factor` fine increments it covers. For
    /// `factor = 2` this is exactly `fine[2m] + fine[2m + 1]`.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(Error::NotNested(format!(
                "cannot coarsen {} steps by {factor}",
                self.steps
            )));
        }
        let steps = self.steps / factor;
        let block = self.len * self.dim;
        let mut data = vec![T::zero(); steps * block];
        for (m, out) in data.chunks_exact_mut(block).enumerate() {
            out.copy_from_slice(self.step(m * factor));
            for k in 1..factor {
                for (o, &z) in out.iter_mut().zip(self.step(m * factor + k)) {
                    *o = *o + z;
                }
            }
        }
        Ok(Self {
            steps,
            len: self.len,
            dim: self.dim,
            data,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self, m: usize) -> &[T] {
        let block = self.len * self.dim;
        &self.data[m * block..(m + 1) * block]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

/// A feedback control evaluated once per node on the whole ensemble.
pub trait FeedbackPolicy<T: Real>: Sync {
    /// Controls for every particle at node time `t`, `N × d` row-major.
    fn controls(&self, t: T, grid: &TimeGrid<T>, e: &Ensemble<T>) -> Result<Vec<T>>;
}

/// The uncontrolled system.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPolicy;

impl<T: Real> FeedbackPolicy<T> for ZeroPolicy {
    fn controls(&self, _t: T, _grid: &TimeGrid<T>, e: &Ensemble<T>) -> Result<Vec<T>> {
        Ok(vec![T::zero(); e.len() * e.dim()])
    }
}

impl<T: Real, P: FeedbackPolicy<T> + ?Sized> FeedbackPolicy<T> for &P {
    fn controls(&self, t: T, grid: &TimeGrid<T>, e: &Ensemble<T>) -> Result<Vec<T>> {
        (**self).controls(t, grid, e)
    }
}

/// States, piecewise-constant controls and noise of one simulated path.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub grid: TimeGrid<T>,
    /// `M + 1` ensembles, `states[0]` is the initial one.
    pub states: Vec<Ensemble<T>>,
    /// `controls[m]` (`N × d`) is applied on `[t_m, t_{m+1})`.
    pub controls: Vec<Vec<T>>,
    pub noise: NoiseField<T>,
}

/// Simulates the system from `e0` under `policy`, drawing Brownian
/// increments from `stream`.
pub fn rollout<T: Real, P: FeedbackPolicy<T> + ?Sized>(
    e0: &Ensemble<T>,
    policy: &P,
    grid: &TimeGrid<T>,
    p: &CsParams<T>,
    stream: &SeededStream,
) -> Result<Trajectory<T>> {
    let noise = NoiseField::sample(stream, e0.len(), e0.dim(), grid);
    rollout_with_noise(e0, policy, grid, p, noise)
}

/// As [`rollout`] with caller-supplied increments.
pub fn rollout_with_noise<T: Real, P: FeedbackPolicy<T> + ?Sized>(
    e0: &Ensemble<T>,
    policy: &P,
    grid: &TimeGrid<T>,
    p: &CsParams<T>,
    noise: NoiseField<T>,
) -> Result<Trajectory<T>> {
    p.validate()?;
    if e0.dim() != p.dim {
        return Err(Error::ShapeMismatch {
            what: "ensemble dimension",
            expected: p.dim,
            got: e0.dim(),
        });
    }
    if noise.steps() != grid.steps() || noise.len() != e0.len() || noise.dim() != e0.dim() {
        return Err(Error::ShapeMismatch {
            what: "noise field",
            expected: grid.steps() * e0.len() * e0.dim(),
            got: noise.as_slice().len(),
        });
    }
    let nd = e0.len() * e0.dim();
    let mut states = Vec::with_capacity(grid.steps() + 1);
    let mut controls = Vec::with_capacity(grid.steps());
    states.push(e0.clone());
    for m in 0..grid.steps() {
        let cur = &states[m];
        let a = policy.controls(grid.node(m), grid, cur)?;
        if a.len() != nd {
            return Err(Error::ShapeMismatch {
                what: "policy output",
                expected: nd,
                got: a.len(),
            });
        }
        let next = cs_euler_step(cur, &a, p, grid.step(), noise.step(m))?;
        controls.push(a);
        states.push(next);
    }
    Ok(Trajectory {
        grid: grid.clone(),
        states,
        controls,
        noise,
    })
}

/// Controls chosen at the nodes of `coarse` and held for `substeps` Euler
/// steps each, so the state moves on a grid `substeps` times finer than the
/// decisions. `noise` lives on the fine grid; the returned trajectory too,
/// with each held control repeated.
pub fn rollout_held<T: Real, P: FeedbackPolicy<T> + ?Sized>(
    e0: &Ensemble<T>,
    policy: &P,
    coarse: &TimeGrid<T>,
    substeps: usize,
    p: &CsParams<T>,
    noise: NoiseField<T>,
) -> Result<Trajectory<T>> {
    p.validate()?;
    if substeps == 0 {
        return Err(Error::invalid("substeps", "must be at least 1"));
    }
    let fine = TimeGrid::uniform(coarse.start(), coarse.end(), coarse.steps() * substeps)?;
    if noise.steps() != fine.steps()
        || noise.len() != e0.len()
        || noise.dim() != e0.dim()
        || e0.dim() != p.dim
    {
        return Err(Error::ShapeMismatch {
            what: "noise field on the fine grid",
            expected: fine.steps() * e0.len() * p.dim,
            got: noise.as_slice().len(),
        });
    }
    let nd = e0.len() * e0.dim();
    let mut states = Vec::with_capacity(fine.steps() + 1);
    let mut controls: Vec<Vec<T>> = Vec::with_capacity(fine.steps());
    states.push(e0.clone());
    for m in 0..fine.steps() {
        let cur = &states[m];
        let a = if m % substeps == 0 {
            let a = policy.controls(coarse.node(m / substeps), coarse, cur)?;
            if a.len() != nd {
                return Err(Error::ShapeMismatch {
                    what: "policy output",
                    expected: nd,
                    got: a.len(),
                });
            }
            a
        } else {
            controls[m - 1].clone()
        };
        let next = cs_euler_step(cur, &a, p, fine.step(), noise.step(m))?;
        controls.push(a);
        states.push(next);
    }
    Ok(Trajectory {
        grid: fine,
        states,
        controls,
        noise,
    })
}
