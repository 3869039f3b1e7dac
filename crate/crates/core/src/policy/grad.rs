//! Pathwise gradient of the empirical cost with respect to the network
//! parameters, with the Brownian increments and initial ensemble frozen.
//!
//! The forward pass is an ordinary [`rollout_with_noise`]. The reverse pass
//! is a hand-derived adjoint sweep over the Euler recursion: with adjoints
//! `lx_m = dJ/dx_m`, `lv_m = dJ/dv_m` and `u = h lv_{m+1}`,
//!
//! ```text
//! dJ/da_m  = u + (2 h gamma1 / N) a_m                 (then back through the network)
//! lx_m     = lx_{m+1} + (dI/dx)^T u + (dJ/da_m)(da/dx)
//! lv_m     = lv_{m+1} + h lx_{m+1} + (dI/dv)^T u + (2h/N)(v_m - vbar_m) + (dJ/da_m)(da/dv)
//! lv_M     = (2/N)(v_M - vbar_M),   lx_M = 0
//! ```
//!
//! where `I` is the interaction term. The empirical mean in the cost needs no
//! extra term because deviations from the mean sum to zero.

use rayon::prelude::*;

use crate::cost::{empirical_cs_cost, CostBreakdown};
use crate::dynamics::{
    rollout_with_noise, squared_distance, CsParams, Decay, FeatureSet, NoiseField, Trajectory,
    PAR_ROWS,
};
use crate::ensemble::{column_means, Ensemble};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::policy::mlp::{ForwardCache, MlpPolicy, BATCH_ROWS};
use crate::rng::{Purpose, SeededStream, Tag};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct CostGradient<T> {
    pub cost: CostBreakdown<T>,
    /// Same layout as [`MlpPolicy::params`].
    pub grad: Vec<T>,
}

/// Simulates under `theta` with increments drawn from `stream` and returns
/// the empirical cost and its exact gradient.
pub fn rollout_cost_and_grad<T: Real>(
    theta: &MlpPolicy<T>,
    e0: &Ensemble<T>,
    grid: &TimeGrid<T>,
    p: &CsParams<T>,
    stream: &SeededStream,
) -> Result<CostGradient<T>> {
    let noise = NoiseField::sample(stream, e0.len(), e0.dim(), grid);
    cost_and_grad_with_noise(theta, e0, grid, p, noise)
}

pub fn cost_and_grad_with_noise<T: Real>(
    theta: &MlpPolicy<T>,
    e0: &Ensemble<T>,
    grid: &TimeGrid<T>,
    p: &CsParams<T>,
    noise: NoiseField<T>,
) -> Result<CostGradient<T>> {
    let features = theta.features_for(e0.dim())?;
    let traj = rollout_with_noise(e0, theta, grid, p, noise)?;
    let cost = empirical_cs_cost(&traj, p.gamma1)?;
    if !cost.total.is_finite() {
        return Err(Error::non_finite("cost"));
    }
    let grad = adjoint_sweep(theta, &traj, p, features, T::one())?;
    Ok(CostGradient { cost, grad })
}

/// Cost only, on frozen noise. Used by finite-difference checks.
pub fn cost_with_noise<T: Real>(
    theta: &MlpPolicy<T>,
    e0: &Ensemble<T>,
    grid: &TimeGrid<T>,
    p: &CsParams<T>,
    noise: NoiseField<T>,
) -> Result<CostBreakdown<T>> {
    let traj = rollout_with_noise(e0, theta, grid, p, noise)?;
    empirical_cs_cost(&traj, p.gamma1)
}

/// Reverse sweep for the cost scaled by `weight`.
pub(crate) fn adjoint_sweep<T: Real>(
    theta: &MlpPolicy<T>,
    traj: &Trajectory<T>,
    p: &CsParams<T>,
    features: FeatureSet,
    weight: T,
) -> Result<Vec<T>> {
    let last = traj.states.last().expect("trajectory has states");
    let (n, d) = (last.len(), last.dim());
    let grid = &traj.grid;
    let h = grid.step();
    let nn = T::from_count(n);
    let two = T::lit(2.0);
    let in_dim = theta.input_dim();
    let n_params = theta.num_params();
    let chunks = n.div_ceil(BATCH_ROWS);
    let mut chunk_grads = vec![vec![T::zero(); n_params]; chunks];

    let mean_last = last.mean_velocity();
    let mut lam_v: Vec<T> = last
        .velocities()
        .chunks_exact(d)
        .flat_map(|row| {
            row.iter()
                .zip(&mean_last)
                .map(|(&v, &m)| two * weight * (v - m) / nn)
                .collect::<Vec<_>>()
        })
        .collect();
    let mut lam_x = vec![T::zero(); n * d];
    let mut g_a = vec![T::zero(); n * d];
    let mut d_feat = vec![T::zero(); n * in_dim];
    let v_off = features.velocity_offset(d);
    let x_off = features.position_offset();
    let ctrl_coeff = two * h * p.gamma1 * weight / nn;
    let state_coeff = two * h * weight / nn;

    for m in (0..grid.steps()).rev() {
        let e = &traj.states[m];
        let a = &traj.controls[m];
        let u: Vec<T> = lam_v.iter().map(|&l| h * l).collect();
        for ((g, &uk), &ak) in g_a.iter_mut().zip(&u).zip(a) {
            *g = uk + ctrl_coeff * ak;
        }

        let inputs = features.batch(grid, grid.node(m), e);
        chunk_grads
            .par_iter_mut()
            .zip(inputs.par_chunks(BATCH_ROWS * in_dim))
            .zip(g_a.par_chunks(BATCH_ROWS * d))
            .zip(d_feat.par_chunks_mut(BATCH_ROWS * in_dim))
            .for_each_init(ForwardCache::default, |cache, (((acc, x), ga), df)| {
                let rows = x.len() / in_dim;
                theta.forward_cached(x, rows, cache);
                theta.backward_cached(cache, rows, ga, acc, Some(df));
            });

        let (adj_x, adj_v) = interaction_adjoint(e, &u, p);
        let mean_v = e.mean_velocity();
        let vel = e.velocities();
        for i in 0..n {
            let feat = &d_feat[i * in_dim..(i + 1) * in_dim];
            for c in 0..d {
                let k = i * d + c;
                let from_x = x_off.map_or(T::zero(), |off| feat[off + c]);
                let next_v = lam_v[k]
                    + h * lam_x[k]
                    + adj_v[k]
                    + state_coeff * (vel[k] - mean_v[c])
                    + feat[v_off + c];
                let next_x = lam_x[k] + adj_x[k] + from_x;
                lam_v[k] = next_v;
                lam_x[k] = next_x;
            }
        }
        if lam_v.iter().chain(&lam_x).any(|z| !z.is_finite()) {
            return Err(Error::non_finite(format!("adjoint at step {m}")));
        }
    }

    let mut grad = vec![T::zero(); n_params];
    for acc in &chunk_grads {
        for (g, &a) in grad.iter_mut().zip(acc) {
            *g = *g + a;
        }
    }
    if let Some(k) = grad.iter().position(|z| !z.is_finite()) {
        return Err(Error::non_finite(format!("gradient coordinate {k}")));
    }
    Ok(grad)
}

/// Transposed Jacobian of the interaction term applied to `u`:
/// returns `((dI/dx)^T u, (dI/dv)^T u)`.
fn interaction_adjoint<T: Real>(e: &Ensemble<T>, u: &[T], p: &CsParams<T>) -> (Vec<T>, Vec<T>) {
    let (n, d) = (e.len(), e.dim());
    let nn = T::from_count(n);
    if p.beta == T::zero() {
        let ubar = column_means(u, n, d, 0, d);
        let adj_v = u
            .chunks_exact(d)
            .flat_map(|row| {
                row.iter()
                    .zip(&ubar)
                    .map(|(&uk, &ub)| p.phi * (ub - uk))
                    .collect::<Vec<_>>()
            })
            .collect();
        return (vec![T::zero(); n * d], adj_v);
    }
    let mut adj_x = vec![T::zero(); n * d];
    let mut adj_v = vec![T::zero(); n * d];
    let decay = Decay::new(p.beta);
    let scale_v = p.phi / nn;
    let scale_x = -T::lit(2.0) * p.beta * p.phi / nn;
    let (pos, vel) = (e.positions(), e.velocities());
    adj_x
        .par_chunks_mut(PAR_ROWS * d)
        .zip(adj_v.par_chunks_mut(PAR_ROWS * d))
        .enumerate()
        .for_each(|(blk, (ax, av))| {
            let first = blk * PAR_ROWS;
            if d == 1 {
                for (r, (axr, avr)) in ax.iter_mut().zip(av.iter_mut()).enumerate() {
                    let k = first + r;
                    let (wu, wsum, gx) = match decay {
                        Decay::Linear => pair_adjoint_scalar(k, pos, vel, u, |inv| inv),
                        Decay::Int(m) => {
                            pair_adjoint_scalar(k, pos, vel, u, move |inv: T| inv.powi(m))
                        }
                        _ => pair_adjoint_scalar(k, pos, vel, u, move |inv: T| decay.weight(inv)),
                    };
                    *avr = scale_v * (wu - wsum * u[k]);
                    *axr = scale_x * gx;
                }
                return;
            }
            let mut wu = vec![T::zero(); d];
            let mut gx = vec![T::zero(); d];
            for (r, (axr, avr)) in ax
                .chunks_exact_mut(d)
                .zip(av.chunks_exact_mut(d))
                .enumerate()
            {
                let k = first + r;
                let (xk, vk, uk) = (e.position(k), e.velocity(k), &u[k * d..(k + 1) * d]);
                wu.iter_mut().for_each(|z| *z = T::zero());
                gx.iter_mut().for_each(|z| *z = T::zero());
                let mut wsum = T::zero();
                for j in 0..n {
                    let (xj, vj, uj) = (e.position(j), e.velocity(j), &u[j * d..(j + 1) * d]);
                    let inv = T::one() / (T::one() + squared_distance(xk, xj));
                    let w = decay.weight(inv);
                    wsum = wsum + w;
                    let mut s = T::zero();
                    for c in 0..d {
                        wu[c] = wu[c] + w * uj[c];
                        s = s + (uk[c] - uj[c]) * (vj[c] - vk[c]);
                    }
                    let dw = s * w * inv;
                    for c in 0..d {
                        gx[c] = gx[c] + dw * (xk[c] - xj[c]);
                    }
                }
                for c in 0..d {
                    avr[c] = scale_v * (wu[c] - wsum * uk[c]);
                    axr[c] = scale_x * gx[c];
                }
            }
        });
    (adj_x, adj_v)
}

/// Pair sums of the interaction adjoint for particle `k` with scalar states:
/// `(sum_j w u_j, sum_j w, sum_j s_kj w inv (x_k - x_j))`.
#[inline(always)]
fn pair_adjoint_scalar<T: Real>(
    k: usize,
    pos: &[T],
    vel: &[T],
    u: &[T],
    w: impl Fn(T) -> T,
) -> (T, T, T) {
    let (xk, vk, uk) = (pos[k], vel[k], u[k]);
    let (mut wu, mut wsum, mut gx) = (T::zero(), T::zero(), T::zero());
    for ((&xj, &vj), &uj) in pos.iter().zip(vel).zip(u) {
        let dx = xk - xj;
        let inv = T::one() / (T::one() + dx * dx);
        let wk = w(inv);
        wsum = wsum + wk;
        wu = wu + wk * uj;
        gx = gx + (uk - uj) * (vj - vk) * wk * inv * dx;
    }
    (wu, wsum, gx)
}

/// One coordinate of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry<T> {
    pub index: usize,
    pub analytic: T,
    pub finite_difference: T,
    pub rel_error: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport<T> {
    pub cost: T,
    pub entries: Vec<GradCheckEntry<T>>,
    pub max_rel_error: T,
}

/// Denominator floor for relative errors: differences below
/// `REL_FLOOR * threshold` are indistinguishable from rounding in a
/// central difference of an O(0.1) cost.
pub const REL_FLOOR: f64 = 1e-7;

/// `|a - b| / max(|a|, |b|, REL_FLOOR)`.
pub fn relative_error<T: Real>(a: T, b: T) -> T {
    let denom = a.abs().max(b.abs()).max(T::lit(REL_FLOOR));
    (a - b).abs() / denom
}

/// Compares the adjoint gradient with central differences of step `fd_step`
/// on `coords` parameters chosen uniformly at random (without replacement)
/// from `stream`. Initial ensemble and noise are frozen.
pub fn gradient_check<T: Real>(
    theta: &MlpPolicy<T>,
    e0: &Ensemble<T>,
    grid: &TimeGrid<T>,
    p: &CsParams<T>,
    stream: &SeededStream,
    coords: usize,
    fd_step: T,
) -> Result<GradCheckReport<T>> {
    let noise = NoiseField::sample(stream, e0.len(), e0.dim(), grid);
    let cg = cost_and_grad_with_noise(theta, e0, grid, p, noise.clone())?;
    let total = theta.num_params();
    let mut picked: Vec<usize> = Vec::with_capacity(coords);
    let mut draw = 0u32;
    while picked.len() < coords.min(total) {
        let u = stream.uniform(Tag::new(Purpose::Selection, 0, draw, 0));
        draw += 1;
        let k = ((u * total as f64) as usize).min(total - 1);
        if !picked.contains(&k) {
            picked.push(k);
        }
    }
    let mut entries = Vec::with_capacity(picked.len());
    let mut max_rel = T::zero();
    for k in picked {
        let mut plus = theta.clone();
        plus.params_mut()[k] = plus.params()[k] + fd_step;
        let mut minus = theta.clone();
        minus.params_mut()[k] = minus.params()[k] - fd_step;
        let cp = cost_with_noise(&plus, e0, grid, p, noise.clone())?.total;
        let cm = cost_with_noise(&minus, e0, grid, p, noise.clone())?.total;
        let fd = (cp - cm) / (T::lit(2.0) * fd_step);
        let rel = relative_error(cg.grad[k], fd);
        max_rel = max_rel.max(rel);
        entries.push(GradCheckEntry {
            index: k,
            analytic: cg.grad[k],
            finite_difference: fd,
            rel_error: rel,
        });
    }
    Ok(GradCheckReport {
        cost: cg.cost.total,
        entries,
        max_rel_error: max_rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::mlp::Activation;

    fn setup(
        beta: f64,
        d: usize,
        n: usize,
        steps: usize,
        act: Activation,
    ) -> (MlpPolicy<f64>, Ensemble<f64>, TimeGrid<f64>, CsParams<f64>) {
        let p = CsParams {
            phi: 1.0,
            beta,
            sigma: 0.1,
            gamma1: 0.1,
            horizon: 1.0,
            dim: d,
        };
        let s = SeededStream::new(77);
        let input = FeatureSet::for_beta(beta).input_dim(d);
        let theta = MlpPolicy::standard(input, d, 16, 2, act, &s).unwrap();
        let e0 = Ensemble::uniform(n, d, &s.derive(1)).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, steps).unwrap();
        (theta, e0, grid, p)
    }

    #[test]
    fn cost_matches_plain_rollout() {
        let (theta, e0, grid, p) = setup(1.0, 2, 10, 4, Activation::Relu);
        let s = SeededStream::new(5);
        let cg = rollout_cost_and_grad(&theta, &e0, &grid, &p, &s).unwrap();
        let tr = crate::dynamics::rollout(&e0, &theta, &grid, &p, &s).unwrap();
        assert_eq!(cg.cost, empirical_cs_cost(&tr, p.gamma1).unwrap());
    }

    #[test]
    fn finite_differences_smooth_network() {
        for (beta, d) in [(0.0, 1), (1.0, 1), (1.0, 2), (0.5, 2)] {
            let (theta, e0, grid, p) = setup(beta, d, 9, 5, Activation::Tanh);
            let rep =
                gradient_check(&theta, &e0, &grid, &p, &SeededStream::new(3), 40, 1e-5).unwrap();
            assert!(
                rep.max_rel_error < 1e-6,
                "beta {beta} d {d}: {:?}",
                rep.max_rel_error
            );
        }
    }

    #[test]
    fn finite_differences_relu_network() {
        let (theta, e0, grid, p) = setup(0.0, 1, 8, 4, Activation::Relu);
        let rep = gradient_check(&theta, &e0, &grid, &p, &SeededStream::new(11), 20, 1e-5).unwrap();
        assert!(rep.max_rel_error < 1e-5, "{rep:?}");
    }

    #[test]
    fn degenerate_cost_floor() {
        // no penalty, no noise, flocked start, zero network
        let p = CsParams {
            phi: 1.0,
            beta: 0.0,
            sigma: 0.0,
            gamma1: 0.0,
            horizon: 1.0,
            dim: 1,
        };
        let theta = MlpPolicy::<f64>::zeros(vec![2, 8, 8, 1], Activation::Relu).unwrap();
        let e0 = Ensemble::new(1, vec![0.0, 0.5, 1.0], vec![0.5; 3]).unwrap();
        let grid = TimeGrid::uniform(0.0, 1.0, 4).unwrap();
        let cg = rollout_cost_and_grad(&theta, &e0, &grid, &p, &SeededStream::new(1)).unwrap();
        assert_eq!(cg.cost.total, 0.0);
        assert!(cg.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn gradient_scales_with_cost_weight() {
        let (theta, e0, grid, p) = setup(1.0, 1, 6, 3, Activation::Tanh);
        let tr = crate::dynamics::rollout(&e0, &theta, &grid, &p, &SeededStream::new(2)).unwrap();
        let g1 = adjoint_sweep(&theta, &tr, &p, FeatureSet::PositionVelocity, 1.0).unwrap();
        let g4 = adjoint_sweep(&theta, &tr, &p, FeatureSet::PositionVelocity, 4.0).unwrap();
        for (a, b) in g1.iter().zip(&g4) {
            assert_eq!(4.0 * a, *b);
        }
    }

    #[test]
    fn penalty_decomposition() {
        // two forward passes on the same controls: doubling gamma1 adds
        // exactly gamma1 * (h/N) sum |a|^2
        let (theta, e0, grid, p) = setup(0.0, 1, 8, 4, Activation::Relu);
        let s = SeededStream::new(4);
        let c1 = rollout_cost_and_grad(&theta, &e0, &grid, &p, &s)
            .unwrap()
            .cost;
        let p2 = CsParams {
            gamma1: 2.0 * p.gamma1,
            ..p.clone()
        };
        let c2 = rollout_cost_and_grad(&theta, &e0, &grid, &p2, &s)
            .unwrap()
            .cost;
        let tr = crate::dynamics::rollout(&e0, &theta, &grid, &p, &s).unwrap();
        let effort: f64 =
            tr.controls.iter().flatten().map(|a| a * a).sum::<f64>() * grid.step() / 8.0;
        assert!((c2.total - c1.total - p.gamma1 * effort).abs() < 1e-15);
        assert_eq!(c2.running_state, c1.running_state);
    }

    #[test]
    fn wrong_input_width_rejected() {
        let (_, e0, grid, p) = setup(0.0, 1, 4, 2, Activation::Relu);
        let theta = MlpPolicy::<f64>::zeros(vec![5, 4, 1], Activation::Relu).unwrap();
        assert!(rollout_cost_and_grad(&theta, &e0, &grid, &p, &SeededStream::new(1)).is_err());
    }
}
