//! Generic extended mean-field control problems on particles.
//!
//! Coefficients may depend on the joint empirical law of states and
//! controls, which is handed to them as [`EmpiricalLaw`]: the full sample
//! arrays plus their means.

use crate::dynamics::{interaction_at, CsParams};
use crate::ensemble::{column_means, Ensemble};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::scalar::Real;

/// Joint empirical law of `N` state samples in `R^n` and, when available,
/// control samples in `R^k`.
#[derive(Debug, Clone)]
pub struct EmpiricalLaw<'a, T> {
    states: &'a [T],
    controls: Option<&'a [T]>,
    len: usize,
    state_dim: usize,
    control_dim: usize,
    mean_state: Vec<T>,
    mean_control: Vec<T>,
}

impl<'a, T: Real> EmpiricalLaw<'a, T> {
    pub fn new(states: &'a [T], state_dim: usize, controls: Option<(&'a [T], usize)>) -> Self {
        let len = states.len() / state_dim;
        let mean_state = column_means(states, len, state_dim, 0, state_dim);
        let (controls, control_dim, mean_control) = match controls {
            Some((c, k)) => (Some(c), k, column_means(c, len, k, 0, k)),
            None => (None, 0, Vec::new()),
        };
        Self {
            states,
            controls,
            len,
            state_dim,
            control_dim,
            mean_state,
            mean_control,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn states(&self) -> &'a [T] {
        self.states
    }

    pub fn controls(&self) -> Option<&'a [T]> {
        self.controls
    }

    pub fn mean_state(&self) -> &[T] {
        &self.mean_state
    }

    pub fn mean_control(&self) -> &[T] {
        &self.mean_control
    }
}

/// Coefficients `(b, sigma, f, g)` of a controlled McKean–Vlasov problem
/// with state dimension `n`, control dimension `k` and noise dimension `d`.
pub trait GenericMfcProblem<T: Real>: Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;

    /// Drift in `R^n`.
    fn drift(&self, t: T, x: &[T], a: &[T], law: &EmpiricalLaw<'_, T>) -> Vec<T>;

    /// Diffusion matrix, `n × d` row-major.
    fn diffusion(&self, t: T, x: &[T], a: &[T], law: &EmpiricalLaw<'_, T>) -> Vec<T>;

    fn running_cost(&self, t: T, x: &[T], a: &[T], law: &EmpiricalLaw<'_, T>) -> T;

    fn terminal_cost(&self, x: &[T], law: &EmpiricalLaw<'_, T>) -> T;
}

fn check_len(what: &'static str, got: usize, expected: usize) -> Result<()> {
    if got != expected {
        return Err(Error::ShapeMismatch {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// `X' = X + b h + sigma dW` for every particle, with coefficients evaluated
/// on the pre-step samples.
pub fn generic_euler_step<T: Real, P: GenericMfcProblem<T> + ?Sized>(
    states: &[T],
    controls: &[T],
    prob: &P,
    t: T,
    h: T,
    noise: &[T],
) -> Result<Vec<T>> {
    let (n, k, d) = (prob.state_dim(), prob.control_dim(), prob.noise_dim());
    if n == 0 || states.is_empty() || !states.len().is_multiple_of(n) {
        return Err(Error::ShapeMismatch {
            what: "states",
            expected: n.max(1) * (states.len() / n.max(1)).max(1),
            got: states.len(),
        });
    }
    let len = states.len() / n;
    check_len("controls", controls.len(), len * k)?;
    check_len("noise", noise.len(), len * d)?;
    if !(h > T::zero()) {
        return Err(Error::invalid("h", "step must be > 0"));
    }
    let law = EmpiricalLaw::new(states, n, Some((controls, k)));
    let mut out = Vec::with_capacity(states.len());
    for i in 0..len {
        let x = &states[i * n..(i + 1) * n];
        let a = &controls[i * k..(i + 1) * k];
        let dw = &noise[i * d..(i + 1) * d];
        let b = prob.drift(t, x, a, &law);
        let s = prob.diffusion(t, x, a, &law);
        if b.len() != n || s.len() != n * d {
            return Err(Error::ShapeMismatch {
                what: "coefficient output",
                expected: n + n * d,
                got: b.len() + s.len(),
            });
        }
        for r in 0..n {
            let mut shock = T::zero();
            for c in 0..d {
                shock = shock + s[r * d + c] * dw[c];
            }
            let next = x[r] + h * b[r] + shock;
            if !next.is_finite() {
                return Err(Error::non_finite(format!("state at t = {t}, particle {i}")));
            }
            out.push(next);
        }
    }
    Ok(out)
}

/// Left-endpoint discretized cost `sum_m h E[f(t_m, X_m, a_m, law_m)] + E[g(X_M, law_M)]`.
///
/// `states` holds `M + 1` sample arrays and `controls` holds `M`.
pub fn generic_discrete_cost<T: Real, P: GenericMfcProblem<T> + ?Sized>(
    states: &[Vec<T>],
    controls: &[Vec<T>],
    grid: &TimeGrid<T>,
    prob: &P,
) -> Result<T> {
    let (n, k) = (prob.state_dim(), prob.control_dim());
    let steps = grid.steps();
    check_len("state snapshots", states.len(), steps + 1)?;
    check_len("control snapshots", controls.len(), steps)?;
    let len = states[0].len() / n;
    if len == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let nn = T::from_count(len);
    let mut total = T::zero();
    for m in 0..steps {
        check_len("states", states[m].len(), len * n)?;
        check_len("controls", controls[m].len(), len * k)?;
        let law = EmpiricalLaw::new(&states[m], n, Some((&controls[m], k)));
        let mut acc = T::zero();
        for i in 0..len {
            let f = prob.running_cost(
                grid.node(m),
                &states[m][i * n..(i + 1) * n],
                &controls[m][i * k..(i + 1) * k],
                &law,
            );
            if !f.is_finite() {
                return Err(Error::non_finite(format!(
                    "running cost at t = {}, particle {i}",
                    grid.node(m)
                )));
            }
            acc = acc + f;
        }
        total = total + grid.step() * (acc / nn);
    }
    let last = &states[steps];
    check_len("terminal states", last.len(), len * n)?;
    let law = EmpiricalLaw::new(last, n, None);
    let mut acc = T::zero();
    for i in 0..len {
        let g = prob.terminal_cost(&last[i * n..(i + 1) * n], &law);
        if !g.is_finite() {
            return Err(Error::non_finite(format!("terminal cost, particle {i}")));
        }
        acc = acc + g;
    }
    Ok(total + acc / nn)
}

/// The Cucker–Smale problem written as a generic problem with state
/// `(x, v) in R^{2d}`, control in `R^d` and noise acting on the velocity
/// block only.
#[derive(Debug, Clone)]
pub struct CsProblem<T> {
    pub params: CsParams<T>,
}

impl<T: Real> CsProblem<T> {
    pub fn new(params: CsParams<T>) -> Self {
        Self { params }
    }

    /// Packs an ensemble into interleaved `(x_i, v_i)` rows.
    pub fn pack(e: &Ensemble<T>) -> Vec<T> {
        let d = e.dim();
        let mut out = Vec::with_capacity(2 * d * e.len());
        for i in 0..e.len() {
            out.extend_from_slice(e.position(i));
            out.extend_from_slice(e.velocity(i));
        }
        out
    }

    pub fn unpack(states: &[T], d: usize) -> Result<Ensemble<T>> {
        let mut x = Vec::with_capacity(states.len() / 2);
        let mut v = Vec::with_capacity(states.len() / 2);
        for row in states.chunks_exact(2 * d) {
            x.extend_from_slice(&row[..d]);
            v.extend_from_slice(&row[d..]);
        }
        Ensemble::new(d, x, v)
    }

    fn deviation_sq(&self, x: &[T], law: &EmpiricalLaw<'_, T>) -> T {
        let d = self.params.dim;
        x[d..]
            .iter()
            .zip(&law.mean_state()[d..])
            .map(|(&v, &m)| (v - m) * (v - m))
            .fold(T::zero(), |s, z| s + z)
    }
}

impl<T: Real> GenericMfcProblem<T> for CsProblem<T> {
    fn state_dim(&self) -> usize {
        2 * self.params.dim
    }

    fn control_dim(&self) -> usize {
        self.params.dim
    }

    fn noise_dim(&self) -> usize {
        self.params.dim
    }

    fn drift(&self, _t: T, x: &[T], a: &[T], law: &EmpiricalLaw<'_, T>) -> Vec<T> {
        let d = self.params.dim;
        let states = law.states();
        let stride = 2 * d;
        let mut inter = vec![T::zero(); d];
        interaction_at(
            &x[..d],
            &x[d..],
            states,
            &states[d..],
            stride,
            law.len(),
            self.params.phi,
            self.params.beta,
            &law.mean_state()[d..],
            &mut inter,
        );
        let mut out = Vec::with_capacity(stride);
        out.extend_from_slice(&x[d..]);
        out.extend(a.iter().zip(&inter).map(|(&ai, &ii)| ai + ii));
        out
    }

    fn diffusion(&self, _t: T, _x: &[T], _a: &[T], _law: &EmpiricalLaw<'_, T>) -> Vec<T> {
        let d = self.params.dim;
        let mut s = vec![T::zero(); 2 * d * d];
        for c in 0..d {
            s[(d + c) * d + c] = self.params.sigma;
        }
        s
    }

    fn running_cost(&self, _t: T, x: &[T], a: &[T], law: &EmpiricalLaw<'_, T>) -> T {
        let effort = a.iter().map(|&z| z * z).fold(T::zero(), |s, z| s + z);
        self.deviation_sq(x, law) + self.params.gamma1 * effort
    }

    fn terminal_cost(&self, x: &[T], law: &EmpiricalLaw<'_, T>) -> T {
        self.deviation_sq(x, law)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::cs_euler_step;
    use crate::rng::SeededStream;

    struct Frozen;
    impl GenericMfcProblem<f64> for Frozen {
        fn state_dim(&self) -> usize {
            1
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn noise_dim(&self) -> usize {
            1
        }
        fn drift(&self, _t: f64, _x: &[f64], a: &[f64], _l: &EmpiricalLaw<'_, f64>) -> Vec<f64> {
            vec![a[0]]
        }
        fn diffusion(
            &self,
            _t: f64,
            _x: &[f64],
            _a: &[f64],
            _l: &EmpiricalLaw<'_, f64>,
        ) -> Vec<f64> {
            vec![0.0]
        }
        fn running_cost(&self, _t: f64, _x: &[f64], _a: &[f64], _l: &EmpiricalLaw<'_, f64>) -> f64 {
            1.0
        }
        fn terminal_cost(&self, _x: &[f64], _l: &EmpiricalLaw<'_, f64>) -> f64 {
            0.0
        }
    }

    #[test]
    fn frozen_and_integrator_dynamics() {
        let out =
            generic_euler_step(&[0.3, -1.0], &[0.0, 0.0], &Frozen, 0.0, 0.1, &[5.0, 5.0]).unwrap();
        assert_eq!(out, vec![0.3, -1.0]);
        let out = generic_euler_step(&[0.0], &[1.0], &Frozen, 0.0, 0.25, &[0.0]).unwrap();
        assert_eq!(out, vec![0.25]);
    }

    #[test]
    fn constant_running_cost_integrates_to_horizon() {
        for steps in [1, 3, 16] {
            let grid = TimeGrid::uniform(0.0, 1.0, steps).unwrap();
            let states = vec![vec![0.0, 1.0]; steps + 1];
            let controls = vec![vec![0.0, 0.0]; steps];
            let c = generic_discrete_cost(&states, &controls, &grid, &Frozen).unwrap();
            assert!((c - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn cs_instance_matches_specialised_step() {
        for beta in [0.0, 1.0, 0.5] {
            let p = CsParams {
                phi: 1.0,
                beta,
                sigma: 0.1,
                gamma1: 0.1,
                horizon: 1.0,
                dim: 2,
            };
            let e = Ensemble::<f64>::uniform(9, 2, &SeededStream::new(4)).unwrap();
            let a: Vec<f64> = (0..18).map(|k| (k as f64).sin()).collect();
            let w: Vec<f64> = (0..18).map(|k| 0.1 * (k as f64).cos()).collect();
            let direct = cs_euler_step(&e, &a, &p, 0.125, &w).unwrap();
            let prob = CsProblem::new(p);
            let packed =
                generic_euler_step(&CsProblem::pack(&e), &a, &prob, 0.0, 0.125, &w).unwrap();
            let via = CsProblem::unpack(&packed, 2).unwrap();
            for (x, y) in via.positions().iter().zip(direct.positions()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
            for (x, y) in via.velocities().iter().zip(direct.velocities()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}
