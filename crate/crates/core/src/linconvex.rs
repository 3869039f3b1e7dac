//! Closed-form feedback for the scalar linear-convex model with quadratic
//! running cost
//!
//! ```text
//! f = q/2 a^2 + qbar/2 (a - r E[a])^2 + c x a + ...,   b = b2 a + gamma E[a] + ...
//! ```
//!
//! For this model the optimality condition
//! `b2 Y + gamma E[Y] + (q+qbar) a + qbar r(r-2) E[a] + c X = 0`
//! is solved by
//!
//! ```text
//! a = (-c x - b2 y + psi E[X] + (zeta - gamma) E[Y]) / (q + qbar)
//! psi  = c qbar r(r-2) / D,   zeta = (b2 + gamma) qbar r(r-2) / D,   D = q + qbar (r-1)^2
//! ```
//!
//! Everything here is generic over a [`Field`] so the identity can be checked
//! in exact rational arithmetic as well as in floating point.

use std::fmt::Debug;
use std::ops::Neg;
use std::sync::Arc;

use num_traits::{FromPrimitive, Num};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::scalar::Real;

/// Ordered field: `f64`, `f32`, or an exact rational type.
pub trait Field: Clone + PartialOrd + Num + Neg<Output = Self> + FromPrimitive + Debug {}
impl<F: Clone + PartialOrd + Num + Neg<Output = F> + FromPrimitive + Debug> Field for F {}

type CoeffFn<F> = Arc<dyn Fn(&F) -> F + Send + Sync>;

/// A coefficient that is either constant or a function of time.
#[derive(Clone)]
pub enum Coefficient<F> {
    Constant(F),
    Function(CoeffFn<F>),
}

impl<F: Field> Coefficient<F> {
    pub fn function(f: impl Fn(&F) -> F + Send + Sync + 'static) -> Self {
        Self::Function(Arc::new(f))
    }

    pub fn at(&self, t: &F) -> F {
        match self {
            Self::Constant(c) => c.clone(),
            Self::Function(f) => f(t),
        }
    }
}

impl<F: Debug> Debug for Coefficient<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Constant(c) => write!(f, "Constant({c:?})"),
            Self::Function(_) => f.write_str("Function(..)"),
        }
    }
}

impl<F> From<F> for Coefficient<F> {
    fn from(c: F) -> Self {
        Self::Constant(c)
    }
}

/// Coefficients `(b2, gamma, q, qbar, r, c)` and the convexity floor
/// `lambda1` with `q(t) >= lambda1 > 0`.
#[derive(Debug, Clone)]
pub struct LinConvexCoeffs<F> {
    pub b2: Coefficient<F>,
    pub gamma: Coefficient<F>,
    pub q: Coefficient<F>,
    pub qbar: Coefficient<F>,
    pub r: Coefficient<F>,
    pub c: Coefficient<F>,
    pub lambda1: F,
}

/// Coefficient values at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffSnapshot<F> {
    pub b2: F,
    pub gamma: F,
    pub q: F,
    pub qbar: F,
    pub r: F,
    pub c: F,
}

impl<F: Field> CoeffSnapshot<F> {
    /// `q + qbar (r-1)^2`.
    pub fn denominator(&self) -> F {
        let rm1 = self.r.clone() - F::one();
        self.q.clone() + self.qbar.clone() * rm1.clone() * rm1
    }

    /// `qbar r (r-2)`, the weight of `E[a]` in the optimality condition.
    pub fn mean_weight(&self) -> F {
        let two = F::one() + F::one();
        self.qbar.clone() * self.r.clone() * (self.r.clone() - two)
    }
}

impl<F: Field> LinConvexCoeffs<F> {
    pub fn constant(b2: F, gamma: F, q: F, qbar: F, r: F, c: F, lambda1: F) -> Self {
        Self {
            b2: b2.into(),
            gamma: gamma.into(),
            q: q.into(),
            qbar: qbar.into(),
            r: r.into(),
            c: c.into(),
            lambda1,
        }
    }

    /// Evaluates every coefficient at `t` and checks the invariants.
    pub fn at(&self, t: &F) -> Result<CoeffSnapshot<F>> {
        let s = CoeffSnapshot {
            b2: self.b2.at(t),
            gamma: self.gamma.at(t),
            q: self.q.at(t),
            qbar: self.qbar.at(t),
            r: self.r.at(t),
            c: self.c.at(t),
        };
        if !(self.lambda1 > F::zero()) {
            return Err(Error::invalid("lambda1", "must be > 0"));
        }
        if !(s.q >= self.lambda1) {
            return Err(Error::invalid(
                "q",
                format!("{:?} below lambda1 {:?}", s.q, self.lambda1),
            ));
        }
        if !(s.qbar >= F::zero()) {
            return Err(Error::invalid(
                "qbar",
                format!("must be >= 0, got {:?}", s.qbar),
            ));
        }
        if !(s.denominator() > F::zero()) {
            return Err(Error::invalid("q", "q + qbar (r-1)^2 must be > 0"));
        }
        Ok(s)
    }
}

/// `(psi, zeta)` at time `t`.
pub fn psi_zeta<F: Field>(t: &F, coeffs: &LinConvexCoeffs<F>) -> Result<(F, F)> {
    let s = coeffs.at(t)?;
    Ok(psi_zeta_at(&s))
}

fn psi_zeta_at<F: Field>(s: &CoeffSnapshot<F>) -> (F, F) {
    let w = s.mean_weight() / s.denominator();
    let psi = s.c.clone() * w.clone();
    let zeta = (s.b2.clone() + s.gamma.clone()) * w;
    (psi, zeta)
}

/// The optimal feedback at state `x`, adjoint `y` and the means of the law.
pub fn hat_alpha_lq<F: Field>(
    t: &F,
    x: &F,
    y: &F,
    mean_x: &F,
    mean_y: &F,
    coeffs: &LinConvexCoeffs<F>,
) -> Result<F> {
    let s = coeffs.at(t)?;
    Ok(hat_alpha_at(&s, x, y, mean_x, mean_y))
}

fn hat_alpha_at<F: Field>(s: &CoeffSnapshot<F>, x: &F, y: &F, mean_x: &F, mean_y: &F) -> F {
    let (psi, zeta) = psi_zeta_at(s);
    let num = -(s.c.clone() * x.clone()) - s.b2.clone() * y.clone()
        + psi * mean_x.clone()
        + (zeta - s.gamma.clone()) * mean_y.clone();
    num / (s.q.clone() + s.qbar.clone())
}

/// `E[a]` implied by the feedback: `(-(b2+gamma) E[Y] - c E[X]) / D`.
pub fn expected_control<F: Field>(
    t: &F,
    mean_x: &F,
    mean_y: &F,
    coeffs: &LinConvexCoeffs<F>,
) -> Result<F> {
    let s = coeffs.at(t)?;
    let num = -((s.b2.clone() + s.gamma.clone()) * mean_y.clone()) - s.c.clone() * mean_x.clone();
    Ok(num / s.denominator())
}

fn mean<F: Field>(vals: impl Iterator<Item = F>, n: usize) -> F {
    let sum = vals.fold(F::zero(), |acc, v| acc + v);
    sum / F::from_usize(n).expect("count representable")
}

/// The five terms of the optimality condition per sample.
fn residual_terms<F: Field>(
    samples: &[(F, F)],
    t: &F,
    coeffs: &LinConvexCoeffs<F>,
    controls: &[F],
) -> Result<Vec<[F; 5]>> {
    if samples.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if samples.len() != controls.len() {
        return Err(Error::ShapeMismatch {
            what: "controls",
            expected: samples.len(),
            got: controls.len(),
        });
    }
    let s = coeffs.at(t)?;
    let n = samples.len();
    let mean_y = mean(samples.iter().map(|p| p.1.clone()), n);
    let mean_a = mean(controls.iter().cloned(), n);
    let qq = s.q.clone() + s.qbar.clone();
    let wa = s.mean_weight();
    Ok(samples
        .iter()
        .zip(controls)
        .map(|((x, y), a)| {
            [
                s.b2.clone() * y.clone(),
                s.gamma.clone() * mean_y.clone(),
                qq.clone() * a.clone(),
                wa.clone() * mean_a.clone(),
                s.c.clone() * x.clone(),
            ]
        })
        .collect())
}

/// Per-sample residual of the optimality condition, with empirical means in
/// place of expectations.
pub fn optimality_residual<F: Field>(
    samples: &[(F, F)],
    t: &F,
    coeffs: &LinConvexCoeffs<F>,
    controls: &[F],
) -> Result<Vec<F>> {
    Ok(residual_terms(samples, t, coeffs, controls)?
        .into_iter()
        .map(|terms| terms.into_iter().fold(F::zero(), |acc, v| acc + v))
        .collect())
}

/// Per-sample magnitude of the condition: the sum of the absolute values of
/// its terms. Residuals are meaningful relative to this.
pub fn residual_scale<F: Field>(
    samples: &[(F, F)],
    t: &F,
    coeffs: &LinConvexCoeffs<F>,
    controls: &[F],
) -> Result<Vec<F>> {
    let abs = |v: F| if v < F::zero() { -v } else { v };
    Ok(residual_terms(samples, t, coeffs, controls)?
        .into_iter()
        .map(|terms| terms.into_iter().fold(F::zero(), |acc, v| acc + abs(v)))
        .collect())
}

/// Applies [`hat_alpha_lq`] to every sample with the empirical means.
pub fn feedback_controls<F: Field>(
    samples: &[(F, F)],
    t: &F,
    coeffs: &LinConvexCoeffs<F>,
) -> Result<Vec<F>> {
    if samples.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let s = coeffs.at(t)?;
    let n = samples.len();
    let mean_x = mean(samples.iter().map(|p| p.0.clone()), n);
    let mean_y = mean(samples.iter().map(|p| p.1.clone()), n);
    Ok(samples
        .iter()
        .map(|(x, y)| hat_alpha_at(&s, x, y, &mean_x, &mean_y))
        .collect())
}

/// Left-endpoint hold of a path sampled at the fine nodes onto the coarse
/// cells. The terminal node keeps the value of the last coarse cell.
pub fn project_piecewise_constant<T: Real, V: Clone>(
    path: &[V],
    fine: &TimeGrid<T>,
    coarse: &TimeGrid<T>,
) -> Result<Vec<V>> {
    if path.len() != fine.steps() + 1 {
        return Err(Error::ShapeMismatch {
            what: "path samples",
            expected: fine.steps() + 1,
            got: path.len(),
        });
    }
    let r = fine.refinement_of(coarse)?;
    let m = fine.steps();
    Ok((0..=m)
        .map(|k| path[(k.min(m - 1) / r) * r].clone())
        .collect())
}
