//! Particle simulation and policy-gradient control for mean-field
//! Cucker–Smale flocking, with an exact LQ benchmark.
//!
//! Numeric code is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the bottom fix `f64`, which is what the command-line tool uses.
// Negated comparisons are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod linalg;
pub mod linconvex;
pub mod policy;
pub mod problem;
pub mod riccati;
pub mod rng;
pub mod scalar;

pub use cost::{empirical_cs_cost, CostBreakdown};
pub use dynamics::{
    cs_drift, cs_euler_step, cs_kernel, rollout, rollout_held, rollout_with_noise, CsParams,
    FeatureSet, FeedbackPolicy, NoiseField, Trajectory, ZeroPolicy,
};
pub use ensemble::{empirical_moments, Ensemble, Moments};
pub use error::{Error, Result};
pub use grid::{make_uniform_grid, TimeGrid};
pub use policy::{Activation, MlpPolicy};
pub use riccati::{
    exact_lq_feedback, exact_lq_value, solve_riccati, LqFeedbackPolicy, LqParams, RiccatiSolution,
};
pub use rng::SeededStream;
pub use scalar::Real;

pub type Ensemble64 = Ensemble<f64>;
pub type TimeGrid64 = TimeGrid<f64>;
pub type CsParams64 = CsParams<f64>;
pub type LqParams64 = LqParams<f64>;
pub type MlpPolicy64 = MlpPolicy<f64>;
pub type RiccatiSolution64 = RiccatiSolution<f64>;
pub type NoiseField64 = NoiseField<f64>;
