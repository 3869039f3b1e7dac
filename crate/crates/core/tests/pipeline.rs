//! End-to-end checks through the public API only.

use mfc_core::experiments::{evaluate_policy, train, TrainConfig};
use mfc_core::policy::{rollout_cost_and_grad, Activation, MlpPolicy};
use mfc_core::problem::{generic_discrete_cost, generic_euler_step, CsProblem};
use mfc_core::{
    cs_euler_step, empirical_cs_cost, exact_lq_value, rollout, solve_riccati, CsParams, Ensemble,
    FeatureSet, LqFeedbackPolicy, LqParams, NoiseField, SeededStream, TimeGrid, ZeroPolicy,
};

fn cs<T: mfc_core::Real>(beta: f64) -> CsParams<T> {
    CsParams {
        phi: T::lit(1.0),
        beta: T::lit(beta),
        sigma: T::lit(0.1),
        gamma1: T::lit(0.1),
        horizon: T::lit(1.0),
        dim: 1,
    }
}

fn lq() -> LqParams<f64> {
    LqParams {
        phi: 1.0,
        gamma1: 0.1,
        sigma: 0.1,
        horizon: 1.0,
        dim: 1,
        var_v0: 1.0 / 12.0,
    }
}

#[test]
fn single_precision_tracks_double() {
    let s = SeededStream::new(21);
    let grid64 = TimeGrid::uniform(0.0, 1.0, 16).unwrap();
    let grid32 = TimeGrid::<f32>::uniform(0.0, 1.0, 16).unwrap();
    let net64 = MlpPolicy::<f64>::standard(3, 1, 16, 2, Activation::Tanh, &s).unwrap();
    let net32 = MlpPolicy::from_params(
        net64.dims().to_vec(),
        Activation::Tanh,
        net64.params().iter().map(|&p| p as f32).collect(),
    )
    .unwrap();
    let e64 = Ensemble::<f64>::uniform(50, 1, &s).unwrap();
    let e32 = Ensemble::<f32>::uniform(50, 1, &s).unwrap();
    let c64 = rollout_cost_and_grad(&net64, &e64, &grid64, &cs(1.0), &s).unwrap();
    let c32 = rollout_cost_and_grad(&net32, &e32, &grid32, &cs(1.0), &s).unwrap();
    assert!(((c32.cost.total as f64) - c64.cost.total).abs() < 1e-5 * c64.cost.total.max(1.0));
    let norm: f64 = c64.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let diff: f64 = c64
        .grad
        .iter()
        .zip(&c32.grad)
        .map(|(a, &b)| (a - b as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(diff < 1e-3 * norm, "{diff} vs {norm}");
}

#[test]
fn optimal_feedback_beats_doing_nothing() {
    let ric = solve_riccati(&lq(), 4096).unwrap();
    let exact = exact_lq_value(&lq(), &ric).unwrap();
    let pol = LqFeedbackPolicy::new(ric, 0.1).unwrap();
    let controlled = evaluate_policy(&pol, &cs(0.0), 2000, 64, 1, 4).unwrap();
    let free = evaluate_policy(&ZeroPolicy, &cs(0.0), 2000, 64, 1, 4).unwrap();
    assert!(controlled.mean < free.mean);
    assert!(
        (controlled.mean - exact).abs() / exact < 0.05,
        "{} vs {exact}",
        controlled.mean
    );
}

#[test]
fn short_training_beats_initial_network() {
    let mut cfg = TrainConfig::reference(cs::<f64>(0.0));
    cfg.particles = 100;
    cfg.steps = 16;
    cfg.iterations = 60;
    cfg.hidden = 32;
    cfg.schedule.lr0 = 0.003;
    let (trained, history) = train(&cfg).unwrap();
    assert_eq!(history.len(), 60);
    let before = evaluate_policy(&cfg.initial_policy().unwrap(), &cfg.cs, 500, 16, 9, 4).unwrap();
    let after = evaluate_policy(&trained, &cfg.cs, 500, 16, 9, 4).unwrap();
    assert!(
        after.mean < before.mean,
        "{} !< {}",
        after.mean,
        before.mean
    );
}

#[test]
fn checkpoint_reproduces_controls() {
    let s = SeededStream::new(2);
    let net = MlpPolicy::<f64>::standard(
        FeatureSet::PositionVelocity.input_dim(2),
        2,
        20,
        2,
        Activation::Relu,
        &s,
    )
    .unwrap();
    let back = MlpPolicy::from_checkpoint(&net.to_checkpoint()).unwrap();
    let p = CsParams {
        dim: 2,
        ..cs::<f64>(1.0)
    };
    let grid = TimeGrid::uniform(0.0, 1.0, 8).unwrap();
    let e0 = Ensemble::uniform(40, 2, &s).unwrap();
    let a = rollout(&e0, &net, &grid, &p, &s).unwrap();
    let b = rollout(&e0, &back, &grid, &p, &s).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        empirical_cs_cost(&a, 0.1).unwrap(),
        empirical_cs_cost(&b, 0.1).unwrap()
    );
}

#[test]
fn generic_problem_reproduces_specialised_rollout() {
    let p = cs::<f64>(1.0);
    let prob = CsProblem::new(p.clone());
    let grid = TimeGrid::uniform(0.0, 1.0, 6).unwrap();
    let s = SeededStream::new(8);
    let e0 = Ensemble::uniform(12, 1, &s).unwrap();
    let noise = NoiseField::sample(&s, 12, 1, &grid);
    let traj = mfc_core::rollout_with_noise(&e0, &ZeroPolicy, &grid, &p, noise.clone()).unwrap();

    let mut states = vec![CsProblem::pack(&e0)];
    let mut controls = Vec::new();
    let mut e = e0.clone();
    for m in 0..grid.steps() {
        let a = vec![0.0; 12];
        let next = cs_euler_step(&e, &a, &p, grid.step(), noise.step(m)).unwrap();
        let g = generic_euler_step(
            states.last().unwrap(),
            &a,
            &prob,
            grid.node(m),
            grid.step(),
            noise.step(m),
        )
        .unwrap();
        assert_eq!(CsProblem::unpack(&g, 1).unwrap(), next);
        states.push(g);
        controls.push(a);
        e = next;
    }
    let generic = generic_discrete_cost(&states, &controls, &grid, &prob).unwrap();
    let special = empirical_cs_cost(&traj, p.gamma1).unwrap().total;
    assert!((generic - special).abs() < 1e-14);
}
