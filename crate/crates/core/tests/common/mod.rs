//! Shared scenario fixtures for the integration suites.

use drcbf_core::plants::Obstacle;
use drcbf_core::sim::{
    AmbiguityConfig, CircleReference, ClfConfig, ControllerKind, Integrator, NoiseConfig,
    PlantConfig, ScenarioConfig, TrackingConfig,
};

/// Goal-seeking Dubins scenario with one mid-path obstacle.
pub fn dubins_scenario(controller: ControllerKind, seed: u64) -> ScenarioConfig {
    ScenarioConfig {
        name: "dubins-test".into(),
        plant: PlantConfig::Dubins {
            start: [0.0, 0.0, 0.0],
            goal: [5.0, 5.0],
            control_lower: [-0.5, -0.5, -0.5],
            control_upper: [0.5, 0.5, 0.5],
            kappa: vec![1.0],
            clf: ClfConfig {
                control_weight: vec![1.0, 1.0, 1.0],
                relaxation_weight: 100.0,
                state_weight: vec![1.0, 1.0, 0.0],
            },
            goal_tolerance: 0.05,
        },
        controller,
        ambiguity: AmbiguityConfig {
            alpha: 0.95,
            lambda: 1.0,
            lower_bound: None,
            upper_bound: None,
            case: 1,
            wasserstein_radius: 0.0,
        },
        noise: NoiseConfig {
            count: 20,
            mean: 0.0,
            std: 0.1,
            seed,
            resample_each_step: false,
        },
        obstacles: vec![Obstacle {
            center: [2.6, 2.4],
            radius: 1.0,
        }],
        dt: 0.01,
        horizon: 2500,
        integrator: Integrator::Euler,
        timing_in_outputs: false,
        notes: None,
    }
}

/// Circular-tracking quadcopter scenario with four on-path obstacles.
pub fn quad_scenario(controller: ControllerKind, seed: u64) -> ScenarioConfig {
    let r = 3.0f64;
    let d = r / 2.0f64.sqrt();
    ScenarioConfig {
        name: "quad-test".into(),
        plant: PlantConfig::Quadcopter {
            params: drcbf_core::QuadParams::default(),
            start: [r, 0.0, 0.0, 0.0, r * 2.0 * std::f64::consts::PI / 36.0, 0.0],
            reference: CircleReference {
                center: [0.0, 0.0],
                radius: r,
                period: 36.0,
            },
            kappa: vec![[6.0, 2.0], [12.0, 4.0], [15.0, 5.0], [8.0, 5.0]],
            tracking: TrackingConfig {
                control_weight: vec![1.0, 1.0],
                position_kp: 6.0,
                position_kd: 4.0,
                attitude_kp: 60.0,
                attitude_kd: 16.0,
            },
        },
        controller,
        ambiguity: AmbiguityConfig {
            alpha: 0.95,
            lambda: 1.0,
            lower_bound: None,
            upper_bound: None,
            case: 1,
            wasserstein_radius: 0.0,
        },
        noise: NoiseConfig {
            count: 20,
            mean: 0.0,
            std: 0.1,
            seed,
            resample_each_step: false,
        },
        obstacles: vec![
            Obstacle { center: [d, d], radius: 0.5 },
            Obstacle { center: [-d, d], radius: 0.5 },
            Obstacle { center: [-d, -d], radius: 0.5 },
            Obstacle { center: [d, -d], radius: 0.5 },
        ],
        dt: 0.02,
        horizon: 1800,
        integrator: Integrator::Euler,
        timing_in_outputs: false,
        notes: None,
    }
}

use drcbf_core::qp::QpProblem;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Strictly feasible random QP built around an interior point: strongly
/// convex cost, inequality rows with positive margin at the witness point,
/// optional equalities through it.
pub fn random_feasible_qp(
    rng: &mut ChaCha8Rng,
    max_vars: usize,
    with_eq: bool,
) -> (QpProblem, usize) {
    let n = rng.random_range(2..=max_vars);
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let p_mat = &m * m.transpose() + DMatrix::identity(n, n) * rng.random_range(0.2..1.0);
    let q = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let witness = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let r = rng.random_range(1..=2 * n);
    let g = DMatrix::from_fn(r, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &g * &witness + DVector::from_fn(r, |_, _| rng.random_range(0.1..1.0));
    let mut problem = QpProblem::new(p_mat, q).unwrap().with_ineq(g, h).unwrap();
    if with_eq && n > 2 {
        let p_rows = rng.random_range(1..=(n / 2).max(1));
        let a = DMatrix::from_fn(p_rows, n, |_, _| rng.random_range(-1.0..1.0));
        let b = &a * &witness;
        problem = problem.with_eq(a, b).unwrap();
    }
    (problem, n)
}

/// Random bounded LP: box plus extra rows, all strictly feasible at a
/// witness point.
pub fn random_bounded_lp(rng: &mut ChaCha8Rng, max_vars: usize) -> QpProblem {
    let n = rng.random_range(2..=max_vars);
    let c = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let witness = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    let extra = rng.random_range(1..=n);
    let mut g = DMatrix::zeros(2 * n + extra, n);
    let mut h = DVector::zeros(2 * n + extra);
    for j in 0..n {
        g[(j, j)] = 1.0;
        h[j] = rng.random_range(0.6..2.0);
        g[(n + j, j)] = -1.0;
        h[n + j] = rng.random_range(0.6..2.0);
    }
    for i in 0..extra {
        for j in 0..n {
            g[(2 * n + i, j)] = rng.random_range(-1.0..1.0);
        }
        let row_val = (g.row(2 * n + i) * &witness)[0];
        h[2 * n + i] = row_val + rng.random_range(0.1..1.0);
    }
    QpProblem::linear(c).with_ineq(g, h).unwrap()
}
