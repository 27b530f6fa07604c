//! Controller QP battery: independently assembled programs as oracles plus
//! the safety-filter invariants.

mod common;

use drcbf_core::barrier::{
    self, BarrierEval, ClfSpec, ControlAffineModel, ControlObjective, FallbackPolicy, KappaFn,
    TrackingObjective,
};
use drcbf_core::plants::{circle_barrier, DubinsCar, Obstacle, PlanarQuadcopter, QuadParams};
use drcbf_core::qp::{self, QpProblem};
use drcbf_core::risk::{self, AmbiguitySpec, DrCase, SampleSet};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dubins() -> DubinsCar {
    DubinsCar::new([-2.0, -2.0, -2.0], [2.0, 2.0, 2.0])
}

fn dubins_clf() -> ClfSpec {
    ClfSpec {
        target: DVector::from_row_slice(&[5.0, 5.0, 0.0]),
        state_weight: DVector::from_row_slice(&[1.0, 1.0, 0.0]),
        control_weight: DMatrix::identity(3, 3),
        relaxation_weight: 100.0,
    }
}

fn test_spec() -> AmbiguitySpec {
    AmbiguitySpec {
        alpha: 0.95,
        lambda_penalty: 1.0,
        lower_bound: -0.3,
        upper_bound: 0.3,
        case_selector: DrCase::Case1,
        wasserstein_radius: 0.0,
    }
}

/// Assembles the goal-seeking controller QP by hand over `[u, delta]` and
/// solves it directly, independently of the barrier module's assembly path.
fn hand_assembled_clf_qp(
    model: &dyn ControlAffineModel,
    clf: &ClfSpec,
    cbc_rows: &[(DVector<f64>, f64)],
    x: &DVector<f64>,
) -> DVector<f64> {
    let m = model.control_dim();
    let nv = m + 1;
    let mut cost = DMatrix::zeros(nv, nv);
    cost.view_mut((0, 0), (m, m)).copy_from(&(2.0 * &clf.control_weight));
    cost[(m, m)] = 2.0 * clf.relaxation_weight;

    let f = model.drift(x);
    let g = model.actuation(x);
    let err = x - &clf.target;
    let we = DVector::from_fn(err.len(), |i, _| clf.state_weight[i] * err[i]);
    let lyap = 0.5
        * err
            .iter()
            .zip(clf.state_weight.iter())
            .map(|(v, w)| w * v * v)
            .sum::<f64>();

    let k = cbc_rows.len();
    let mut rows = DMatrix::zeros(k + 1, nv);
    let mut rhs = DVector::zeros(k + 1);
    for (i, (grad_u, bound)) in cbc_rows.iter().enumerate() {
        for j in 0..m {
            rows[(i, j)] = grad_u[j];
        }
        rhs[i] = *bound;
    }
    let clf_row = we.transpose() * &g;
    for j in 0..m {
        rows[(k, j)] = clf_row[j];
    }
    rows[(k, m)] = -1.0;
    rhs[k] = -we.dot(&f) - lyap;

    let mut lower: Vec<f64> = model.control_lower().iter().cloned().collect();
    let mut upper: Vec<f64> = model.control_upper().iter().cloned().collect();
    lower.push(f64::NEG_INFINITY);
    upper.push(f64::INFINITY);
    let problem = QpProblem::new(cost, DVector::zeros(nv))
        .unwrap()
        .with_ineq(rows, rhs)
        .unwrap()
        .with_box_bounds(&lower, &upper)
        .unwrap();
    let sol = qp::solve_qp(&problem, qp::DEFAULT_TOL).unwrap();
    assert_eq!(sol.status, qp::QpStatus::Optimal);
    sol.primal.rows(0, m).into_owned()
}

fn random_dubins_state(rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_row_slice(&[
        rng.random_range(-1.0..6.0),
        rng.random_range(-1.0..6.0),
        rng.random_range(-3.0..3.0),
    ])
}

#[test]
fn vanilla_control_matches_hand_assembled_qp() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let car = dubins();
    let clf = dubins_clf();
    let obstacle = Obstacle { center: [2.6, 2.4], radius: 1.0 };
    let kappa = KappaFn::linear(1.0).unwrap();
    for trial in 0..25 {
        let x = random_dubins_state(&mut rng);
        let h = circle_barrier(&[x[0], x[1]], &obstacle, 3);
        if h.value > -1e-3 {
            continue; // keep to feasible states
        }
        let out = barrier::vanilla_cbf_control(&car, &[h.clone()], &[kappa], &clf, &x).unwrap();
        let g = car.actuation(&x);
        let row = (h.gradient.transpose() * &g).transpose();
        let bound = -h.gradient.dot(&car.drift(&x)) - kappa.apply(h.value);
        let oracle = hand_assembled_clf_qp(&car, &clf, &[(row, bound)], &x);
        assert!(
            (&out.control - &oracle).amax() <= 1e-6,
            "trial {trial}: {:?} vs {:?}",
            out.control,
            oracle
        );
    }
}

#[test]
fn robust_control_matches_hand_assembled_qp() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let car = dubins();
    let clf = dubins_clf();
    let obstacle = Obstacle { center: [2.6, 2.4], radius: 1.0 };
    let kappa = KappaFn::linear(1.0).unwrap();
    let samples = SampleSet::draw(20, 0.0, 0.1, 3).unwrap();
    let spec = test_spec();
    for trial in 0..25 {
        let x = random_dubins_state(&mut rng);
        let h = circle_barrier(&[x[0], x[1]], &obstacle, 3);
        let (est, grad) = risk::risk_gradient(&h, &samples, &spec).unwrap();
        if est.value > -1e-3 {
            continue;
        }
        let out =
            barrier::drcbf_control(&car, &[(est.clone(), grad.clone())], &[kappa], &clf, &x)
                .unwrap();
        let g = car.actuation(&x);
        let row = (grad.transpose() * &g).transpose();
        let bound = -grad.dot(&car.drift(&x)) - kappa.apply(est.value);
        let oracle = hand_assembled_clf_qp(&car, &clf, &[(row, bound)], &x);
        assert!(
            (&out.control - &oracle).amax() <= 1e-6,
            "trial {trial}: {:?} vs {:?}",
            out.control,
            oracle
        );
    }
}

#[test]
fn returned_controls_satisfy_their_conditions() {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let car = dubins();
    let clf = dubins_clf();
    let obstacle = Obstacle { center: [2.6, 2.4], radius: 1.0 };
    let kappa = KappaFn::linear(1.0).unwrap();
    let samples = SampleSet::draw(20, 0.0, 0.1, 5).unwrap();
    let spec = test_spec();
    for _ in 0..40 {
        let x = random_dubins_state(&mut rng);
        let h = circle_barrier(&[x[0], x[1]], &obstacle, 3);
        let (est, grad) = risk::risk_gradient(&h, &samples, &spec).unwrap();
        if est.value > -1e-3 {
            continue;
        }
        let out = barrier::drcbf_control(&car, &[(est.clone(), grad.clone())], &[kappa], &clf, &x)
            .unwrap();
        let xdot = car.drift(&x) + car.actuation(&x) * &out.control;
        let cbc = grad.dot(&xdot) + kappa.apply(est.value);
        assert!(cbc <= 1e-6, "condition violated by {cbc}");
    }
}

#[test]
fn robust_half_space_is_contained_in_vanilla_half_space() {
    // With the worst-case value above the nominal one and a shared gradient
    // direction, the robust admissible interval sits inside the vanilla one.
    let mut rng = ChaCha8Rng::seed_from_u64(54);
    let car = dubins();
    let obstacle = Obstacle { center: [2.6, 2.4], radius: 1.0 };
    let kappa = KappaFn::linear(1.0).unwrap();
    let samples = SampleSet::draw(20, 0.0, 0.1, 7).unwrap();
    let spec = test_spec();
    for _ in 0..40 {
        let x = random_dubins_state(&mut rng);
        let h = circle_barrier(&[x[0], x[1]], &obstacle, 3);
        let (est, _) = risk::risk_gradient(&h, &samples, &spec).unwrap();
        assert!(est.value >= h.value - 1e-9);
        let bound_vanilla = -kappa.apply(h.value);
        let bound_robust = -kappa.apply(est.value);
        assert!(
            bound_robust <= bound_vanilla + 1e-12,
            "robust bound {bound_robust} vs vanilla {bound_vanilla}"
        );
        // 1-D slice along the barrier normal: admissible radial speeds.
        let g = car.actuation(&x);
        let row = h.gradient.transpose() * &g;
        let norm = row.amax();
        if norm > 1e-9 {
            let vanilla_cap = bound_vanilla / norm;
            let robust_cap = bound_robust / norm;
            assert!(robust_cap <= vanilla_cap + 1e-12);
        }
    }
}

#[test]
fn argmin_invariant_under_joint_objective_scaling() {
    let car = dubins();
    let obstacle = Obstacle { center: [2.6, 2.4], radius: 1.0 };
    let kappa = KappaFn::linear(1.0).unwrap();
    let x = DVector::from_row_slice(&[1.8, 1.6, 0.4]);
    let h = circle_barrier(&[x[0], x[1]], &obstacle, 3);
    let base_clf = dubins_clf();
    let base = barrier::vanilla_cbf_control(&car, &[h.clone()], &[kappa], &base_clf, &x).unwrap();
    for c in [0.5, 2.0, 10.0] {
        let scaled = ClfSpec {
            control_weight: &base_clf.control_weight * c,
            relaxation_weight: base_clf.relaxation_weight * c,
            ..base_clf.clone()
        };
        let out = barrier::vanilla_cbf_control(&car, &[h.clone()], &[kappa], &scaled, &x).unwrap();
        assert!(
            (&out.control - &base.control).amax() <= 1e-6,
            "scaling by {c} moved the control"
        );
    }
}

#[test]
fn quad_barrier_lift_gradient_matches_finite_differences() {
    let quad = PlanarQuadcopter::new(QuadParams::default());
    let obstacle = Obstacle { center: [2.1, 2.1], radius: 0.5 };
    let kappa1 = KappaFn::linear(6.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for trial in 0..20 {
        let x = DVector::from_fn(6, |i, _| {
            if i < 2 {
                rng.random_range(-3.0..3.0)
            } else {
                rng.random_range(-1.0..1.0)
            }
        });
        let h = circle_barrier(&[x[0], x[1]], &obstacle, 6);
        let psi = barrier::hocbf_psi(&quad, &h, &x, kappa1).unwrap();
        let step = 1e-6;
        for j in 0..6 {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[j] += step;
            lo[j] -= step;
            let psi_at = |s: &DVector<f64>| {
                let hh = circle_barrier(&[s[0], s[1]], &obstacle, 6);
                barrier::hocbf_psi(&quad, &hh, s, kappa1).unwrap().value
            };
            let fd = (psi_at(&hi) - psi_at(&lo)) / (2.0 * step);
            let rel = (psi.gradient[j] - fd).abs() / fd.abs().max(1.0);
            assert!(
                rel <= 1e-5,
                "trial {trial} axis {j}: grad {} vs fd {fd}",
                psi.gradient[j]
            );
        }
    }
}

#[test]
fn zero_noise_second_order_reduces_to_deterministic_condition() {
    let quad = PlanarQuadcopter::new(QuadParams::default());
    let obstacle = Obstacle { center: [2.1, 2.1], radius: 0.5 };
    let kappa1 = KappaFn::linear(6.0).unwrap();
    let kappa2 = KappaFn::linear(2.0).unwrap();
    let tracking = TrackingObjective {
        nominal: DVector::from_row_slice(&[4.9, 4.9]),
        weight: DMatrix::identity(2, 2),
    };
    let samples = SampleSet::from_values(vec![0.0; 10]).unwrap();
    let mut spec = test_spec();
    spec.lower_bound = 0.0;
    spec.upper_bound = 0.0;
    let x = DVector::from_row_slice(&[1.6, 1.7, 0.05, 0.4, 0.3, 0.0]);
    let h = circle_barrier(&[x[0], x[1]], &obstacle, 6);
    let psi = barrier::hocbf_psi(&quad, &h, &x, kappa1).unwrap();

    let (robust, risks) = barrier::drcbf_second_order_control(
        &quad,
        &[psi.clone()],
        &[kappa1],
        &[kappa2],
        &samples,
        &spec,
        &tracking,
        &x,
    )
    .unwrap();
    assert!((risks[0].value - psi.value).abs() <= 1e-7);

    let deterministic =
        barrier::hocbf_control(&quad, &[psi.clone()], &[kappa2], &tracking, &x).unwrap();
    assert!(
        (&robust.control - &deterministic.control).amax() <= 1e-5,
        "{:?} vs {:?}",
        robust.control,
        deterministic.control
    );

    // Oracle: assemble the second-order condition row directly.
    let g = quad.actuation(&x);
    let f = quad.drift(&x);
    let row = psi.gradient.transpose() * &g;
    let bound = -psi.gradient.dot(&f) - kappa2.apply(psi.value);
    let cost = 2.0 * DMatrix::<f64>::identity(2, 2);
    let lin = -2.0 * &tracking.nominal;
    let problem = QpProblem::new(cost, lin)
        .unwrap()
        .with_ineq(DMatrix::from_row_slice(1, 2, row.as_slice()), DVector::from_element(1, bound))
        .unwrap()
        .with_box_bounds(&[0.0, 0.0], &[15.0, 15.0])
        .unwrap();
    let oracle = qp::solve_qp(&problem, qp::DEFAULT_TOL).unwrap();
    assert!(
        (&deterministic.control - &oracle.primal).amax() <= 1e-6,
        "{:?} vs {:?}",
        deterministic.control,
        oracle.primal
    );
}

#[test]
fn noisy_second_order_admissible_set_shrinks() {
    let quad = PlanarQuadcopter::new(QuadParams::default());
    let obstacle = Obstacle { center: [2.1, 2.1], radius: 0.5 };
    let kappa1 = KappaFn::linear(6.0).unwrap();
    let spec = test_spec();
    let noisy = SampleSet::from_values(vec![-0.1, 0.1]).unwrap();
    let x = DVector::from_row_slice(&[1.65, 1.75, 0.02, 0.5, 0.45, 0.0]);
    let h = circle_barrier(&[x[0], x[1]], &obstacle, 6);
    let psi = barrier::hocbf_psi(&quad, &h, &x, kappa1).unwrap();
    let risks = barrier::second_order_risks(&[psi.clone()], &[kappa1], &noisy, &spec).unwrap();
    // Same gradient row; a strictly larger condition value shrinks the
    // admissible half-space strictly.
    assert!(risks[0].0.value > psi.value + 0.05);
    assert!((&risks[0].1 - &psi.gradient).amax() <= 1e-5);
}

#[test]
fn tracking_minimality_without_obstacles() {
    let quad = PlanarQuadcopter::new(QuadParams::default());
    let tracking = TrackingObjective {
        nominal: DVector::from_row_slice(&[5.2, 4.3]),
        weight: DMatrix::identity(2, 2),
    };
    let x = DVector::from_row_slice(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    let out = barrier::solve_control_qp(
        &quad,
        &[],
        &ControlObjective::Tracking(tracking.clone()),
        &x,
        FallbackPolicy::Strict,
    )
    .unwrap();
    assert!((&out.control - &tracking.nominal).amax() <= 1e-6);
}
