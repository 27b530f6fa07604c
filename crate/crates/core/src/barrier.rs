//! Control barrier conditions and the controller QPs that enforce them.
//!
//! The safety convention throughout is `h(x) <= 0`, so every barrier
//! condition reads `grad . (f + g u) + kappa(value) <= 0`. Conditions are
//! affine in the control and stack directly into a QP next to a relaxed
//! Lyapunov constraint (goal-seeking plants) or a tracking objective
//! (reference-following plants). Second-order constraints go through one
//! analytic barrier lift first, after which the scalar noise channel is
//! still additive and the risk layer applies unchanged.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qp::{self, QpProblem, QpStatus};
use crate::risk::{self, AmbiguitySpec, RiskEstimate, RiskError, SampleSet};

#[derive(Debug, Error)]
pub enum BarrierError {
    #[error("class-K coefficient must be positive, got {0}")]
    BadKappa(f64),
    #[error("barrier/state dimension mismatch: gradient has {got}, state has {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("barrier has relative degree one w.r.t. the model (grad . g = {0:.3e} != 0)")]
    RelativeDegree(f64),
    #[error("barrier lift needs the second spatial derivative of h")]
    MissingHessian,
    #[error("controller QP {status:?}: {diagnosis}")]
    InfeasibleQp { status: QpStatus, diagnosis: String },
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Qp(#[from] qp::QpError),
}

/// A barrier (or lifted barrier) evaluated at one state: the scalar value,
/// its state gradient, and optionally the second spatial derivative and the
/// drift derivative used by the second-order lift.
#[derive(Debug, Clone)]
pub struct BarrierEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: Option<DMatrix<f64>>,
    pub h_dot: Option<f64>,
}

impl BarrierEval {
    pub fn new(value: f64, gradient: DVector<f64>) -> Self {
        Self {
            value,
            gradient,
            hessian: None,
            h_dot: None,
        }
    }
}

/// Linear class-K function `kappa(v) = k v` with `k > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaFn {
    coefficient: f64,
}

impl KappaFn {
    pub fn linear(coefficient: f64) -> Result<Self, BarrierError> {
        if !(coefficient > 0.0) {
            return Err(BarrierError::BadKappa(coefficient));
        }
        Ok(Self { coefficient })
    }

    pub fn apply(&self, v: f64) -> f64 {
        self.coefficient * v
    }

    pub fn coefficient(&self) -> f64 {
        self.coefficient
    }
}

/// Control-affine dynamics `x' = f(x) + g(x) u` with box-bounded controls.
pub trait ControlAffineModel {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn drift(&self, x: &DVector<f64>) -> DVector<f64>;
    fn actuation(&self, x: &DVector<f64>) -> DMatrix<f64>;
    /// Jacobian of the drift, used by the second-order barrier lift.
    fn drift_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
    fn control_lower(&self) -> DVector<f64>;
    fn control_upper(&self) -> DVector<f64>;
    /// Post-integration normalization (angle wrapping).
    fn wrap_state(&self, x: DVector<f64>) -> DVector<f64> {
        x
    }
}

/// Goal-seeking objective: minimize `u'Qu + q delta^2` subject to the
/// relaxed Lyapunov decrease `dV . (f + g u) + V <= delta` for
/// `V = 1/2 (x - target)' W (x - target)` with diagonal `W`.
#[derive(Debug, Clone)]
pub struct ClfSpec {
    pub target: DVector<f64>,
    pub state_weight: DVector<f64>,
    pub control_weight: DMatrix<f64>,
    pub relaxation_weight: f64,
}

impl ClfSpec {
    pub fn lyapunov(&self, x: &DVector<f64>) -> f64 {
        let e = x - &self.target;
        0.5 * e.iter().zip(self.state_weight.iter()).map(|(v, w)| w * v * v).sum::<f64>()
    }

    fn weighted_error(&self, x: &DVector<f64>) -> DVector<f64> {
        let e = x - &self.target;
        DVector::from_fn(e.len(), |i, _| self.state_weight[i] * e[i])
    }
}

/// Reference-following objective: minimize `(u - nominal)' W (u - nominal)`.
#[derive(Debug, Clone)]
pub struct TrackingObjective {
    pub nominal: DVector<f64>,
    pub weight: DMatrix<f64>,
}

/// What the controller QP minimizes.
#[derive(Debug, Clone)]
pub enum ControlObjective {
    Clf(ClfSpec),
    Tracking(TrackingObjective),
    MinNorm,
}

/// One affine-in-control barrier condition
/// `gradient . (f + g u) + kappa(value) <= 0`.
#[derive(Debug, Clone)]
pub struct ControlBarrierCondition {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub kappa: KappaFn,
}

/// How infeasible controller QPs are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FallbackPolicy {
    /// Surface the infeasibility as an error with a diagnosis.
    Strict,
    /// Retry as a safety-only min-norm QP, then as a bounded
    /// violation-minimizing QP.
    Ladder,
}

/// How far down the fallback ladder a step had to go.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fallback {
    None,
    SafetyOnly,
    MinViolation,
}

#[derive(Debug, Clone)]
pub struct ControllerOutput {
    pub control: DVector<f64>,
    pub relaxation: Option<f64>,
    pub fallback: Fallback,
    pub qp_iterations: usize,
}

/// Min-norm CLF controller with noise-free barrier conditions.
pub fn vanilla_cbf_control(
    model: &dyn ControlAffineModel,
    barriers: &[BarrierEval],
    kappas: &[KappaFn],
    clf: &ClfSpec,
    x: &DVector<f64>,
) -> Result<ControllerOutput, BarrierError> {
    let cbcs = pair_conditions(barriers, kappas, x.len())?;
    solve_control_qp(model, &cbcs, &ControlObjective::Clf(clf.clone()), x, FallbackPolicy::Strict)
}

/// CLF controller with distributionally robust barrier conditions built
/// from risk estimates and their state gradients.
pub fn drcbf_control(
    model: &dyn ControlAffineModel,
    risks: &[(RiskEstimate, DVector<f64>)],
    kappas: &[KappaFn],
    clf: &ClfSpec,
    x: &DVector<f64>,
) -> Result<ControllerOutput, BarrierError> {
    let cbcs = risk_conditions(risks, kappas, x.len())?;
    solve_control_qp(model, &cbcs, &ControlObjective::Clf(clf.clone()), x, FallbackPolicy::Strict)
}

/// Builds barrier conditions from noise-free evaluations.
pub fn pair_conditions(
    barriers: &[BarrierEval],
    kappas: &[KappaFn],
    state_dim: usize,
) -> Result<Vec<ControlBarrierCondition>, BarrierError> {
    if barriers.len() != kappas.len() {
        return Err(BarrierError::DimensionMismatch {
            got: kappas.len(),
            want: barriers.len(),
        });
    }
    barriers
        .iter()
        .zip(kappas)
        .map(|(b, &kappa)| {
            if b.gradient.len() != state_dim {
                return Err(BarrierError::DimensionMismatch {
                    got: b.gradient.len(),
                    want: state_dim,
                });
            }
            Ok(ControlBarrierCondition {
                value: b.value,
                gradient: b.gradient.clone(),
                kappa,
            })
        })
        .collect()
}

/// Builds barrier conditions from risk estimates.
pub fn risk_conditions(
    risks: &[(RiskEstimate, DVector<f64>)],
    kappas: &[KappaFn],
    state_dim: usize,
) -> Result<Vec<ControlBarrierCondition>, BarrierError> {
    if risks.len() != kappas.len() {
        return Err(BarrierError::DimensionMismatch {
            got: kappas.len(),
            want: risks.len(),
        });
    }
    risks
        .iter()
        .zip(kappas)
        .map(|((est, grad), &kappa)| {
            if grad.len() != state_dim {
                return Err(BarrierError::DimensionMismatch {
                    got: grad.len(),
                    want: state_dim,
                });
            }
            Ok(ControlBarrierCondition {
                value: est.value,
                gradient: grad.clone(),
                kappa,
            })
        })
        .collect()
}

/// Lifts a relative-degree-two barrier once along the dynamics:
/// `psi = h_dot + kappa1(h)` with
/// `grad psi = H_h f + J_f' grad h + k1 grad h`, all analytic.
pub fn hocbf_psi(
    model: &dyn ControlAffineModel,
    h_eval: &BarrierEval,
    x: &DVector<f64>,
    kappa1: KappaFn,
) -> Result<BarrierEval, BarrierError> {
    let n = model.state_dim();
    if h_eval.gradient.len() != n || x.len() != n {
        return Err(BarrierError::DimensionMismatch {
            got: h_eval.gradient.len(),
            want: n,
        });
    }
    let coupling = (h_eval.gradient.transpose() * model.actuation(x)).amax();
    if coupling > 1e-9 {
        return Err(BarrierError::RelativeDegree(coupling));
    }
    let hessian = h_eval.hessian.as_ref().ok_or(BarrierError::MissingHessian)?;
    let f = model.drift(x);
    let h_dot = h_eval.gradient.dot(&f);
    let grad_h_dot = hessian * &f + model.drift_jacobian(x).transpose() * &h_eval.gradient;
    let gradient = grad_h_dot + kappa1.coefficient() * &h_eval.gradient;
    Ok(BarrierEval {
        value: h_dot + kappa1.apply(h_eval.value),
        gradient,
        hessian: None,
        h_dot: Some(h_dot),
    })
}

/// Deterministic second-order controller: enforces
/// `grad psi . (f + g u) + kappa2(psi) <= 0` under a tracking objective.
pub fn hocbf_control(
    model: &dyn ControlAffineModel,
    psis: &[BarrierEval],
    kappa2s: &[KappaFn],
    tracking: &TrackingObjective,
    x: &DVector<f64>,
) -> Result<ControllerOutput, BarrierError> {
    let cbcs = pair_conditions(psis, kappa2s, x.len())?;
    solve_control_qp(
        model,
        &cbcs,
        &ControlObjective::Tracking(tracking.clone()),
        x,
        FallbackPolicy::Strict,
    )
}

/// Worst-case CVaR of each lifted barrier with its state gradient. A lifted
/// barrier `psi = h_dot + kappa1(h)` carries additive noise `k1 w` (linear
/// class-K composed with the additive channel), so the risk layer applies
/// unchanged with the samples and bounds scaled by `k1`.
pub fn second_order_risks(
    psis: &[BarrierEval],
    kappa1s: &[KappaFn],
    samples: &SampleSet,
    spec: &AmbiguitySpec,
) -> Result<Vec<(RiskEstimate, DVector<f64>)>, BarrierError> {
    if psis.len() != kappa1s.len() {
        return Err(BarrierError::DimensionMismatch {
            got: kappa1s.len(),
            want: psis.len(),
        });
    }
    let mut risks = Vec::with_capacity(psis.len());
    for (psi, k1) in psis.iter().zip(kappa1s) {
        let scaled_samples = samples.scaled(k1.coefficient());
        let scaled_spec = spec.scaled(k1.coefficient());
        let (est, grad) = risk::risk_gradient(psi, &scaled_samples, &scaled_spec)?;
        risks.push((est, grad));
    }
    Ok(risks)
}

/// Risk-aware second-order controller: worst-case CVaR of the lifted
/// barriers enforced with the outer class-K condition under the tracking
/// objective. Returns the per-obstacle risk estimates alongside the control.
pub fn drcbf_second_order_control(
    model: &dyn ControlAffineModel,
    psis: &[BarrierEval],
    kappa1s: &[KappaFn],
    kappa2s: &[KappaFn],
    samples: &SampleSet,
    spec: &AmbiguitySpec,
    tracking: &TrackingObjective,
    x: &DVector<f64>,
) -> Result<(ControllerOutput, Vec<RiskEstimate>), BarrierError> {
    if psis.len() != kappa2s.len() {
        return Err(BarrierError::DimensionMismatch {
            got: kappa2s.len(),
            want: psis.len(),
        });
    }
    let risks = second_order_risks(psis, kappa1s, samples, spec)?;
    let cbcs = risk_conditions(&risks, kappa2s, x.len())?;
    let out = solve_control_qp(
        model,
        &cbcs,
        &ControlObjective::Tracking(tracking.clone()),
        x,
        FallbackPolicy::Strict,
    )?;
    Ok((out, risks.into_iter().map(|(est, _)| est).collect()))
}

/// Assembles and solves the controller QP, optionally walking the fallback
/// ladder on infeasibility.
pub fn solve_control_qp(
    model: &dyn ControlAffineModel,
    cbcs: &[ControlBarrierCondition],
    objective: &ControlObjective,
    x: &DVector<f64>,
    policy: FallbackPolicy,
) -> Result<ControllerOutput, BarrierError> {
    let attempt = solve_once(model, cbcs, objective, x)?;
    match attempt {
        Ok(out) => Ok(out),
        Err(first_failure) => {
            if policy == FallbackPolicy::Strict {
                return Err(first_failure);
            }
            log::warn!("controller QP infeasible, dropping objective constraint: {first_failure}");
            if let Ok(Ok(mut out)) = solve_once(model, cbcs, &ControlObjective::MinNorm, x) {
                out.fallback = Fallback::SafetyOnly;
                return Ok(out);
            }
            log::warn!("safety-only QP infeasible, minimizing violation");
            let mut out = solve_min_violation(model, cbcs, x)?;
            out.fallback = Fallback::MinViolation;
            Ok(out)
        }
    }
}

/// Builds the QP over `[u]` or `[u, delta]` and solves it. The outer result
/// carries hard errors; the inner one carries infeasibility.
fn solve_once(
    model: &dyn ControlAffineModel,
    cbcs: &[ControlBarrierCondition],
    objective: &ControlObjective,
    x: &DVector<f64>,
) -> Result<Result<ControllerOutput, BarrierError>, BarrierError> {
    let m = model.control_dim();
    let has_relax = matches!(objective, ControlObjective::Clf(_));
    let nv = m + usize::from(has_relax);
    let f = model.drift(x);
    let g = model.actuation(x);

    let mut cost = DMatrix::zeros(nv, nv);
    let mut lin = DVector::zeros(nv);
    match objective {
        ControlObjective::Clf(clf) => {
            cost.view_mut((0, 0), (m, m))
                .copy_from(&(2.0 * &clf.control_weight));
            cost[(m, m)] = 2.0 * clf.relaxation_weight;
        }
        ControlObjective::Tracking(track) => {
            cost.view_mut((0, 0), (m, m)).copy_from(&(2.0 * &track.weight));
            lin.rows_mut(0, m)
                .copy_from(&(-2.0 * &track.weight * &track.nominal));
        }
        ControlObjective::MinNorm => {
            for i in 0..m {
                cost[(i, i)] = 2.0;
            }
        }
    }

    let extra = usize::from(has_relax);
    let mut rows = DMatrix::zeros(cbcs.len() + extra, nv);
    let mut rhs = DVector::zeros(cbcs.len() + extra);
    for (i, cbc) in cbcs.iter().enumerate() {
        let row_u = cbc.gradient.transpose() * &g;
        rows.view_mut((i, 0), (1, m)).copy_from(&row_u);
        rhs[i] = -cbc.gradient.dot(&f) - cbc.kappa.apply(cbc.value);
    }
    if let ControlObjective::Clf(clf) = objective {
        let we = clf.weighted_error(x);
        let row_u = we.transpose() * &g;
        let i = cbcs.len();
        rows.view_mut((i, 0), (1, m)).copy_from(&row_u);
        rows[(i, m)] = -1.0;
        rhs[i] = -we.dot(&f) - clf.lyapunov(x);
    }

    let mut lower: Vec<f64> = model.control_lower().iter().cloned().collect();
    let mut upper: Vec<f64> = model.control_upper().iter().cloned().collect();
    if has_relax {
        lower.push(f64::NEG_INFINITY);
        upper.push(f64::INFINITY);
    }

    let cbc_rows = rows.view((0, 0), (cbcs.len(), m)).into_owned();
    let problem = QpProblem::new(cost, lin)?
        .with_ineq(rows, rhs.clone())?
        .with_box_bounds(&lower, &upper)?;
    let sol = qp::solve_qp(&problem, qp::DEFAULT_TOL)?;
    if sol.status != QpStatus::Optimal {
        return Ok(Err(BarrierError::InfeasibleQp {
            status: sol.status,
            diagnosis: diagnose(model, &cbc_rows, &rhs),
        }));
    }
    Ok(Ok(ControllerOutput {
        control: sol.primal.rows(0, m).into_owned(),
        relaxation: has_relax.then(|| sol.primal[m]),
        fallback: Fallback::None,
        qp_iterations: sol.iterations,
    }))
}

/// Always-feasible relaxation: minimize squared barrier violations (plus a
/// small control penalty) over the control box.
fn solve_min_violation(
    model: &dyn ControlAffineModel,
    cbcs: &[ControlBarrierCondition],
    x: &DVector<f64>,
) -> Result<ControllerOutput, BarrierError> {
    let m = model.control_dim();
    let k = cbcs.len();
    let nv = m + k;
    let f = model.drift(x);
    let g = model.actuation(x);

    let mut cost = DMatrix::zeros(nv, nv);
    for i in 0..m {
        cost[(i, i)] = 2e-6;
    }
    for i in 0..k {
        cost[(m + i, m + i)] = 2.0;
    }
    let mut rows = DMatrix::zeros(2 * k, nv);
    let mut rhs = DVector::zeros(2 * k);
    for (i, cbc) in cbcs.iter().enumerate() {
        let row_u = cbc.gradient.transpose() * &g;
        rows.view_mut((i, 0), (1, m)).copy_from(&row_u);
        rows[(i, m + i)] = -1.0;
        rhs[i] = -cbc.gradient.dot(&f) - cbc.kappa.apply(cbc.value);
        rows[(k + i, m + i)] = -1.0;
        rhs[k + i] = 0.0;
    }
    let mut lower: Vec<f64> = model.control_lower().iter().cloned().collect();
    let mut upper: Vec<f64> = model.control_upper().iter().cloned().collect();
    lower.extend(std::iter::repeat(f64::NEG_INFINITY).take(k));
    upper.extend(std::iter::repeat(f64::INFINITY).take(k));

    let problem = QpProblem::new(cost, DVector::zeros(nv))?
        .with_ineq(rows, rhs)?
        .with_box_bounds(&lower, &upper)?;
    let sol = qp::solve_qp(&problem, qp::DEFAULT_TOL)?;
    if sol.status != QpStatus::Optimal {
        return Err(BarrierError::InfeasibleQp {
            status: sol.status,
            diagnosis: "violation-minimizing QP failed".into(),
        });
    }
    Ok(ControllerOutput {
        control: sol.primal.rows(0, m).into_owned(),
        relaxation: None,
        fallback: Fallback::MinViolation,
        qp_iterations: sol.iterations,
    })
}

/// Names which constraint family makes the QP infeasible: a single barrier
/// row whose smallest achievable value over the control box (interval
/// arithmetic on the row coefficients) still exceeds its bound, or a joint
/// conflict otherwise.
fn diagnose(model: &dyn ControlAffineModel, cbc_rows: &DMatrix<f64>, rhs: &DVector<f64>) -> String {
    let lower = model.control_lower();
    let upper = model.control_upper();
    let mut conflicts = Vec::new();
    for i in 0..cbc_rows.nrows() {
        let mut min_val = 0.0;
        for j in 0..model.control_dim() {
            let a = cbc_rows[(i, j)];
            min_val += if a >= 0.0 { a * lower[j] } else { a * upper[j] };
        }
        if min_val > rhs[i] {
            conflicts.push(format!(
                "barrier condition {i} conflicts with control bounds (needs {:.3e} <= {:.3e})",
                min_val, rhs[i]
            ));
        }
    }
    if conflicts.is_empty() {
        "barrier conditions jointly infeasible with the objective constraint".into()
    } else {
        conflicts.join("; ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::DrCase;
    use approx::assert_relative_eq;

    /// 1-D velocity-controlled plant `x' = u`.
    struct ScalarPlant;

    impl ControlAffineModel for ScalarPlant {
        fn state_dim(&self) -> usize {
            1
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn drift(&self, _x: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(1)
        }
        fn actuation(&self, _x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::identity(1, 1)
        }
        fn drift_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(1, 1)
        }
        fn control_lower(&self) -> DVector<f64> {
            DVector::from_element(1, -10.0)
        }
        fn control_upper(&self) -> DVector<f64> {
            DVector::from_element(1, 10.0)
        }
    }

    /// Double integrator `x'' = u` with state `(x, v)`.
    struct DoubleIntegrator;

    impl ControlAffineModel for DoubleIntegrator {
        fn state_dim(&self) -> usize {
            2
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::from_row_slice(&[x[1], 0.0])
        }
        fn actuation(&self, _x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0])
        }
        fn drift_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0])
        }
        fn control_lower(&self) -> DVector<f64> {
            DVector::from_element(1, -100.0)
        }
        fn control_upper(&self) -> DVector<f64> {
            DVector::from_element(1, 100.0)
        }
    }

    fn scalar_clf(target: f64) -> ClfSpec {
        ClfSpec {
            target: DVector::from_element(1, target),
            state_weight: DVector::from_element(1, 1.0),
            control_weight: DMatrix::identity(1, 1),
            relaxation_weight: 10.0,
        }
    }

    #[test]
    fn unsafe_state_forces_braking_control() {
        // h = x - 1 (safe region x <= 1), kappa(h) = h, at x = 2 the
        // condition reads u + (x - 1) <= 0, so u <= -1.
        let plant = ScalarPlant;
        let x = DVector::from_element(1, 2.0);
        let h = BarrierEval::new(x[0] - 1.0, DVector::from_element(1, 1.0));
        let out = vanilla_cbf_control(
            &plant,
            &[h],
            &[KappaFn::linear(1.0).unwrap()],
            &scalar_clf(2.0), // goal at the current point: CLF wants u = 0
            &x,
        )
        .unwrap();
        assert!(out.control[0] <= -1.0 + 1e-6, "u = {}", out.control[0]);
    }

    #[test]
    fn inactive_barrier_returns_clf_optimum() {
        // Far in the safe region the barrier row is slack and the control
        // matches the pure CLF solution.
        let plant = ScalarPlant;
        let x = DVector::from_element(1, -5.0);
        let h = BarrierEval::new(x[0] - 1.0, DVector::from_element(1, 1.0));
        let clf = scalar_clf(0.0);
        let with_barrier = vanilla_cbf_control(
            &plant,
            &[h],
            &[KappaFn::linear(1.0).unwrap()],
            &clf,
            &x,
        )
        .unwrap();
        let without = solve_control_qp(
            &plant,
            &[],
            &ControlObjective::Clf(clf),
            &x,
            FallbackPolicy::Strict,
        )
        .unwrap();
        assert_relative_eq!(with_barrier.control[0], without.control[0], epsilon = 1e-6);
    }

    #[test]
    fn robust_condition_tightens_by_worst_sample() {
        // With samples {-0.1, +0.1} the Case-1 value is h + 0.1, so the
        // admissible set shifts by the worst sample versus the vanilla CBC.
        let plant = ScalarPlant;
        let x = DVector::from_element(1, 2.0);
        let h = BarrierEval::new(x[0] - 1.0, DVector::from_element(1, 1.0));
        let samples = SampleSet::from_values(vec![-0.1, 0.1]).unwrap();
        let spec = AmbiguitySpec {
            alpha: 0.95,
            lambda_penalty: 1.0,
            lower_bound: -0.3,
            upper_bound: 0.3,
            case_selector: DrCase::Case1,
            wasserstein_radius: 0.0,
        };
        let risk_out = risk::risk_gradient(&h, &samples, &spec).unwrap();
        assert_relative_eq!(risk_out.0.value, 1.1, epsilon = 1e-6);
        let out = drcbf_control(
            &plant,
            &[risk_out],
            &[KappaFn::linear(1.0).unwrap()],
            &scalar_clf(2.0),
            &x,
        )
        .unwrap();
        // u + (h + 0.1) <= 0 -> u <= -1.1
        assert!(out.control[0] <= -1.1 + 1e-6, "u = {}", out.control[0]);
    }

    #[test]
    fn robust_control_matches_vanilla_when_risk_is_slack() {
        let plant = ScalarPlant;
        let x = DVector::from_element(1, -8.0);
        let h = BarrierEval::new(x[0] - 1.0, DVector::from_element(1, 1.0));
        let samples = SampleSet::from_values(vec![-0.1, 0.0, 0.1]).unwrap();
        let spec = AmbiguitySpec {
            alpha: 0.95,
            lambda_penalty: 1.0,
            lower_bound: -0.3,
            upper_bound: 0.3,
            case_selector: DrCase::Case1,
            wasserstein_radius: 0.0,
        };
        let clf = scalar_clf(0.0);
        let risk_out = risk::risk_gradient(&h, &samples, &spec).unwrap();
        let robust = drcbf_control(
            &plant,
            &[risk_out],
            &[KappaFn::linear(1.0).unwrap()],
            &clf,
            &x,
        )
        .unwrap();
        let vanilla = vanilla_cbf_control(
            &plant,
            &[h],
            &[KappaFn::linear(1.0).unwrap()],
            &clf,
            &x,
        )
        .unwrap();
        assert_relative_eq!(robust.control[0], vanilla.control[0], epsilon = 1e-6);
    }

    #[test]
    fn barrier_lift_on_double_integrator() {
        // h = x, kappa1(h) = h: psi = v + x with gradient (1, 1).
        let plant = DoubleIntegrator;
        let x = DVector::from_row_slice(&[0.7, -0.2]);
        let h = BarrierEval {
            value: x[0],
            gradient: DVector::from_row_slice(&[1.0, 0.0]),
            hessian: Some(DMatrix::zeros(2, 2)),
            h_dot: None,
        };
        let psi = hocbf_psi(&plant, &h, &x, KappaFn::linear(1.0).unwrap()).unwrap();
        assert_relative_eq!(psi.value, x[1] + x[0], epsilon = 1e-12);
        assert_relative_eq!(psi.gradient[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(psi.gradient[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(psi.h_dot.unwrap(), x[1], epsilon = 1e-12);
    }

    #[test]
    fn barrier_lift_at_rest_is_kappa_of_h() {
        let plant = DoubleIntegrator;
        let x = DVector::from_row_slice(&[0.4, 0.0]);
        let h = BarrierEval {
            value: -1.3,
            gradient: DVector::from_row_slice(&[2.0, 0.0]),
            hessian: Some(DMatrix::zeros(2, 2)),
            h_dot: None,
        };
        let kappa = KappaFn::linear(3.0).unwrap();
        let psi = hocbf_psi(&plant, &h, &x, kappa).unwrap();
        assert_relative_eq!(psi.value, kappa.apply(-1.3), epsilon = 1e-12);
    }

    #[test]
    fn barrier_lift_rejects_relative_degree_one() {
        // A gradient touching the velocity makes grad . g nonzero.
        let plant = DoubleIntegrator;
        let x = DVector::from_row_slice(&[0.0, 0.0]);
        let h = BarrierEval {
            value: 0.0,
            gradient: DVector::from_row_slice(&[1.0, 0.5]),
            hessian: Some(DMatrix::zeros(2, 2)),
            h_dot: None,
        };
        assert!(matches!(
            hocbf_psi(&plant, &h, &x, KappaFn::linear(1.0).unwrap()),
            Err(BarrierError::RelativeDegree(_))
        ));
    }

    #[test]
    fn infeasible_qp_reports_bounds_conflict() {
        // Gradient 1, value huge: u <= -kappa(h) needs u < -10 but the box
        // stops at -10.
        let plant = ScalarPlant;
        let x = DVector::from_element(1, 0.0);
        let h = BarrierEval::new(100.0, DVector::from_element(1, 1.0));
        let err = vanilla_cbf_control(
            &plant,
            &[h],
            &[KappaFn::linear(1.0).unwrap()],
            &scalar_clf(0.0),
            &x,
        )
        .unwrap_err();
        match err {
            BarrierError::InfeasibleQp { diagnosis, .. } => {
                assert!(diagnosis.contains("control bounds"), "{diagnosis}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn fallback_ladder_minimizes_violation() {
        let plant = ScalarPlant;
        let x = DVector::from_element(1, 0.0);
        let cbcs = pair_conditions(
            &[BarrierEval::new(100.0, DVector::from_element(1, 1.0))],
            &[KappaFn::linear(1.0).unwrap()],
            1,
        )
        .unwrap();
        let out = solve_control_qp(
            &plant,
            &cbcs,
            &ControlObjective::Clf(scalar_clf(0.0)),
            &x,
            FallbackPolicy::Ladder,
        )
        .unwrap();
        assert_eq!(out.fallback, Fallback::MinViolation);
        // Best effort: slam to the lower bound.
        assert_relative_eq!(out.control[0], -10.0, epsilon = 1e-4);
    }

    #[test]
    fn rejects_nonpositive_kappa() {
        assert!(KappaFn::linear(0.0).is_err());
        assert!(KappaFn::linear(-1.0).is_err());
    }
}
