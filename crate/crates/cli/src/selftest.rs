//! Built-in oracle suites: quick numerical cross-checks of the risk layer,
//! the differentiation layer, and the QP solver against the independent
//! reference implementations. The `gradient` bug injection perturbs the
//! candidate values before comparison and exists so the pipeline that
//! invokes the self-test can verify the suites actually discriminate.

use drcbf_core::diff::{self, ParamMap};
use drcbf_core::oracles;
use drcbf_core::qp::{self, QpProblem, QpStatus};
use drcbf_core::risk::{self, AmbiguitySpec, DrCase, SampleSet};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjectedBug {
    Gradient,
}

pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub struct SelfTestReport {
    pub suites: Vec<SuiteResult>,
}

impl SelfTestReport {
    pub fn all_passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }
}

pub fn run_suites(quick: bool, inject: Option<InjectedBug>) -> SelfTestReport {
    let scale = if quick { 1 } else { 4 };
    let bug = matches!(inject, Some(InjectedBug::Gradient));
    SelfTestReport {
        suites: vec![
            cvar_sorted_tail_suite(50 * scale),
            gradient_suite(25 * scale, bug),
            kkt_residual_suite(25 * scale),
        ],
    }
}

fn fail(name: &'static str, detail: String) -> SuiteResult {
    SuiteResult {
        name,
        passed: false,
        detail,
    }
}

fn pass(name: &'static str, detail: String) -> SuiteResult {
    SuiteResult {
        name,
        passed: true,
        detail,
    }
}

/// Empirical CVaR through the LP against the sorted-tail formula.
fn cvar_sorted_tail_suite(instances: usize) -> SuiteResult {
    const NAME: &str = "cvar-sorted-tail";
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0ffee);
    let mut worst = 0.0f64;
    for trial in 0..instances {
        let n = [5, 20, 100][trial % 3];
        let alpha = [0.5, 0.9, 0.95][(trial / 3) % 3];
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        match risk::empirical_cvar(&values, alpha) {
            Ok((lp, _)) => {
                let (oracle, _) = oracles::sorted_tail_cvar(&values, alpha);
                worst = worst.max((lp - oracle).abs());
            }
            Err(e) => return fail(NAME, format!("instance {trial}: {e}")),
        }
    }
    if worst <= 1e-5 {
        pass(NAME, format!("worst |lp - oracle| = {worst:.2e}"))
    } else {
        fail(NAME, format!("worst |lp - oracle| = {worst:.2e} > 1e-5"))
    }
}

/// Value gradients against central finite differences, on random QPs and on
/// the worst-case CVaR level sensitivity.
fn gradient_suite(instances: usize, inject_bug: bool) -> SuiteResult {
    const NAME: &str = "finite-difference-gradients";
    let mut rng = ChaCha8Rng::seed_from_u64(0xfeed);
    let corruption = if inject_bug { 1e-2 } else { 0.0 };
    let step = 1e-5;
    let mut worst = 0.0f64;
    for trial in 0..instances {
        // Strictly feasible random QP with one rhs parameter.
        let n = rng.random_range(2..=6);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let p_mat = &m * m.transpose() + DMatrix::identity(n, n) * 0.5;
        let q = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let witness = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let r = rng.random_range(1..=n);
        let g = DMatrix::from_fn(r, n, |_, _| rng.random_range(-1.0..1.0));
        let h = &g * &witness + DVector::from_fn(r, |_, _| rng.random_range(0.1..1.0));
        let problem = match QpProblem::new(p_mat, q).and_then(|p| p.with_ineq(g, h)) {
            Ok(p) => p,
            Err(e) => return fail(NAME, format!("instance {trial}: {e}")),
        };
        let sol = match qp::solve_qp(&problem, qp::DEFAULT_TOL) {
            Ok(s) if s.status == QpStatus::Optimal => s,
            Ok(s) => return fail(NAME, format!("instance {trial}: status {:?}", s.status)),
            Err(e) => return fail(NAME, format!("instance {trial}: {e}")),
        };
        let row = rng.random_range(0..r);
        let map = ParamMap::new(1).ineq_rhs(0, row, 1.0);
        let grad = match diff::value_gradient(&problem, &sol, &map) {
            Ok(g) => g.d_value[0] + corruption,
            Err(e) => return fail(NAME, format!("instance {trial}: {e}")),
        };
        let probe = |t: f64| -> Result<f64, String> {
            let shifted = map
                .apply(&problem, &DVector::from_element(1, t))
                .map_err(|e| e.to_string())?;
            let s = qp::solve_qp(&shifted, 1e-10).map_err(|e| e.to_string())?;
            Ok(s.objective_value)
        };
        let fd = match (probe(step), probe(-step)) {
            (Ok(a), Ok(b)) => (a - b) / (2.0 * step),
            (Err(e), _) | (_, Err(e)) => return fail(NAME, format!("instance {trial}: {e}")),
        };
        worst = worst.max((grad - fd).abs() / fd.abs().max(1.0));

        // Worst-case CVaR level sensitivity against a finite difference.
        let samples = SampleSet::draw(10, 0.0, 0.1, trial as u64).expect("draw");
        let spec = AmbiguitySpec {
            alpha: 0.95,
            lambda_penalty: 1.0,
            lower_bound: -0.3,
            upper_bound: 0.3,
            case_selector: if trial % 2 == 0 { DrCase::Case1 } else { DrCase::Case2 },
            wasserstein_radius: 0.0,
        };
        let h_val = rng.random_range(-1.0..1.0);
        let est = match risk::dr_cvar(h_val, &samples, &spec) {
            Ok(e) => e,
            Err(e) => return fail(NAME, format!("instance {trial}: {e}")),
        };
        let up = risk::dr_cvar(h_val + step, &samples, &spec).map(|e| e.value);
        let down = risk::dr_cvar(h_val - step, &samples, &spec).map(|e| e.value);
        let fd_h = match (up, down) {
            (Ok(a), Ok(b)) => (a - b) / (2.0 * step),
            (Err(e), _) | (_, Err(e)) => return fail(NAME, format!("instance {trial}: {e}")),
        };
        worst = worst.max((est.d_value_d_h + corruption - fd_h).abs() / fd_h.abs().max(1.0));
    }
    if worst <= 1e-4 {
        pass(NAME, format!("worst relative error = {worst:.2e}"))
    } else {
        fail(NAME, format!("worst relative error = {worst:.2e} > 1e-4"))
    }
}

/// Solver status and KKT residuals on random feasible QPs plus the analytic
/// single-constraint problem.
fn kkt_residual_suite(instances: usize) -> SuiteResult {
    const NAME: &str = "qp-kkt-residuals";
    // Analytic check first: min 1/2 u^2 s.t. u >= 1.
    let analytic = QpProblem::new(DMatrix::identity(1, 1), DVector::zeros(1))
        .and_then(|p| p.with_ineq(DMatrix::from_element(1, 1, -1.0), DVector::from_element(1, -1.0)))
        .expect("analytic problem");
    match qp::solve_qp(&analytic, qp::DEFAULT_TOL) {
        Ok(sol) => {
            if (sol.primal[0] - 1.0).abs() > 1e-7 || (sol.ineq_duals[0] - 1.0).abs() > 1e-7 {
                return fail(NAME, format!("analytic optimum off: {:?}", sol.primal));
            }
        }
        Err(e) => return fail(NAME, e.to_string()),
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xbeef);
    let mut worst = 0.0f64;
    for trial in 0..instances {
        let n = rng.random_range(2..=8);
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let p_mat = &m * m.transpose() + DMatrix::identity(n, n) * 0.3;
        let q = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let witness = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let r = rng.random_range(1..=2 * n);
        let g = DMatrix::from_fn(r, n, |_, _| rng.random_range(-1.0..1.0));
        let h = &g * &witness + DVector::from_fn(r, |_, _| rng.random_range(0.1..1.0));
        let problem = match QpProblem::new(p_mat, q).and_then(|p| p.with_ineq(g, h)) {
            Ok(p) => p,
            Err(e) => return fail(NAME, format!("instance {trial}: {e}")),
        };
        match qp::solve_qp(&problem, qp::DEFAULT_TOL) {
            Ok(sol) => {
                if sol.status != QpStatus::Optimal {
                    return fail(NAME, format!("instance {trial}: status {:?}", sol.status));
                }
                match qp::kkt_residual(&problem, &sol) {
                    Ok(res) => worst = worst.max(res),
                    Err(e) => return fail(NAME, format!("instance {trial}: {e}")),
                }
            }
            Err(e) => return fail(NAME, format!("instance {trial}: {e}")),
        }
    }
    if worst <= qp::DEFAULT_TOL {
        pass(NAME, format!("worst residual = {worst:.2e}"))
    } else {
        fail(NAME, format!("worst residual = {worst:.2e} > {:.0e}", qp::DEFAULT_TOL))
    }
}
