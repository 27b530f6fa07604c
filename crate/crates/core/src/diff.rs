//! Differentiation through solved convex programs.
//!
//! Two routes are provided. [`differentiate_solution`] solves the block
//! linear system obtained by differentiating the KKT conditions at the
//! optimum, giving the full Jacobian of the primal-dual solution with
//! respect to problem parameters. [`value_gradient`] uses the envelope
//! theorem instead: the derivative of the optimal value is the partial
//! derivative of the Lagrangian at the optimum, which for right-hand-side
//! parameters reduces to the (negated) duals. The controller only needs the
//! value route; the full Jacobian is kept for completeness and testing.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::qp::{self, QpProblem, QpSolution, QpStatus};

/// Optimality slack accepted before differentiating.
pub const OPTIMALITY_TOL: f64 = 1e-6;
/// Strict-complementarity threshold: `|dual| + |slack|` must exceed this for
/// every inequality row.
pub const STRICT_COMPLEMENTARITY_TOL: f64 = 1e-7;
/// Quadratic regularization used to differentiate LPs, whose solution maps
/// are set-valued without it.
pub const LP_SMOOTHING: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("solution is not optimal (status {status:?}, kkt residual {residual:.3e})")]
    NotOptimal { status: QpStatus, residual: f64 },
    #[error("degenerate KKT system: {0}")]
    DegenerateKkt(String),
    #[error("parameter map references out-of-range entry: {0}")]
    BadParamMap(String),
    #[error(transparent)]
    Qp(#[from] qp::QpError),
}

/// A single problem-data cell a parameter feeds into.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DataEntry {
    CostMatrix(usize, usize),
    CostVector(usize),
    EqMatrix(usize, usize),
    EqRhs(usize),
    IneqMatrix(usize, usize),
    IneqRhs(usize),
}

/// Describes how a parameter vector enters the problem data: each entry
/// states that cell `target` moves at rate `coeff` per unit of parameter
/// `param`. Dependence is affine, which covers every program in this crate.
#[derive(Debug, Clone, Default)]
pub struct ParamMap {
    n_params: usize,
    entries: Vec<(usize, DataEntry, f64)>,
}

impl ParamMap {
    pub fn new(n_params: usize) -> Self {
        Self {
            n_params,
            entries: Vec::new(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Registers sensitivity of one data cell to one parameter. For cost
    /// matrix entries off the diagonal, register both symmetric cells so the
    /// perturbed matrix stays symmetric.
    pub fn entry(mut self, param: usize, target: DataEntry, coeff: f64) -> Self {
        self.entries.push((param, target, coeff));
        self
    }

    pub fn cost_vector(self, param: usize, index: usize, coeff: f64) -> Self {
        self.entry(param, DataEntry::CostVector(index), coeff)
    }

    pub fn ineq_rhs(self, param: usize, row: usize, coeff: f64) -> Self {
        self.entry(param, DataEntry::IneqRhs(row), coeff)
    }

    pub fn eq_rhs(self, param: usize, row: usize, coeff: f64) -> Self {
        self.entry(param, DataEntry::EqRhs(row), coeff)
    }

    /// Whether every referenced cell is a constraint right-hand side.
    pub fn rhs_only(&self) -> bool {
        self.entries
            .iter()
            .all(|(_, t, _)| matches!(t, DataEntry::EqRhs(_) | DataEntry::IneqRhs(_)))
    }

    /// Applies the map: returns the problem shifted by `theta` from `base`.
    pub fn apply(&self, base: &QpProblem, theta: &DVector<f64>) -> Result<QpProblem, DiffError> {
        self.check(base)?;
        let mut shifted = base.clone();
        {
            let (q_mat, q_vec, a, b, g, h) = shifted.data_mut();
            for &(param, target, coeff) in &self.entries {
                let delta = coeff * theta[param];
                match target {
                    DataEntry::CostMatrix(i, j) => q_mat[(i, j)] += delta,
                    DataEntry::CostVector(i) => q_vec[i] += delta,
                    DataEntry::EqMatrix(i, j) => a[(i, j)] += delta,
                    DataEntry::EqRhs(i) => b[i] += delta,
                    DataEntry::IneqMatrix(i, j) => g[(i, j)] += delta,
                    DataEntry::IneqRhs(i) => h[i] += delta,
                }
            }
        }
        Ok(shifted)
    }

    /// Reparameterizes through `theta = M phi (+ const)`: the returned map's
    /// parameter `l` moves each cell at the combined rate `coeff * M[j, l]`.
    pub fn compose_affine(&self, m: &DMatrix<f64>) -> ParamMap {
        let mut out = ParamMap::new(m.ncols());
        for &(param, target, coeff) in &self.entries {
            for l in 0..m.ncols() {
                let rate = coeff * m[(param, l)];
                if rate != 0.0 {
                    out.entries.push((l, target, rate));
                }
            }
        }
        out
    }

    fn check(&self, problem: &QpProblem) -> Result<(), DiffError> {
        let (n, p, r) = (problem.num_vars(), problem.num_eq(), problem.num_ineq());
        for &(param, target, _) in &self.entries {
            if param >= self.n_params {
                return Err(DiffError::BadParamMap(format!(
                    "parameter index {param} out of {}",
                    self.n_params
                )));
            }
            let ok = match target {
                DataEntry::CostMatrix(i, j) => i < n && j < n,
                DataEntry::CostVector(i) => i < n,
                DataEntry::EqMatrix(i, j) => i < p && j < n,
                DataEntry::EqRhs(i) => i < p,
                DataEntry::IneqMatrix(i, j) => i < r && j < n,
                DataEntry::IneqRhs(i) => i < r,
            };
            if !ok {
                return Err(DiffError::BadParamMap(format!("{target:?}")));
            }
        }
        Ok(())
    }

    /// Differential of the problem data in direction `e_param`, contracted
    /// against the current solution to form the KKT right-hand side pieces.
    fn kkt_rhs_column(
        &self,
        param: usize,
        problem: &QpProblem,
        x: &DVector<f64>,
        eq_duals: &DVector<f64>,
        ineq_duals: &DVector<f64>,
    ) -> DVector<f64> {
        let (n, p, r) = (problem.num_vars(), problem.num_eq(), problem.num_ineq());
        let mut rhs = DVector::zeros(n + r + p);
        for &(pj, target, coeff) in &self.entries {
            if pj != param {
                continue;
            }
            match target {
                DataEntry::CostMatrix(i, j) => rhs[i] -= coeff * x[j],
                DataEntry::CostVector(i) => rhs[i] -= coeff,
                DataEntry::EqMatrix(i, j) => {
                    rhs[j] -= coeff * eq_duals[i];
                    rhs[n + r + i] -= coeff * x[j];
                }
                DataEntry::EqRhs(i) => rhs[n + r + i] += coeff,
                DataEntry::IneqMatrix(i, j) => {
                    rhs[j] -= coeff * ineq_duals[i];
                    rhs[n + i] -= ineq_duals[i] * coeff * x[j];
                }
                DataEntry::IneqRhs(i) => rhs[n + i] += ineq_duals[i] * coeff,
            }
        }
        rhs
    }
}

/// Jacobian of the primal-dual solution with respect to the parameters.
#[derive(Debug, Clone)]
pub struct SolutionJacobian {
    pub d_primal: DMatrix<f64>,
    pub d_eq_duals: DMatrix<f64>,
    pub d_ineq_duals: DMatrix<f64>,
}

/// Gradient of the optimal value with respect to the parameters.
#[derive(Debug, Clone)]
pub struct ValueGradient {
    pub d_value: DVector<f64>,
}

fn require_optimal(problem: &QpProblem, solution: &QpSolution) -> Result<(), DiffError> {
    let residual = qp::kkt_residual(problem, solution)?;
    if solution.status != QpStatus::Optimal || residual > OPTIMALITY_TOL {
        return Err(DiffError::NotOptimal {
            status: solution.status,
            residual,
        });
    }
    Ok(())
}

/// Differentiates the primal-dual solution through the KKT conditions.
///
/// Assembles the block system at `(z*, lambda*, nu*)` and solves one column
/// per parameter. LPs are first smoothed with a small quadratic term and
/// re-solved, since their solution maps are set-valued.
pub fn differentiate_solution(
    problem: &QpProblem,
    solution: &QpSolution,
    params: &ParamMap,
) -> Result<SolutionJacobian, DiffError> {
    require_optimal(problem, solution)?;
    params.check(problem)?;

    let is_lp = problem.cost_matrix().amax() == 0.0;
    let owned: (QpProblem, QpSolution);
    let (problem, solution) = if is_lp {
        let n = problem.num_vars();
        let mut smoothed = problem.clone();
        {
            let (q_mat, ..) = smoothed.data_mut();
            for i in 0..n {
                q_mat[(i, i)] += LP_SMOOTHING;
            }
        }
        let resolved = qp::solve_qp(&smoothed, qp::DEFAULT_TOL)?;
        if resolved.status != QpStatus::Optimal {
            return Err(DiffError::NotOptimal {
                status: resolved.status,
                residual: resolved.kkt_residual,
            });
        }
        owned = (smoothed, resolved);
        (&owned.0, &owned.1)
    } else {
        (problem, solution)
    };

    let (n, p, r) = (problem.num_vars(), problem.num_eq(), problem.num_ineq());
    let x = &solution.primal;
    let lam = &solution.ineq_duals;
    let slack = problem.ineq_matrix() * x - problem.ineq_rhs();
    for i in 0..r {
        if lam[i].abs() + slack[i].abs() <= STRICT_COMPLEMENTARITY_TOL {
            return Err(DiffError::DegenerateKkt(format!(
                "inequality {i} is weakly active (dual {:.2e}, slack {:.2e})",
                lam[i], slack[i]
            )));
        }
    }

    // Block system: rows are stationarity, complementarity, equalities.
    let dim = n + r + p;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(problem.cost_matrix());
    if r > 0 {
        kkt.view_mut((0, n), (n, r))
            .copy_from(&problem.ineq_matrix().transpose());
        let mut scaled_g = problem.ineq_matrix().clone();
        for i in 0..r {
            scaled_g.row_mut(i).scale_mut(lam[i]);
        }
        kkt.view_mut((n, 0), (r, n)).copy_from(&scaled_g);
        for i in 0..r {
            kkt[(n + i, n + i)] = slack[i];
        }
    }
    if p > 0 {
        kkt.view_mut((0, n + r), (n, p))
            .copy_from(&problem.eq_matrix().transpose());
        kkt.view_mut((n + r, 0), (p, n)).copy_from(problem.eq_matrix());
    }

    let factor = |m: DMatrix<f64>| {
        let lu = m.lu();
        let probe = lu.solve(&DVector::from_element(dim, 1.0));
        probe
            .filter(|v| v.iter().all(|x| x.is_finite()))
            .map(|_| lu)
    };
    let lu = match factor(kkt.clone()) {
        Some(lu) => lu,
        None => {
            let mut ridged = kkt;
            for i in 0..dim {
                ridged[(i, i)] += 1e-10;
            }
            factor(ridged).ok_or_else(|| {
                DiffError::DegenerateKkt("block matrix singular beyond regularization".into())
            })?
        }
    };

    let k = params.n_params();
    let mut d_primal = DMatrix::zeros(n, k);
    let mut d_ineq = DMatrix::zeros(r, k);
    let mut d_eq = DMatrix::zeros(p, k);
    for j in 0..k {
        let rhs = params.kkt_rhs_column(j, problem, x, &solution.eq_duals, lam);
        let col = lu.solve(&rhs).ok_or_else(|| {
            DiffError::DegenerateKkt("block matrix solve failed".into())
        })?;
        if col.iter().any(|v| !v.is_finite()) {
            return Err(DiffError::DegenerateKkt("non-finite sensitivity".into()));
        }
        d_primal.set_column(j, &col.rows(0, n).into_owned());
        if r > 0 {
            d_ineq.set_column(j, &col.rows(n, r).into_owned());
        }
        if p > 0 {
            d_eq.set_column(j, &col.rows(n + r, p).into_owned());
        }
    }
    Ok(SolutionJacobian {
        d_primal,
        d_eq_duals: d_eq,
        d_ineq_duals: d_ineq,
    })
}

/// Gradient of the optimal value via the envelope theorem: the partial of
/// the Lagrangian with respect to each parameter, evaluated at the optimum.
/// Right-hand-side parameters need only the duals (no strict
/// complementarity), so this is the route the controller uses.
pub fn value_gradient(
    problem: &QpProblem,
    solution: &QpSolution,
    params: &ParamMap,
) -> Result<ValueGradient, DiffError> {
    require_optimal(problem, solution)?;
    params.check(problem)?;
    let x = &solution.primal;
    let nu = &solution.eq_duals;
    let lam = &solution.ineq_duals;
    let mut d_value = DVector::zeros(params.n_params());
    for &(param, target, coeff) in &params.entries {
        d_value[param] += match target {
            DataEntry::CostMatrix(i, j) => 0.5 * coeff * x[i] * x[j],
            DataEntry::CostVector(i) => coeff * x[i],
            DataEntry::EqMatrix(i, j) => coeff * nu[i] * x[j],
            DataEntry::EqRhs(i) => -coeff * nu[i],
            DataEntry::IneqMatrix(i, j) => coeff * lam[i] * x[j],
            DataEntry::IneqRhs(i) => -coeff * lam[i],
        };
    }
    Ok(ValueGradient { d_value })
}
