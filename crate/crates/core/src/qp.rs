//! Dense convex quadratic and linear programming.
//!
//! Solves programs of the form
//!
//! ```text
//!     minimize    1/2 x' Q x + q' x
//!     subject to  A x  = b
//!                 G x <= h
//! ```
//!
//! with a Mehrotra-style predictor-corrector primal-dual interior-point
//! method. Problems in this crate are tiny (a few dozen variables at most),
//! so the Newton step is solved by dense LU factorization of the reduced KKT
//! system. Linear programs reuse the same path with a small diagonal
//! regularization of the cost matrix to keep the Newton system nonsingular.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default convergence tolerance on the KKT residual.
pub const DEFAULT_TOL: f64 = 1e-8;
/// Iteration cap for the interior-point loop.
pub const MAX_ITER: usize = 100;
/// Diagonal regularization added to the cost matrix when solving LPs.
pub const LP_REGULARIZATION: f64 = 1e-9;

const SYMMETRY_TOL: f64 = 1e-12;
const STALL_WINDOW: usize = 10;
const STALL_PRIMAL_RES: f64 = 1e-6;
const DIVERGENCE_NORM: f64 = 1e10;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("cost matrix is not symmetric (max asymmetry {0:.3e})")]
    AsymmetricCost(f64),
    #[error("equality constraints must have full row rank (rank {rank} of {rows} rows)")]
    RankDeficientEqualities { rank: usize, rows: usize },
    #[error("more equality rows ({rows}) than variables ({vars})")]
    TooManyEqualities { rows: usize, vars: usize },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("solve_lp requires a zero cost matrix (max entry {0:.3e})")]
    NonzeroCostMatrix(f64),
}

/// Termination status of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

/// A convex QP in standard form. Constructed through the builder methods,
/// which validate symmetry, dimensions, and equality-constraint rank.
#[derive(Debug, Clone)]
pub struct QpProblem {
    cost_matrix: DMatrix<f64>,
    cost_vector: DVector<f64>,
    eq_matrix: DMatrix<f64>,
    eq_rhs: DVector<f64>,
    ineq_matrix: DMatrix<f64>,
    ineq_rhs: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem `min 1/2 x'Qx + q'x`.
    pub fn new(cost_matrix: DMatrix<f64>, cost_vector: DVector<f64>) -> Result<Self, QpError> {
        let n = cost_vector.len();
        if cost_matrix.nrows() != n || cost_matrix.ncols() != n {
            return Err(QpError::DimensionMismatch(format!(
                "cost matrix is {}x{} but cost vector has length {}",
                cost_matrix.nrows(),
                cost_matrix.ncols(),
                n
            )));
        }
        let mut asym = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                asym = asym.max((cost_matrix[(i, j)] - cost_matrix[(j, i)]).abs());
            }
        }
        if asym > SYMMETRY_TOL {
            return Err(QpError::AsymmetricCost(asym));
        }
        Ok(Self {
            cost_matrix,
            cost_vector,
            eq_matrix: DMatrix::zeros(0, n),
            eq_rhs: DVector::zeros(0),
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
        })
    }

    /// LP cost `min q'x` (zero quadratic term).
    pub fn linear(cost_vector: DVector<f64>) -> Self {
        let n = cost_vector.len();
        Self::new(DMatrix::zeros(n, n), cost_vector).expect("zero matrix is symmetric")
    }

    /// Adds equality constraints `A x = b`. `A` must have full row rank.
    pub fn with_eq(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Result<Self, QpError> {
        let n = self.num_vars();
        if a.ncols() != n || a.nrows() != b.len() {
            return Err(QpError::DimensionMismatch(format!(
                "equality block is {}x{} with rhs length {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if a.nrows() > n {
            return Err(QpError::TooManyEqualities {
                rows: a.nrows(),
                vars: n,
            });
        }
        if a.nrows() > 0 {
            let svd = a.clone().svd(false, false);
            let max_sv = svd.singular_values.max();
            let rank = svd.rank(max_sv.max(1.0) * 1e-12);
            if rank < a.nrows() {
                return Err(QpError::RankDeficientEqualities {
                    rank,
                    rows: a.nrows(),
                });
            }
        }
        self.eq_matrix = a;
        self.eq_rhs = b;
        Ok(self)
    }

    /// Adds inequality constraints `G x <= h`.
    pub fn with_ineq(mut self, g: DMatrix<f64>, h: DVector<f64>) -> Result<Self, QpError> {
        if g.ncols() != self.num_vars() || g.nrows() != h.len() {
            return Err(QpError::DimensionMismatch(format!(
                "inequality block is {}x{} with rhs length {}",
                g.nrows(),
                g.ncols(),
                h.len()
            )));
        }
        self.ineq_matrix = g;
        self.ineq_rhs = h;
        Ok(self)
    }

    /// Appends per-variable box bounds as inequality rows. Entries of
    /// `lower`/`upper` that are infinite are skipped.
    pub fn with_box_bounds(mut self, lower: &[f64], upper: &[f64]) -> Result<Self, QpError> {
        let n = self.num_vars();
        if lower.len() != n || upper.len() != n {
            return Err(QpError::DimensionMismatch(format!(
                "box bounds have lengths {} and {} for {} variables",
                lower.len(),
                upper.len(),
                n
            )));
        }
        let mut rows: Vec<(usize, f64, f64)> = Vec::new();
        for (j, &u) in upper.iter().enumerate() {
            if u.is_finite() {
                rows.push((j, 1.0, u));
            }
        }
        for (j, &l) in lower.iter().enumerate() {
            if l.is_finite() {
                rows.push((j, -1.0, -l));
            }
        }
        let r0 = self.ineq_matrix.nrows();
        let mut g = self.ineq_matrix.clone().insert_rows(r0, rows.len(), 0.0);
        let mut h = self.ineq_rhs.clone().insert_rows(r0, rows.len(), 0.0);
        for (k, (j, sign, rhs)) in rows.into_iter().enumerate() {
            g[(r0 + k, j)] = sign;
            h[r0 + k] = rhs;
        }
        self.ineq_matrix = g;
        self.ineq_rhs = h;
        Ok(self)
    }

    pub fn num_vars(&self) -> usize {
        self.cost_vector.len()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn cost_matrix(&self) -> &DMatrix<f64> {
        &self.cost_matrix
    }

    pub fn cost_vector(&self) -> &DVector<f64> {
        &self.cost_vector
    }

    pub fn eq_matrix(&self) -> &DMatrix<f64> {
        &self.eq_matrix
    }

    pub fn eq_rhs(&self) -> &DVector<f64> {
        &self.eq_rhs
    }

    pub fn ineq_matrix(&self) -> &DMatrix<f64> {
        &self.ineq_matrix
    }

    pub fn ineq_rhs(&self) -> &DVector<f64> {
        &self.ineq_rhs
    }

    /// Objective value at a point.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.cost_matrix * x)[(0, 0)] + self.cost_vector.dot(x)
    }

    /// In-place edits used by the differentiation layer.
    pub(crate) fn data_mut(
        &mut self,
    ) -> (
        &mut DMatrix<f64>,
        &mut DVector<f64>,
        &mut DMatrix<f64>,
        &mut DVector<f64>,
        &mut DMatrix<f64>,
        &mut DVector<f64>,
    ) {
        (
            &mut self.cost_matrix,
            &mut self.cost_vector,
            &mut self.eq_matrix,
            &mut self.eq_rhs,
            &mut self.ineq_matrix,
            &mut self.ineq_rhs,
        )
    }
}

/// Primal-dual optimum returned by the solver.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub primal: DVector<f64>,
    pub eq_duals: DVector<f64>,
    pub ineq_duals: DVector<f64>,
    pub objective_value: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// Maximum infinity-norm violation of the KKT conditions at `solution`:
/// stationarity, primal feasibility (equalities and inequalities), dual
/// feasibility, and complementary slackness. Zero iff an exact KKT point.
pub fn kkt_residual(problem: &QpProblem, solution: &QpSolution) -> Result<f64, QpError> {
    let (n, p, r) = (problem.num_vars(), problem.num_eq(), problem.num_ineq());
    if solution.primal.len() != n || solution.eq_duals.len() != p || solution.ineq_duals.len() != r
    {
        return Err(QpError::DimensionMismatch(format!(
            "solution has dimensions ({}, {}, {}) for a problem with ({}, {}, {})",
            solution.primal.len(),
            solution.eq_duals.len(),
            solution.ineq_duals.len(),
            n,
            p,
            r
        )));
    }
    Ok(kkt_residual_parts(
        problem,
        &solution.primal,
        &solution.eq_duals,
        &solution.ineq_duals,
    )
    .max_all())
}

struct KktParts {
    stationarity: f64,
    eq_feasibility: f64,
    ineq_feasibility: f64,
    dual_feasibility: f64,
    complementarity: f64,
}

impl KktParts {
    fn max_all(&self) -> f64 {
        self.stationarity
            .max(self.eq_feasibility)
            .max(self.ineq_feasibility)
            .max(self.dual_feasibility)
            .max(self.complementarity)
    }
}

fn kkt_residual_parts(
    problem: &QpProblem,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
) -> KktParts {
    let mut grad = &problem.cost_matrix * x + &problem.cost_vector;
    if problem.num_eq() > 0 {
        grad += problem.eq_matrix.transpose() * y;
    }
    if problem.num_ineq() > 0 {
        grad += problem.ineq_matrix.transpose() * z;
    }
    let stationarity = grad.amax();
    let eq_feasibility = if problem.num_eq() > 0 {
        (&problem.eq_matrix * x - &problem.eq_rhs).amax()
    } else {
        0.0
    };
    let mut ineq_feasibility = 0.0f64;
    let mut dual_feasibility = 0.0f64;
    let mut complementarity = 0.0f64;
    if problem.num_ineq() > 0 {
        let slack = &problem.ineq_matrix * x - &problem.ineq_rhs;
        for i in 0..problem.num_ineq() {
            ineq_feasibility = ineq_feasibility.max(slack[i].max(0.0));
            dual_feasibility = dual_feasibility.max((-z[i]).max(0.0));
            complementarity = complementarity.max((z[i] * slack[i]).abs());
        }
    }
    KktParts {
        stationarity,
        eq_feasibility,
        ineq_feasibility,
        dual_feasibility,
        complementarity,
    }
}

/// Solves a convex QP to the requested KKT tolerance.
pub fn solve_qp(problem: &QpProblem, tol: f64) -> Result<QpSolution, QpError> {
    if !(tol > 0.0) {
        return Err(QpError::InvalidTolerance(tol));
    }
    solve_inner(problem, 0.0, tol)
}

/// Solves an LP (`cost_matrix == 0`). Internally the cost matrix gets a
/// diagonal regularization of [`LP_REGULARIZATION`] so the Newton system
/// stays nonsingular; the induced bias is far below the solver tolerance.
pub fn solve_lp(problem: &QpProblem, tol: f64) -> Result<QpSolution, QpError> {
    if !(tol > 0.0) {
        return Err(QpError::InvalidTolerance(tol));
    }
    let max_q = problem.cost_matrix.amax();
    if max_q > 0.0 {
        return Err(QpError::NonzeroCostMatrix(max_q));
    }
    solve_inner(problem, LP_REGULARIZATION, tol)
}

fn solve_inner(problem: &QpProblem, cost_reg: f64, tol: f64) -> Result<QpSolution, QpError> {
    let (n, p, r) = (problem.num_vars(), problem.num_eq(), problem.num_ineq());
    let q_newton = if cost_reg > 0.0 {
        problem.cost_matrix.clone() + DMatrix::identity(n, n) * cost_reg
    } else {
        problem.cost_matrix.clone()
    };
    if r == 0 {
        return solve_equality_constrained(problem, &q_newton, tol);
    }

    let a = &problem.eq_matrix;
    let g = &problem.ineq_matrix;

    // Starting point: equality-regularized Newton step for x, unit slacks
    // and duals scaled to the initial constraint violation.
    let mut x = initial_point(problem, &q_newton);
    let mut y = DVector::zeros(p);
    let s_raw = &problem.ineq_rhs - g * &x;
    let mut s = DVector::from_fn(r, |i, _| s_raw[i].abs().max(1.0));
    let mut z = DVector::from_element(r, 1.0);

    let dim = n + p + r;
    let mut best_merit = f64::INFINITY;
    let mut stall = 0usize;
    let mut newton_reg = 0.0f64;

    for iter in 0..MAX_ITER {
        let r_dual = {
            let mut v = &q_newton * &x + &problem.cost_vector;
            if p > 0 {
                v += a.transpose() * &y;
            }
            v += g.transpose() * &z;
            v
        };
        let r_eq = if p > 0 { a * &x - &problem.eq_rhs } else { DVector::zeros(0) };
        let r_ineq = g * &x + &s - &problem.ineq_rhs;
        let mu = s.dot(&z) / r as f64;

        // Termination checks use the actual KKT residual of the original
        // (unregularized) problem so `Optimal` always honors the contract.
        let true_res = kkt_residual_parts(problem, &x, &y, &z).max_all();
        if true_res <= tol {
            return Ok(finish_polished(problem, x, y, z, &s, QpStatus::Optimal, iter, true_res, tol));
        }

        if x.amax() > DIVERGENCE_NORM {
            return Ok(finish(problem, x, y, z, QpStatus::Unbounded, iter, true_res));
        }

        let primal_res = r_eq.amax().max(r_ineq.amax());
        let merit = r_dual.amax() + primal_res + mu;
        log::trace!(
            "ipm iter {iter}: merit {merit:.3e} dual {:.3e} primal {primal_res:.3e} mu {mu:.3e} res {true_res:.3e}",
            r_dual.amax()
        );
        if merit < 0.99 * best_merit {
            best_merit = merit;
            stall = 0;
        } else {
            stall += 1;
            if stall >= STALL_WINDOW {
                let status = if primal_res > STALL_PRIMAL_RES {
                    QpStatus::Infeasible
                } else {
                    QpStatus::MaxIter
                };
                return Ok(finish_polished(problem, x, y, z, &s, status, iter, true_res, tol));
            }
        }

        // Reduced KKT matrix; refactored each iteration.
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&q_newton);
        if newton_reg > 0.0 {
            for i in 0..n {
                kkt[(i, i)] += newton_reg;
            }
        }
        if p > 0 {
            kkt.view_mut((0, n), (n, p)).copy_from(&a.transpose());
            kkt.view_mut((n, 0), (p, n)).copy_from(a);
            for i in 0..p {
                kkt[(n + i, n + i)] = -1e-12 - newton_reg;
            }
        }
        kkt.view_mut((0, n + p), (n, r)).copy_from(&g.transpose());
        kkt.view_mut((n + p, 0), (r, n)).copy_from(g);
        for i in 0..r {
            kkt[(n + p + i, n + p + i)] = -(s[i] / z[i]) - 1e-14;
        }
        let lu = kkt.lu();

        let solve_step = |rhs_comp: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            let mut rhs = DVector::zeros(dim);
            for i in 0..n {
                rhs[i] = -r_dual[i];
            }
            for i in 0..p {
                rhs[n + i] = -r_eq[i];
            }
            for i in 0..r {
                rhs[n + p + i] = -r_ineq[i] + rhs_comp[i] / z[i];
            }
            let sol = lu.solve(&rhs)?;
            if sol.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let dx = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, p).into_owned();
            let dz = sol.rows(n + p, r).into_owned();
            let ds = DVector::from_fn(r, |i, _| (-rhs_comp[i] - s[i] * dz[i]) / z[i]);
            Some((dx, dy, dz, ds))
        };

        // Predictor.
        let comp_aff = DVector::from_fn(r, |i, _| s[i] * z[i]);
        let aff = solve_step(&comp_aff);
        let (dx_a, dy_a, dz_a, ds_a) = match aff {
            Some(step) => step,
            None => {
                newton_reg = (newton_reg * 100.0).max(1e-10);
                if newton_reg > 1e-2 {
                    return Ok(finish(problem, x, y, z, QpStatus::MaxIter, iter, true_res));
                }
                continue;
            }
        };
        let alpha_aff = step_to_boundary(&s, &ds_a).min(step_to_boundary(&z, &dz_a));
        let mu_aff = {
            let mut acc = 0.0;
            for i in 0..r {
                acc += (s[i] + alpha_aff * ds_a[i]) * (z[i] + alpha_aff * dz_a[i]);
            }
            acc / r as f64
        };
        let sigma = if mu > 0.0 {
            (mu_aff / mu).powi(3).clamp(1e-8, 1.0)
        } else {
            0.0
        };

        // Corrector with centering.
        let comp_corr =
            DVector::from_fn(r, |i, _| s[i] * z[i] + ds_a[i] * dz_a[i] - sigma * mu);
        let mut dir = match solve_step(&comp_corr) {
            Some(step) => step,
            None => (dx_a.clone(), dy_a.clone(), dz_a.clone(), ds_a.clone()),
        };

        let tau = if mu > 1e-6 { 0.99 } else { 0.999 };
        let step_of = |ds: &DVector<f64>, dz: &DVector<f64>| {
            let ap = (tau * step_to_boundary(&s, ds)).min(1.0);
            let ad = (tau * step_to_boundary(&z, dz)).min(1.0);
            (ap, ad)
        };
        let mu_after = |ds: &DVector<f64>, dz: &DVector<f64>, ap: f64, ad: f64| {
            let mut acc = 0.0;
            for i in 0..r {
                acc += (s[i] + ap * ds[i]) * (z[i] + ad * dz[i]);
            }
            acc / r as f64
        };
        let (mut ap, mut ad) = step_of(&dir.3, &dir.2);
        // The corrector can overshoot on badly scaled rows; if it grows the
        // complementarity measure, fall back to the plain affine direction.
        if mu_after(&dir.3, &dir.2, ap, ad) > 10.0 * mu {
            dir = (dx_a, dy_a, dz_a, ds_a);
            let steps = step_of(&dir.3, &dir.2);
            ap = steps.0;
            ad = steps.1;
        }
        let (dx, dy, dz, ds) = dir;

        x += ap * &dx;
        if p > 0 {
            y += ad * &dy;
        }
        z += ad * &dz;
        s += ap * &ds;
    }

    let true_res = kkt_residual_parts(problem, &x, &y, &z).max_all();
    Ok(finish_polished(problem, x, y, z, &s, QpStatus::MaxIter, MAX_ITER, true_res, tol))
}

#[allow(clippy::too_many_arguments)]
fn finish_polished(
    problem: &QpProblem,
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    s: &DVector<f64>,
    status: QpStatus,
    iterations: usize,
    residual: f64,
    tol: f64,
) -> QpSolution {
    if let Some((px, py, pz, duals_valid)) = polish(problem, &z, s) {
        let mut candidates: Vec<(DVector<f64>, DVector<f64>, DVector<f64>)> = Vec::new();
        if duals_valid {
            candidates.push((px.clone(), py, pz));
        }
        candidates.push((px, y.clone(), z.clone()));
        let mut best: Option<(f64, usize)> = None;
        for (i, (cx, cy, cz)) in candidates.iter().enumerate() {
            let res = kkt_residual_parts(problem, cx, cy, cz).max_all();
            if best.is_none_or(|(b, _)| res < b) {
                best = Some((res, i));
            }
        }
        if let Some((pres, idx)) = best {
            if pres < residual {
                let (cx, cy, cz) = candidates.swap_remove(idx);
                let status = if pres <= tol { QpStatus::Optimal } else { status };
                return finish(problem, cx, cy, cz, status, iterations, pres);
            }
        }
    }
    finish(problem, x, y, z, status, iterations, residual)
}

/// Active-set polish: treats the inequality rows the interior-point loop
/// identified as active as equalities and solves the resulting KKT system by
/// least squares against the original problem data. Returns the polished
/// point when it is valid (nonnegative active duals, feasible inactive
/// rows); the caller keeps whichever point has the smaller true residual.
/// This removes both the interior-point endgame error and the LP cost
/// regularization bias, and it is what lets degenerate vertices (duplicated
/// active rows) reach tight tolerances.
fn polish(
    problem: &QpProblem,
    z: &DVector<f64>,
    s: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, bool)> {
    let (n, p, r) = (problem.num_vars(), problem.num_eq(), problem.num_ineq());
    let active: Vec<usize> = (0..r).filter(|&i| s[i] <= z[i]).collect();
    let k = active.len();
    let dim = n + p + k;
    let mut m = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    m.view_mut((0, 0), (n, n)).copy_from(&problem.cost_matrix);
    for i in 0..n {
        rhs[i] = -problem.cost_vector[i];
    }
    if p > 0 {
        m.view_mut((0, n), (n, p))
            .copy_from(&problem.eq_matrix.transpose());
        m.view_mut((n, 0), (p, n)).copy_from(&problem.eq_matrix);
        for i in 0..p {
            rhs[n + i] = problem.eq_rhs[i];
        }
    }
    for (j, &row) in active.iter().enumerate() {
        for c in 0..n {
            m[(c, n + p + j)] = problem.ineq_matrix[(row, c)];
            m[(n + p + j, c)] = problem.ineq_matrix[(row, c)];
        }
        rhs[n + p + j] = problem.ineq_rhs[row];
    }
    let svd = m.svd(true, true);
    let sol = svd.solve(&rhs, 1e-12).ok()?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let px = sol.rows(0, n).into_owned();
    let py = sol.rows(n, p).into_owned();
    // Inactive rows must stay feasible.
    let slack = &problem.ineq_rhs - &problem.ineq_matrix * &px;
    let mut is_active = vec![false; r];
    for &row in &active {
        is_active[row] = true;
    }
    for i in 0..r {
        if !is_active[i] && slack[i] < -1e-11 {
            return None;
        }
    }
    // The least-squares multipliers are min-norm; at degenerate vertices a
    // valid nonnegative dual may exist while the min-norm one dips below
    // zero, so the duals are reported separately and the caller may keep the
    // interior-point duals with the polished primal instead.
    let mut pz = DVector::zeros(r);
    let mut duals_valid = true;
    for (j, &row) in active.iter().enumerate() {
        let lam = sol[n + p + j];
        if lam < -1e-9 {
            duals_valid = false;
        }
        pz[row] = lam.max(0.0);
    }
    Some((px, py, pz, duals_valid))
}

fn step_to_boundary(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = 1.0f64;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    alpha
}

fn initial_point(problem: &QpProblem, q_newton: &DMatrix<f64>) -> DVector<f64> {
    let (n, p) = (problem.num_vars(), problem.num_eq());
    let mut m = DMatrix::zeros(n + p, n + p);
    m.view_mut((0, 0), (n, n)).copy_from(q_newton);
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    if p > 0 {
        m.view_mut((0, n), (n, p))
            .copy_from(&problem.eq_matrix.transpose());
        m.view_mut((n, 0), (p, n)).copy_from(&problem.eq_matrix);
    }
    let mut rhs = DVector::zeros(n + p);
    for i in 0..n {
        rhs[i] = -problem.cost_vector[i];
    }
    for i in 0..p {
        rhs[n + i] = problem.eq_rhs[i];
    }
    match m.lu().solve(&rhs) {
        Some(sol) if sol.iter().all(|v| v.is_finite()) => sol.rows(0, n).into_owned(),
        _ => DVector::zeros(n),
    }
}

fn solve_equality_constrained(
    problem: &QpProblem,
    q_newton: &DMatrix<f64>,
    tol: f64,
) -> Result<QpSolution, QpError> {
    let (n, p) = (problem.num_vars(), problem.num_eq());
    let dim = n + p;
    let mut m = DMatrix::zeros(dim, dim);
    m.view_mut((0, 0), (n, n)).copy_from(q_newton);
    if p > 0 {
        m.view_mut((0, n), (n, p))
            .copy_from(&problem.eq_matrix.transpose());
        m.view_mut((n, 0), (p, n)).copy_from(&problem.eq_matrix);
    }
    let mut rhs = DVector::zeros(dim);
    for i in 0..n {
        rhs[i] = -problem.cost_vector[i];
    }
    for i in 0..p {
        rhs[n + i] = problem.eq_rhs[i];
    }

    let solution = m
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|sol| sol.iter().all(|v| v.is_finite()))
        .or_else(|| {
            // Singular KKT: fall back to a least-squares solution and let the
            // residual check classify the outcome.
            let svd = m.svd(true, true);
            svd.solve(&rhs, 1e-12).ok()
        });

    let (x, y) = match solution {
        Some(sol) => (sol.rows(0, n).into_owned(), sol.rows(n, p).into_owned()),
        None => (DVector::zeros(n), DVector::zeros(p)),
    };
    let parts = kkt_residual_parts(problem, &x, &y, &DVector::zeros(0));
    let res = parts.max_all();
    let status = if res <= tol {
        QpStatus::Optimal
    } else if parts.eq_feasibility > tol {
        // A is validated full row rank, so this only happens numerically.
        QpStatus::Infeasible
    } else {
        QpStatus::Unbounded
    };
    Ok(finish(problem, x, y, DVector::zeros(0), status, 1, res))
}

fn finish(
    problem: &QpProblem,
    x: DVector<f64>,
    y: DVector<f64>,
    z: DVector<f64>,
    status: QpStatus,
    iterations: usize,
    kkt_residual: f64,
) -> QpSolution {
    let objective_value = problem.objective(&x);
    QpSolution {
        primal: x,
        eq_duals: y,
        ineq_duals: z,
        objective_value,
        status,
        iterations,
        kkt_residual,
    }
}
