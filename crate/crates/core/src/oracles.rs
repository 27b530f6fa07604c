//! Independent reference implementations.
//!
//! Everything here deliberately avoids the production code paths it is used
//! to check: the sorted-tail CVaR avoids the LP solver, the projected
//! gradient method avoids the interior-point method, vertex enumeration
//! avoids both, and the grid scans evaluate objectives pointwise. The test
//! suites and the `selftest` command compare production results against
//! these.

use nalgebra::{DMatrix, DVector};

use crate::risk::AmbiguitySpec;

/// CVaR of an empirical sample by the sorted-tail formula: the minimizing
/// threshold is the `ceil(alpha * n)`-th order statistic and the value is the
/// threshold plus the normalized mean excess above it.
pub fn sorted_tail_cvar(values: &[f64], alpha: f64) -> (f64, f64) {
    assert!(!values.is_empty(), "sorted_tail_cvar needs samples");
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must be in (0,1)");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = sorted.len();
    let rank = ((alpha * n as f64).ceil() as usize).clamp(1, n);
    let eta = sorted[rank - 1];
    let scale = 1.0 / ((1.0 - alpha) * n as f64);
    let excess: f64 = sorted.iter().map(|v| (v - eta).max(0.0)).sum();
    (eta + scale * excess, eta)
}

/// CVaR by brute-force scan of the scalar objective
/// `eta + sum((v - eta)+) / ((1-alpha) n)` over a uniform grid.
pub fn grid_cvar(values: &[f64], alpha: f64, grid_step: f64) -> f64 {
    assert!(!values.is_empty());
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = 1.0 / ((1.0 - alpha) * values.len() as f64);
    let objective = |eta: f64| -> f64 {
        eta + scale * values.iter().map(|v| (v - eta).max(0.0)).sum::<f64>()
    };
    let mut best = f64::INFINITY;
    let mut eta = lo;
    while eta <= hi + grid_step {
        best = best.min(objective(eta));
        eta += grid_step;
    }
    best.min(objective(hi))
}

/// Closed form of the Case-1 worst-case CVaR: the largest shifted sample.
pub fn case1_closed_form(h_val: f64, samples: &[f64]) -> f64 {
    samples
        .iter()
        .map(|w| h_val + w)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Brute-force value of the Case-2 program: scans the threshold over a grid
/// (endpoint included exactly, since the objective decreases up to the
/// threshold cap) and evaluates both slack families by enumerating the
/// candidate noise vertices `{lower, upper, w^m}`.
pub fn case2_grid_oracle(h_val: f64, samples: &[f64], spec: &AmbiguitySpec, points: usize) -> f64 {
    let n = samples.len() as f64;
    let scale = 1.0 / ((1.0 - spec.alpha) * n);
    let (lb, ub, lam) = (spec.lower_bound, spec.upper_bound, spec.lambda_penalty);
    let objective = |eta: f64| -> f64 {
        let mut acc = 0.0;
        for &w in samples {
            let s = (h_val + ub - eta)
                .max(h_val + lb - eta)
                .max(h_val + w - eta);
            let l = (h_val + ub - eta - lam * (ub - w))
                .max(h_val + lb - eta + lam * (lb - w))
                .max(h_val + w - eta);
            acc += s + l;
        }
        eta + scale * acc
    };
    // The threshold is capped by the smallest admissible shift.
    let eta_max = h_val + lb;
    let span = (ub - lb) + 1.0;
    let mut best = objective(eta_max);
    for k in 0..points {
        let eta = eta_max - span * (k as f64 + 1.0) / points as f64;
        best = best.min(objective(eta));
    }
    best
}

/// Case-2 limit oracle for large transport penalties: the penalized slack
/// family collapses to the per-sample pattern `h + w^m - eta` while the
/// unpenalized family keeps the upper bound.
pub fn case2_large_lambda_oracle(h_val: f64, samples: &[f64], spec: &AmbiguitySpec) -> f64 {
    let n = samples.len() as f64;
    let scale = 1.0 / ((1.0 - spec.alpha) * n);
    let eta = h_val + spec.lower_bound;
    let mut acc = 0.0;
    for &w in samples {
        let s = h_val + spec.upper_bound - eta;
        let l = h_val + w - eta;
        acc += s + l;
    }
    eta + scale * acc
}

/// Solves `min 1/2 x'Px + q'x` over a box by projected gradient descent.
/// Runs until the projected-gradient fixed-point residual drops below `tol`.
pub fn box_qp_projected_gradient(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> DVector<f64> {
    let n = q.len();
    let clamp = |v: &DVector<f64>| -> DVector<f64> {
        DVector::from_fn(n, |i, _| v[i].clamp(lower[i], upper[i]))
    };
    // Step size from the largest curvature.
    let lip = p
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let step = 1.0 / lip;
    let mut x = clamp(&DVector::zeros(n));
    for _ in 0..max_iter {
        let grad = p * &x + q;
        let next = clamp(&(&x - step * &grad));
        let residual = (&next - &x).amax();
        x = next;
        if residual <= tol {
            break;
        }
    }
    x
}

/// Minimizes `c'x` over `{x : Ax = b, Gx <= h}` by enumerating basic
/// feasible points: every choice of active inequality rows that, together
/// with the equalities, forms a square nonsingular system. Returns `None`
/// when no feasible vertex exists. Exponential in the row count; test-scale
/// problems only.
pub fn lp_vertex_enumeration(
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
) -> Option<f64> {
    let n = c.len();
    let p = a.nrows();
    let r = g.nrows();
    if p > n {
        return None;
    }
    let k = n - p;
    if k > r {
        return None;
    }
    let mut best: Option<f64> = None;
    let mut choice: Vec<usize> = (0..k).collect();
    loop {
        let mut m = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for i in 0..p {
            m.row_mut(i).copy_from(&a.row(i));
            rhs[i] = b[i];
        }
        for (j, &row) in choice.iter().enumerate() {
            m.row_mut(p + j).copy_from(&g.row(row));
            rhs[p + j] = h[row];
        }
        if let Some(x) = m.lu().solve(&rhs) {
            if x.iter().all(|v| v.is_finite()) {
                let feasible = (0..r).all(|i| (g.row(i) * &x)[0] <= h[i] + 1e-8)
                    && (0..p).all(|i| ((a.row(i) * &x)[0] - b[i]).abs() <= 1e-8);
                if feasible {
                    let value = c.dot(&x);
                    best = Some(best.map_or(value, |cur: f64| cur.min(value)));
                }
            }
        }
        // Advance the combination.
        let mut i = k;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if choice[i] != i + r - k {
                choice[i] += 1;
                for j in (i + 1)..k {
                    choice[j] = choice[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Central finite difference of a scalar function.
pub fn central_difference(f: impl Fn(f64) -> f64, x0: f64, step: f64) -> f64 {
    (f(x0 + step) - f(x0 - step)) / (2.0 * step)
}
