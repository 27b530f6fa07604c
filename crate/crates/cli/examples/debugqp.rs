use drcbf_core::qp::{self, QpProblem};
use nalgebra::{DMatrix, DVector};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DRCBF_LOG", "error")).init();
    // Controller QP at the stuck state: vars (vx, vy, omega, delta).
    let mut cost = DMatrix::zeros(4, 4);
    cost[(0, 0)] = 2.0;
    cost[(1, 1)] = 2.0;
    cost[(2, 2)] = 2.0;
    cost[(3, 3)] = 200.0;
    let ex = 0.6674999999999792 - 5.0;
    let ey = 0.6674999999999739 - 5.0;
    let v = 0.5 * (ex * ex + ey * ey);
    let hx: f64 = 0.6674999999999792;
    let hy: f64 = 0.6674999999999739;
    let gx = -2.0 * (hx - 2.6);
    let gy = -2.0 * (hy - 2.4);
    let h_val = 1.0 - ((hx - 2.6).powi(2) + (hy - 2.4).powi(2));
    let rows = DMatrix::from_row_slice(
        2,
        4,
        &[gx, gy, 0.0, 0.0, ex, ey, 0.0, -1.0],
    );
    let rhs = DVector::from_row_slice(&[-h_val, -v]);
    let problem = QpProblem::new(cost, DVector::zeros(4))
        .unwrap()
        .with_ineq(rows, rhs)
        .unwrap()
        .with_box_bounds(
            &[-0.75, -0.75, -0.75, f64::NEG_INFINITY],
            &[0.75, 0.75, 0.75, f64::INFINITY],
        )
        .unwrap();
    let sol = qp::solve_qp(&problem, qp::DEFAULT_TOL).unwrap();
    println!(
        "status {:?} iters {} res {:.3e} u {:?} obj {}",
        sol.status, sol.iterations, sol.kkt_residual, sol.primal.as_slice(), sol.objective_value
    );
}
