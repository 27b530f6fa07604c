//! Case-study plants: a first-order Dubins car and a planar quadcopter,
//! plus circular obstacles and the integrators used in closed loop.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::barrier::{BarrierEval, ControlAffineModel};

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut t = theta % two_pi;
    if t <= -std::f64::consts::PI {
        t += two_pi;
    } else if t > std::f64::consts::PI {
        t -= two_pi;
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DubinsState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl DubinsState {
    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_row_slice(&[self.x, self.y, self.theta])
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self {
            x: v[0],
            y: v[1],
            theta: wrap_angle(v[2]),
        }
    }
}

/// Body-frame velocities and angular rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DubinsControl {
    pub v_x: f64,
    pub v_y: f64,
    pub omega: f64,
}

/// Kinematics: the planar rotation of the body velocities plus the raw
/// angular rate, `(x', y', theta') = R(theta) (v_x, v_y, omega)`.
pub fn dubins_dynamics(state: &DubinsState, control: &DubinsControl) -> DVector<f64> {
    let (s, c) = state.theta.sin_cos();
    DVector::from_row_slice(&[
        c * control.v_x - s * control.v_y,
        s * control.v_x + c * control.v_y,
        control.omega,
    ])
}

/// First-order Dubins car: zero drift, actuation `R(theta)`.
#[derive(Debug, Clone)]
pub struct DubinsCar {
    pub control_lower: DVector<f64>,
    pub control_upper: DVector<f64>,
}

impl DubinsCar {
    pub fn new(control_lower: [f64; 3], control_upper: [f64; 3]) -> Self {
        Self {
            control_lower: DVector::from_row_slice(&control_lower),
            control_upper: DVector::from_row_slice(&control_upper),
        }
    }
}

impl ControlAffineModel for DubinsCar {
    fn state_dim(&self) -> usize {
        3
    }

    fn control_dim(&self) -> usize {
        3
    }

    fn drift(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(3)
    }

    fn actuation(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (s, c) = x[2].sin_cos();
        DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0])
    }

    fn drift_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(3, 3)
    }

    fn control_lower(&self) -> DVector<f64> {
        self.control_lower.clone()
    }

    fn control_upper(&self) -> DVector<f64> {
        self.control_upper.clone()
    }

    fn wrap_state(&self, mut x: DVector<f64>) -> DVector<f64> {
        x[2] = wrap_angle(x[2]);
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub x_dot: f64,
    pub y_dot: f64,
    pub theta_dot: f64,
}

impl QuadState {
    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_row_slice(&[
            self.x,
            self.y,
            self.theta,
            self.x_dot,
            self.y_dot,
            self.theta_dot,
        ])
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self {
            x: v[0],
            y: v[1],
            theta: wrap_angle(v[2]),
            x_dot: v[3],
            y_dot: v[4],
            theta_dot: v[5],
        }
    }
}

/// Physical parameters of the planar quadcopter.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadParams {
    pub mass: f64,
    pub gravity: f64,
    pub arm_length: f64,
    pub inertia: f64,
    pub thrust_min: f64,
    pub thrust_max: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            gravity: 9.81,
            arm_length: 0.25,
            inertia: 0.01,
            thrust_min: 0.0,
            thrust_max: 15.0,
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("arm_length", self.arm_length),
            ("inertia", self.inertia),
        ] {
            if !(v > 0.0) {
                return Err(format!("{name} must be strictly positive, got {v}"));
            }
        }
        if !(self.thrust_min < self.thrust_max) {
            return Err(format!(
                "thrust bounds are inverted: [{}, {}]",
                self.thrust_min, self.thrust_max
            ));
        }
        Ok(())
    }
}

/// Double-integrator attitude/translation kinematics of the planar
/// quadcopter: thrust along the body axis tilts with `theta`, differential
/// thrust produces the torque.
pub fn quad_dynamics(
    state: &QuadState,
    thrust_right: f64,
    thrust_left: f64,
    params: &QuadParams,
) -> DVector<f64> {
    let total = thrust_right + thrust_left;
    let (s, c) = state.theta.sin_cos();
    DVector::from_row_slice(&[
        state.x_dot,
        state.y_dot,
        state.theta_dot,
        total / params.mass * s,
        total / params.mass * c - params.gravity,
        (thrust_right - thrust_left) * params.arm_length / params.inertia,
    ])
}

#[derive(Debug, Clone)]
pub struct PlanarQuadcopter {
    pub params: QuadParams,
}

impl PlanarQuadcopter {
    pub fn new(params: QuadParams) -> Self {
        Self { params }
    }
}

impl ControlAffineModel for PlanarQuadcopter {
    fn state_dim(&self) -> usize {
        6
    }

    fn control_dim(&self) -> usize {
        2
    }

    fn drift(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_row_slice(&[x[3], x[4], x[5], 0.0, -self.params.gravity, 0.0])
    }

    fn actuation(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let (s, c) = x[2].sin_cos();
        let m = self.params.mass;
        let torque = self.params.arm_length / self.params.inertia;
        let mut g = DMatrix::zeros(6, 2);
        g[(3, 0)] = s / m;
        g[(3, 1)] = s / m;
        g[(4, 0)] = c / m;
        g[(4, 1)] = c / m;
        g[(5, 0)] = torque;
        g[(5, 1)] = -torque;
        g
    }

    fn drift_jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(6, 6);
        j[(0, 3)] = 1.0;
        j[(1, 4)] = 1.0;
        j[(2, 5)] = 1.0;
        j
    }

    fn control_lower(&self) -> DVector<f64> {
        DVector::from_element(2, self.params.thrust_min)
    }

    fn control_upper(&self) -> DVector<f64> {
        DVector::from_element(2, self.params.thrust_max)
    }

    fn wrap_state(&self, mut x: DVector<f64>) -> DVector<f64> {
        x[2] = wrap_angle(x[2]);
        x
    }
}

/// A circular obstacle in the plane.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Obstacle {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.radius > 0.0) {
            return Err(format!("obstacle radius must be positive, got {}", self.radius));
        }
        if self.center.iter().any(|c| !c.is_finite()) {
            return Err("obstacle center must be finite".into());
        }
        Ok(())
    }

    /// Signed distance from a position to the obstacle boundary.
    pub fn clearance(&self, px: f64, py: f64) -> f64 {
        ((px - self.center[0]).powi(2) + (py - self.center[1]).powi(2)).sqrt() - self.radius
    }
}

/// Barrier for staying outside a circle: `h = radius^2 - |r - center|^2`,
/// negative in the safe region. The gradient is padded with zeros to the
/// full state dimension (the first two state components are the position)
/// and the constant second spatial derivative `-2 I` on the position block
/// is included for the second-order lift.
pub fn circle_barrier(position: &[f64; 2], obstacle: &Obstacle, state_dim: usize) -> BarrierEval {
    let dx = position[0] - obstacle.center[0];
    let dy = position[1] - obstacle.center[1];
    let value = obstacle.radius * obstacle.radius - (dx * dx + dy * dy);
    let mut gradient = DVector::zeros(state_dim);
    gradient[0] = -2.0 * dx;
    gradient[1] = -2.0 * dy;
    let mut hessian = DMatrix::zeros(state_dim, state_dim);
    hessian[(0, 0)] = -2.0;
    hessian[(1, 1)] = -2.0;
    BarrierEval {
        value,
        gradient,
        hessian: Some(hessian),
        h_dot: None,
    }
}

/// Forward-Euler update. Angle wrapping is the plant's job, after the step.
pub fn euler_step(state: &DVector<f64>, derivative: &DVector<f64>, dt: f64) -> DVector<f64> {
    state + derivative * dt
}

/// Classic fourth-order Runge-Kutta step for a frozen control input.
pub fn rk4_step(
    derivative: impl Fn(&DVector<f64>) -> DVector<f64>,
    state: &DVector<f64>,
    dt: f64,
) -> DVector<f64> {
    let k1 = derivative(state);
    let k2 = derivative(&(state + 0.5 * dt * &k1));
    let k3 = derivative(&(state + 0.5 * dt * &k2));
    let k4 = derivative(&(state + dt * &k3));
    state + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dubins_identity_rotation() {
        let state = DubinsState { x: 0.0, y: 0.0, theta: 0.0 };
        let control = DubinsControl { v_x: 1.0, v_y: 0.0, omega: 0.5 };
        let d = dubins_dynamics(&state, &control);
        assert_relative_eq!(d[0], 1.0);
        assert_relative_eq!(d[1], 0.0);
        assert_relative_eq!(d[2], 0.5);
    }

    #[test]
    fn dubins_quarter_turn() {
        let state = DubinsState { x: 0.0, y: 0.0, theta: std::f64::consts::FRAC_PI_2 };
        let control = DubinsControl { v_x: 1.0, v_y: 0.0, omega: 0.0 };
        let d = dubins_dynamics(&state, &control);
        assert_relative_eq!(d[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(d[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn dubins_rotation_preserves_speed() {
        for k in 0..16 {
            let theta = -3.0 + 0.42 * k as f64;
            let state = DubinsState { x: 1.0, y: -2.0, theta };
            let control = DubinsControl { v_x: 0.7, v_y: -1.3, omega: 0.2 };
            let d = dubins_dynamics(&state, &control);
            let speed_in = (0.7f64 * 0.7 + 1.3 * 1.3).sqrt();
            let speed_out = (d[0] * d[0] + d[1] * d[1]).sqrt();
            assert_relative_eq!(speed_in, speed_out, epsilon = 1e-12);
        }
    }

    #[test]
    fn quad_hover_equilibrium() {
        let params = QuadParams::default();
        let state = QuadState { x: 0.0, y: 0.0, theta: 0.0, x_dot: 0.0, y_dot: 0.0, theta_dot: 0.0 };
        let hover = params.mass * params.gravity / 2.0;
        let d = quad_dynamics(&state, hover, hover, &params);
        assert!(d.amax() < 1e-12);
    }

    #[test]
    fn quad_free_fall() {
        let params = QuadParams::default();
        let state = QuadState { x: 0.0, y: 0.0, theta: 0.3, x_dot: 0.0, y_dot: 0.0, theta_dot: 0.0 };
        let d = quad_dynamics(&state, 0.0, 0.0, &params);
        assert_relative_eq!(d[4], -params.gravity);
        assert_relative_eq!(d[5], 0.0);
    }

    #[test]
    fn quad_torque_channel_is_linear() {
        let params = QuadParams::default();
        let state = QuadState { x: 0.0, y: 0.0, theta: 0.1, x_dot: 0.0, y_dot: 0.0, theta_dot: 0.0 };
        let diff = 0.37;
        let d = quad_dynamics(&state, 1.0 + diff, 1.0, &params);
        assert_relative_eq!(d[5], diff * params.arm_length / params.inertia, epsilon = 1e-12);
    }

    #[test]
    fn circle_barrier_formula() {
        let obstacle = Obstacle { center: [0.0, 0.0], radius: 1.0 };
        let on_boundary = circle_barrier(&[1.0, 0.0], &obstacle, 3);
        assert_relative_eq!(on_boundary.value, 0.0, epsilon = 1e-15);

        let at_center = circle_barrier(&[0.0, 0.0], &obstacle, 3);
        assert_relative_eq!(at_center.value, 1.0);
        assert!(at_center.gradient.amax() < 1e-15);

        let outside = circle_barrier(&[2.0, 0.0], &obstacle, 3);
        assert_relative_eq!(outside.value, -3.0);
        assert_relative_eq!(outside.gradient[0], -4.0);
        assert_relative_eq!(outside.gradient[1], 0.0);
    }

    #[test]
    fn circle_barrier_gradient_matches_finite_differences() {
        let obstacle = Obstacle { center: [0.4, -1.2], radius: 0.8 };
        let pos = [1.3, 0.7];
        let eval = circle_barrier(&pos, &obstacle, 2);
        let step = 1e-6;
        for j in 0..2 {
            let mut hi = pos;
            let mut lo = pos;
            hi[j] += step;
            lo[j] -= step;
            let fd = (circle_barrier(&hi, &obstacle, 2).value
                - circle_barrier(&lo, &obstacle, 2).value)
                / (2.0 * step);
            assert_relative_eq!(eval.gradient[j], fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn euler_step_is_linear_in_dt() {
        let x0 = DVector::from_row_slice(&[1.0, 2.0]);
        let d = DVector::from_row_slice(&[0.5, -0.25]);
        let mut x = x0.clone();
        for _ in 0..10 {
            x = euler_step(&x, &d, 0.1);
        }
        let expected = &x0 + &d; // 10 steps of 0.1
        assert!((x - expected).amax() < 1e-12);
    }

    #[test]
    fn euler_converges_to_dubins_arc_at_first_order() {
        // Constant (v_x, omega) traces a circular arc; halving dt should
        // roughly halve the endpoint error.
        let control = DubinsControl { v_x: 1.0, v_y: 0.0, omega: 1.0 };
        let t_final = 1.0f64;
        let analytic = DubinsState {
            x: t_final.sin(),
            y: 1.0 - t_final.cos(),
            theta: t_final,
        };
        let run = |dt: f64| -> f64 {
            let steps = (t_final / dt).round() as usize;
            let mut s = DubinsState { x: 0.0, y: 0.0, theta: 0.0 };
            for _ in 0..steps {
                let d = dubins_dynamics(&s, &control);
                s = DubinsState {
                    x: s.x + dt * d[0],
                    y: s.y + dt * d[1],
                    theta: s.theta + dt * d[2],
                };
            }
            ((s.x - analytic.x).powi(2) + (s.y - analytic.y).powi(2)).sqrt()
        };
        let e1 = run(0.01);
        let e2 = run(0.005);
        let ratio = e1 / e2;
        assert!((ratio - 2.0).abs() < 0.4, "halving dt gave ratio {ratio}");
    }

    #[test]
    fn wrap_angle_range() {
        assert_relative_eq!(wrap_angle(3.0 * std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(wrap_angle(-std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(wrap_angle(0.5), 0.5);
    }
}
