//! Closed-loop scenario execution and evaluation.
//!
//! A [`ScenarioConfig`] declares everything a run needs: plant, controller,
//! noise and ambiguity parameters, obstacles, and loop settings. Each step
//! evaluates the obstacle barriers, estimates the worst-case CVaR (for the
//! robust controller), solves the controller QP, and integrates forward.
//! The per-step records collect into a [`TrajectoryLog`], which the
//! Monte-Carlo evaluator turns into a [`MetricsSummary`].

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{
    self, BarrierError, ClfSpec, ControlAffineModel, ControlObjective, Fallback, KappaFn,
    TrackingObjective,
};
use crate::plants::{circle_barrier, rk4_step, DubinsCar, Obstacle, PlanarQuadcopter, QuadParams};
use crate::risk::{self, AmbiguitySpec, DrCase, RiskError, SampleSet};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("simulation aborted at step {step}: {reason}")]
    Aborted { step: usize, reason: String },
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Barrier(#[from] BarrierError),
}

fn config_err(path: &str, message: impl Into<String>) -> SimError {
    SimError::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Which controller closes the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Cbf,
    Drcbf,
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControllerKind::Cbf => write!(f, "cbf"),
            ControllerKind::Drcbf => write!(f, "drcbf"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    #[default]
    Euler,
    Rk4,
}

/// Disturbance model: a seeded truncated-Gaussian sample set, drawn once at
/// scenario start by default or redrawn every step when
/// `resample_each_step`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub seed: u64,
    #[serde(default)]
    pub resample_each_step: bool,
}

/// Ambiguity-set parameters. Omitted noise bounds default to the truncation
/// interval `mean +/- 3 std`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AmbiguityConfig {
    pub alpha: f64,
    pub lambda: f64,
    #[serde(default)]
    pub lower_bound: Option<f64>,
    #[serde(default)]
    pub upper_bound: Option<f64>,
    pub case: u8,
    #[serde(default)]
    pub wasserstein_radius: f64,
}

impl AmbiguityConfig {
    pub fn to_spec(&self, noise: &NoiseConfig) -> Result<AmbiguitySpec, SimError> {
        let case_selector = match self.case {
            1 => DrCase::Case1,
            2 => DrCase::Case2,
            other => {
                return Err(config_err(
                    "ambiguity.case",
                    format!("must be 1 or 2, got {other}"),
                ))
            }
        };
        let spec = AmbiguitySpec {
            alpha: self.alpha,
            lambda_penalty: self.lambda,
            lower_bound: self.lower_bound.unwrap_or(noise.mean - 3.0 * noise.std),
            upper_bound: self.upper_bound.unwrap_or(noise.mean + 3.0 * noise.std),
            case_selector,
            wasserstein_radius: self.wasserstein_radius,
        };
        spec.validate()
            .map_err(|e| config_err("ambiguity", e.to_string()))?;
        Ok(spec)
    }
}

/// Goal-seeking weights for the relaxed Lyapunov constraint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClfConfig {
    pub control_weight: Vec<f64>,
    pub relaxation_weight: f64,
    pub state_weight: Vec<f64>,
}

/// Circular reference trajectory for the quadcopter.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CircleReference {
    pub center: [f64; 2],
    pub radius: f64,
    pub period: f64,
}

impl CircleReference {
    fn angular_rate(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.period
    }

    pub fn position(&self, t: f64) -> [f64; 2] {
        let a = self.angular_rate() * t;
        [
            self.center[0] + self.radius * a.cos(),
            self.center[1] + self.radius * a.sin(),
        ]
    }

    pub fn velocity(&self, t: f64) -> [f64; 2] {
        let w = self.angular_rate();
        let a = w * t;
        [-self.radius * w * a.sin(), self.radius * w * a.cos()]
    }

    pub fn acceleration(&self, t: f64) -> [f64; 2] {
        let w = self.angular_rate();
        let a = w * t;
        [
            -self.radius * w * w * a.cos(),
            -self.radius * w * w * a.sin(),
        ]
    }
}

/// PD feedback-linearizing tracker gains and control weighting for the
/// quadcopter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackingConfig {
    pub control_weight: Vec<f64>,
    pub position_kp: f64,
    pub position_kd: f64,
    pub attitude_kp: f64,
    pub attitude_kd: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PlantConfig {
    Dubins {
        start: [f64; 3],
        goal: [f64; 2],
        control_lower: [f64; 3],
        control_upper: [f64; 3],
        /// One linear class-K coefficient per obstacle.
        kappa: Vec<f64>,
        clf: ClfConfig,
        goal_tolerance: f64,
    },
    Quadcopter {
        params: QuadParams,
        start: [f64; 6],
        reference: CircleReference,
        /// One `[inner, outer]` class-K pair per obstacle.
        kappa: Vec<[f64; 2]>,
        tracking: TrackingConfig,
    },
}

impl PlantConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            PlantConfig::Dubins { .. } => "dubins",
            PlantConfig::Quadcopter { .. } => "quadcopter",
        }
    }

    pub fn state_labels(&self) -> &'static [&'static str] {
        match self {
            PlantConfig::Dubins { .. } => &["x", "y", "theta"],
            PlantConfig::Quadcopter { .. } => &["x", "y", "theta", "xdot", "ydot", "thetadot"],
        }
    }

    pub fn control_labels(&self) -> &'static [&'static str] {
        match self {
            PlantConfig::Dubins { .. } => &["vx", "vy", "omega"],
            PlantConfig::Quadcopter { .. } => &["t_r", "t_l"],
        }
    }
}

/// Declarative closed-loop experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub plant: PlantConfig,
    pub controller: ControllerKind,
    pub ambiguity: AmbiguityConfig,
    pub noise: NoiseConfig,
    pub obstacles: Vec<Obstacle>,
    pub dt: f64,
    pub horizon: usize,
    #[serde(default)]
    pub integrator: Integrator,
    /// When false (the default), file outputs zero the timing channels so
    /// identical runs produce identical bytes. In-memory logs always carry
    /// the measured times.
    #[serde(default)]
    pub timing_in_outputs: bool,
    /// Free-form provenance notes carried through to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<BTreeMap<String, String>>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.horizon < 1 {
            return Err(config_err("horizon", "must be at least 1"));
        }
        if !(self.dt > 0.0) {
            return Err(config_err("dt", format!("must be positive, got {}", self.dt)));
        }
        if self.noise.count == 0 {
            return Err(config_err("noise.count", "must be at least 1"));
        }
        if !(self.noise.std >= 0.0) || !self.noise.std.is_finite() || !self.noise.mean.is_finite()
        {
            return Err(config_err("noise", "mean/std must be finite with std >= 0"));
        }
        for (i, obs) in self.obstacles.iter().enumerate() {
            obs.validate()
                .map_err(|m| config_err(&format!("obstacles[{i}]"), m))?;
        }
        self.ambiguity.to_spec(&self.noise)?;
        match &self.plant {
            PlantConfig::Dubins {
                kappa,
                clf,
                goal_tolerance,
                control_lower,
                control_upper,
                ..
            } => {
                if kappa.len() != self.obstacles.len() {
                    return Err(config_err(
                        "plant.kappa",
                        format!(
                            "needs one coefficient per obstacle ({} obstacles, {} kappas)",
                            self.obstacles.len(),
                            kappa.len()
                        ),
                    ));
                }
                if kappa.iter().any(|&k| !(k > 0.0)) {
                    return Err(config_err("plant.kappa", "coefficients must be positive"));
                }
                if clf.control_weight.len() != 3 || clf.state_weight.len() != 3 {
                    return Err(config_err(
                        "plant.clf",
                        "control_weight and state_weight must each have 3 entries",
                    ));
                }
                if clf.control_weight.iter().any(|&w| !(w > 0.0))
                    || clf.state_weight.iter().any(|&w| w < 0.0)
                    || !(clf.relaxation_weight > 0.0)
                {
                    return Err(config_err("plant.clf", "weights must be positive"));
                }
                if !(*goal_tolerance > 0.0) {
                    return Err(config_err("plant.goal_tolerance", "must be positive"));
                }
                if control_lower.iter().zip(control_upper).any(|(l, u)| l >= u) {
                    return Err(config_err("plant.control_lower", "bounds must satisfy lower < upper"));
                }
            }
            PlantConfig::Quadcopter {
                params,
                kappa,
                tracking,
                reference,
                ..
            } => {
                params
                    .validate()
                    .map_err(|m| config_err("plant.params", m))?;
                if kappa.len() != self.obstacles.len() {
                    return Err(config_err(
                        "plant.kappa",
                        format!(
                            "needs one [inner, outer] pair per obstacle ({} obstacles, {} pairs)",
                            self.obstacles.len(),
                            kappa.len()
                        ),
                    ));
                }
                if kappa.iter().any(|pair| pair.iter().any(|&k| !(k > 0.0))) {
                    return Err(config_err("plant.kappa", "coefficients must be positive"));
                }
                if tracking.control_weight.len() != 2 {
                    return Err(config_err(
                        "plant.tracking.control_weight",
                        "must have 2 entries",
                    ));
                }
                if !(reference.period > 0.0) || !(reference.radius > 0.0) {
                    return Err(config_err("plant.reference", "radius and period must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Per-step record. `cvar_values` holds the barrier-condition argument the
/// controller enforced: the worst-case CVaR for the robust controller, the
/// plain (or lifted) barrier value for the vanilla one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    pub state: Vec<f64>,
    pub control: Vec<f64>,
    pub h_values: Vec<f64>,
    pub cvar_values: Vec<f64>,
    pub fallback: Fallback,
    pub solve_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    GoalReached,
    HorizonExhausted,
    InfeasibleFallback,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub records: Vec<StepRecord>,
    pub termination: TerminationReason,
    pub final_state: Vec<f64>,
    pub fallback_steps: usize,
}

/// Evaluation of one trajectory: clearances, worst barrier levels, the
/// Monte-Carlo chance-constraint estimate, goal/tracking quality, and solver
/// timing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub steps: usize,
    pub termination: TerminationReason,
    pub min_clearance: Vec<f64>,
    pub max_h: f64,
    pub max_cvar: f64,
    pub violation_rate_aggregate: f64,
    pub violation_rate_max_step: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goal_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps_to_goal: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tracking_rmse_off_obstacle: Option<f64>,
    pub fallback_steps: usize,
    pub mean_solve_ms: f64,
    pub median_solve_ms: f64,
}

/// Paired run of both controllers on identical geometry and seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerComparison {
    pub cbf: MetricsSummary,
    pub drcbf: MetricsSummary,
    /// Per-obstacle `drcbf - cbf` minimum clearance.
    pub clearance_delta: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub goal_error_delta: Option<f64>,
}

/// Fraction of the horizon allowed to run on the fallback ladder before the
/// run is declared misconfigured rather than transiently stressed.
const FALLBACK_BUDGET: f64 = 0.05;
/// Off-obstacle mask: steps whose reference point clears every obstacle by
/// this margin count toward the tracking error.
const TRACKING_MASK_MARGIN: f64 = 1.5;

/// Runs a scenario to termination. Deterministic given the config.
pub fn run_scenario(config: &ScenarioConfig) -> Result<TrajectoryLog, SimError> {
    config.validate()?;
    match &config.plant {
        PlantConfig::Dubins {
            start,
            goal,
            control_lower,
            control_upper,
            kappa,
            clf,
            goal_tolerance,
        } => run_dubins(
            config,
            *start,
            *goal,
            *control_lower,
            *control_upper,
            kappa,
            clf,
            *goal_tolerance,
        ),
        PlantConfig::Quadcopter {
            params,
            start,
            reference,
            kappa,
            tracking,
        } => run_quad(config, *params, *start, *reference, kappa, tracking),
    }
}

fn kappas_from(coeffs: &[f64]) -> Result<Vec<KappaFn>, SimError> {
    coeffs
        .iter()
        .map(|&k| KappaFn::linear(k).map_err(SimError::from))
        .collect()
}

fn sample_set_for_step(
    noise: &NoiseConfig,
    step: usize,
    current: Option<SampleSet>,
) -> Result<SampleSet, SimError> {
    if step == 0 || noise.resample_each_step || current.is_none() {
        let seed = noise.seed.wrapping_add(step as u64);
        Ok(SampleSet::draw(noise.count, noise.mean, noise.std, seed)?)
    } else {
        Ok(current.unwrap())
    }
}

fn integrate(
    model: &dyn ControlAffineModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    dt: f64,
    integrator: Integrator,
) -> DVector<f64> {
    let next = match integrator {
        Integrator::Euler => {
            let d = model.drift(x) + model.actuation(x) * u;
            x + d * dt
        }
        Integrator::Rk4 => rk4_step(|s| model.drift(s) + model.actuation(s) * u, x, dt),
    };
    model.wrap_state(next)
}

#[allow(clippy::too_many_arguments)]
fn run_dubins(
    config: &ScenarioConfig,
    start: [f64; 3],
    goal: [f64; 2],
    control_lower: [f64; 3],
    control_upper: [f64; 3],
    kappa: &[f64],
    clf: &ClfConfig,
    goal_tolerance: f64,
) -> Result<TrajectoryLog, SimError> {
    let car = DubinsCar::new(control_lower, control_upper);
    let kappas = kappas_from(kappa)?;
    let clf_spec = ClfSpec {
        target: DVector::from_row_slice(&[goal[0], goal[1], 0.0]),
        state_weight: DVector::from_row_slice(&clf.state_weight),
        control_weight: DMatrix::from_diagonal(&DVector::from_row_slice(&clf.control_weight)),
        relaxation_weight: clf.relaxation_weight,
    };
    let spec = config.ambiguity.to_spec(&config.noise)?;
    let mut samples: Option<SampleSet> = None;

    let mut x = DVector::from_row_slice(&start);
    let mut records = Vec::with_capacity(config.horizon);
    let mut fallback_steps = 0usize;
    let fallback_budget = (config.horizon as f64 * FALLBACK_BUDGET).ceil() as usize;
    let mut termination = TerminationReason::HorizonExhausted;

    for step in 0..config.horizon {
        samples = Some(sample_set_for_step(&config.noise, step, samples.take())?);
        let sample_set = samples.as_ref().unwrap();
        let t = step as f64 * config.dt;
        let started = Instant::now();

        let h_evals: Vec<_> = config
            .obstacles
            .iter()
            .map(|obs| circle_barrier(&[x[0], x[1]], obs, 3))
            .collect();
        let h_values: Vec<f64> = h_evals.iter().map(|e| e.value).collect();

        let (cbcs, cvar_values) = match config.controller {
            ControllerKind::Cbf => (
                barrier::pair_conditions(&h_evals, &kappas, 3)?,
                h_values.clone(),
            ),
            ControllerKind::Drcbf => {
                let mut risks = Vec::with_capacity(h_evals.len());
                for eval in &h_evals {
                    risks.push(risk::risk_gradient(eval, sample_set, &spec)?);
                }
                let values = risks.iter().map(|(est, _)| est.value).collect();
                (barrier::risk_conditions(&risks, &kappas, 3)?, values)
            }
        };
        let out = barrier::solve_control_qp(
            &car,
            &cbcs,
            &ControlObjective::Clf(clf_spec.clone()),
            &x,
            barrier::FallbackPolicy::Ladder,
        )
        .map_err(|e| SimError::Aborted {
            step,
            reason: e.to_string(),
        })?;
        let solve_ms = started.elapsed().as_secs_f64() * 1e3;

        if out.fallback != Fallback::None {
            fallback_steps += 1;
        }
        records.push(StepRecord {
            t,
            state: x.iter().cloned().collect(),
            control: out.control.iter().cloned().collect(),
            h_values,
            cvar_values,
            fallback: out.fallback,
            solve_ms,
        });
        if fallback_steps > fallback_budget {
            termination = TerminationReason::InfeasibleFallback;
            break;
        }

        x = integrate(&car, &x, &out.control, config.dt, config.integrator);
        let goal_dist = ((x[0] - goal[0]).powi(2) + (x[1] - goal[1]).powi(2)).sqrt();
        if goal_dist <= goal_tolerance {
            termination = TerminationReason::GoalReached;
            break;
        }
    }

    log::info!(
        "dubins/{} finished: {:?} after {} steps",
        config.controller,
        termination,
        records.len()
    );
    Ok(TrajectoryLog {
        records,
        termination,
        final_state: x.iter().cloned().collect(),
        fallback_steps,
    })
}

/// PD feedback-linearizing tracker: desired planar acceleration from the
/// reference, converted to total thrust and a desired tilt, with a PD loop
/// closing the attitude through the differential-thrust channel.
fn quad_nominal_control(
    x: &DVector<f64>,
    t: f64,
    reference: &CircleReference,
    tracking: &TrackingConfig,
    params: &QuadParams,
) -> DVector<f64> {
    let p_ref = reference.position(t);
    let v_ref = reference.velocity(t);
    let a_ref = reference.acceleration(t);
    let ax = a_ref[0]
        + tracking.position_kd * (v_ref[0] - x[3])
        + tracking.position_kp * (p_ref[0] - x[0]);
    let ay = a_ref[1]
        + tracking.position_kd * (v_ref[1] - x[4])
        + tracking.position_kp * (p_ref[1] - x[1]);
    let fx = params.mass * ax;
    let fy = params.mass * (ay + params.gravity);
    let total = (fx * fx + fy * fy)
        .sqrt()
        .clamp(2.0 * params.thrust_min, 2.0 * params.thrust_max);
    let theta_des = fx.atan2(fy);
    let theta_err = crate::plants::wrap_angle(theta_des - x[2]);
    let theta_acc = tracking.attitude_kp * theta_err - tracking.attitude_kd * x[5];
    let diff = (params.inertia * theta_acc / params.arm_length)
        .clamp(-(params.thrust_max - params.thrust_min), params.thrust_max - params.thrust_min);
    let t_r = ((total + diff) / 2.0).clamp(params.thrust_min, params.thrust_max);
    let t_l = ((total - diff) / 2.0).clamp(params.thrust_min, params.thrust_max);
    DVector::from_row_slice(&[t_r, t_l])
}

fn run_quad(
    config: &ScenarioConfig,
    params: QuadParams,
    start: [f64; 6],
    reference: CircleReference,
    kappa: &[[f64; 2]],
    tracking: &TrackingConfig,
) -> Result<TrajectoryLog, SimError> {
    let quad = PlanarQuadcopter::new(params);
    let kappa1s = kappas_from(&kappa.iter().map(|p| p[0]).collect::<Vec<_>>())?;
    let kappa2s = kappas_from(&kappa.iter().map(|p| p[1]).collect::<Vec<_>>())?;
    let spec = config.ambiguity.to_spec(&config.noise)?;
    let mut samples: Option<SampleSet> = None;

    let mut x = DVector::from_row_slice(&start);
    let mut records = Vec::with_capacity(config.horizon);
    let mut fallback_steps = 0usize;
    let fallback_budget = (config.horizon as f64 * FALLBACK_BUDGET).ceil() as usize;
    let mut termination = TerminationReason::HorizonExhausted;

    for step in 0..config.horizon {
        samples = Some(sample_set_for_step(&config.noise, step, samples.take())?);
        let sample_set = samples.as_ref().unwrap();
        let t = step as f64 * config.dt;
        let started = Instant::now();

        let nominal = quad_nominal_control(&x, t, &reference, tracking, &params);
        let objective = ControlObjective::Tracking(TrackingObjective {
            nominal,
            weight: DMatrix::from_diagonal(&DVector::from_row_slice(&tracking.control_weight)),
        });

        let h_evals: Vec<_> = config
            .obstacles
            .iter()
            .map(|obs| circle_barrier(&[x[0], x[1]], obs, 6))
            .collect();
        let h_values: Vec<f64> = h_evals.iter().map(|e| e.value).collect();
        let mut psis = Vec::with_capacity(h_evals.len());
        for (eval, k1) in h_evals.iter().zip(&kappa1s) {
            psis.push(barrier::hocbf_psi(&quad, eval, &x, *k1)?);
        }

        let (cbcs, cvar_values) = match config.controller {
            ControllerKind::Cbf => {
                let values = psis.iter().map(|p| p.value).collect();
                (barrier::pair_conditions(&psis, &kappa2s, 6)?, values)
            }
            ControllerKind::Drcbf => {
                let risks =
                    barrier::second_order_risks(&psis, &kappa1s, sample_set, &spec)?;
                let values = risks.iter().map(|(est, _)| est.value).collect();
                (barrier::risk_conditions(&risks, &kappa2s, 6)?, values)
            }
        };
        let out = barrier::solve_control_qp(
            &quad,
            &cbcs,
            &objective,
            &x,
            barrier::FallbackPolicy::Ladder,
        )
        .map_err(|e| SimError::Aborted {
            step,
            reason: e.to_string(),
        })?;
        let solve_ms = started.elapsed().as_secs_f64() * 1e3;

        if out.fallback != Fallback::None {
            fallback_steps += 1;
        }
        records.push(StepRecord {
            t,
            state: x.iter().cloned().collect(),
            control: out.control.iter().cloned().collect(),
            h_values,
            cvar_values,
            fallback: out.fallback,
            solve_ms,
        });
        if fallback_steps > fallback_budget {
            termination = TerminationReason::InfeasibleFallback;
            break;
        }

        x = integrate(&quad, &x, &out.control, config.dt, config.integrator);
    }

    log::info!(
        "quadcopter/{} finished: {:?} after {} steps",
        config.controller,
        termination,
        records.len()
    );
    Ok(TrajectoryLog {
        records,
        termination,
        final_state: x.iter().cloned().collect(),
        fallback_steps,
    })
}

/// Monte-Carlo chance-constraint evaluation plus trajectory metrics. For
/// every logged state and obstacle, draws `n_draws` fresh truncated-Gaussian
/// disturbances and counts violations `h(x) + w > 0`; reports the aggregate
/// rate over all (step, obstacle, draw) triples and the worst per-step rate.
pub fn monte_carlo_violation_rate(
    config: &ScenarioConfig,
    log: &TrajectoryLog,
    n_draws: usize,
    seed: u64,
) -> Result<MetricsSummary, SimError> {
    if log.records.is_empty() {
        return Err(SimError::Aborted {
            step: 0,
            reason: "cannot evaluate an empty trajectory".into(),
        });
    }
    if n_draws < 1 {
        return Err(SimError::Aborted {
            step: 0,
            reason: "n_draws must be at least 1".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_obs = config.obstacles.len();
    let mut min_clearance = vec![f64::INFINITY; n_obs];
    let mut max_h = f64::NEG_INFINITY;
    let mut max_cvar = f64::NEG_INFINITY;
    let mut violations = 0usize;
    let mut max_step_rate = 0.0f64;

    for record in &log.records {
        let (px, py) = (record.state[0], record.state[1]);
        for (i, obs) in config.obstacles.iter().enumerate() {
            min_clearance[i] = min_clearance[i].min(obs.clearance(px, py));
        }
        for &h in &record.h_values {
            max_h = max_h.max(h);
        }
        for &c in &record.cvar_values {
            max_cvar = max_cvar.max(c);
        }
        for &h in &record.h_values {
            let draws = risk::draw_truncated(&mut rng, n_draws, config.noise.mean, config.noise.std);
            let count = draws.iter().filter(|&&w| h + w > 0.0).count();
            violations += count;
            max_step_rate = max_step_rate.max(count as f64 / n_draws as f64);
        }
    }
    // The final state also bounds the clearance.
    let (px, py) = (log.final_state[0], log.final_state[1]);
    for (i, obs) in config.obstacles.iter().enumerate() {
        min_clearance[i] = min_clearance[i].min(obs.clearance(px, py));
    }

    let total = log.records.len() * n_obs.max(1) * n_draws;
    let aggregate = if n_obs == 0 {
        0.0
    } else {
        violations as f64 / total as f64
    };

    let mut solve_times: Vec<f64> = log.records.iter().map(|r| r.solve_ms).collect();
    solve_times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    let mean_solve_ms = solve_times.iter().sum::<f64>() / solve_times.len() as f64;
    let median_solve_ms = solve_times[solve_times.len() / 2];

    let (goal_error, steps_to_goal, tracking_rmse) = match &config.plant {
        PlantConfig::Dubins { goal, .. } => {
            let err = ((log.final_state[0] - goal[0]).powi(2)
                + (log.final_state[1] - goal[1]).powi(2))
            .sqrt();
            let steps = (log.termination == TerminationReason::GoalReached)
                .then_some(log.records.len());
            (Some(err), steps, None)
        }
        PlantConfig::Quadcopter { reference, .. } => {
            let mut acc = 0.0;
            let mut n = 0usize;
            for record in &log.records {
                let p_ref = reference.position(record.t);
                let masked = config.obstacles.iter().any(|obs| {
                    obs.clearance(p_ref[0], p_ref[1]) < TRACKING_MASK_MARGIN
                });
                if !masked {
                    acc += (record.state[0] - p_ref[0]).powi(2)
                        + (record.state[1] - p_ref[1]).powi(2);
                    n += 1;
                }
            }
            let rmse = (n > 0).then(|| (acc / n as f64).sqrt());
            (None, None, rmse)
        }
    };

    Ok(MetricsSummary {
        steps: log.records.len(),
        termination: log.termination,
        min_clearance,
        max_h,
        max_cvar,
        violation_rate_aggregate: aggregate,
        violation_rate_max_step: max_step_rate,
        goal_error,
        steps_to_goal,
        tracking_rmse_off_obstacle: tracking_rmse,
        fallback_steps: log.fallback_steps,
        mean_solve_ms,
        median_solve_ms,
    })
}

/// Runs both controllers on otherwise identical configuration and seeds and
/// pairs the summaries with per-obstacle clearance deltas.
pub fn compare_controllers(
    config: &ScenarioConfig,
    n_draws: usize,
    eval_seed: u64,
) -> Result<ControllerComparison, SimError> {
    let run_one = |kind: ControllerKind| -> Result<MetricsSummary, SimError> {
        let mut cfg = config.clone();
        cfg.controller = kind;
        let log = run_scenario(&cfg)?;
        monte_carlo_violation_rate(&cfg, &log, n_draws, eval_seed)
    };
    let cbf = run_one(ControllerKind::Cbf)?;
    let drcbf = run_one(ControllerKind::Drcbf)?;
    let clearance_delta = drcbf
        .min_clearance
        .iter()
        .zip(&cbf.min_clearance)
        .map(|(d, c)| d - c)
        .collect();
    let goal_error_delta = match (drcbf.goal_error, cbf.goal_error) {
        (Some(d), Some(c)) => Some(d - c),
        _ => None,
    };
    Ok(ControllerComparison {
        cbf,
        drcbf,
        clearance_delta,
        goal_error_delta,
    })
}
