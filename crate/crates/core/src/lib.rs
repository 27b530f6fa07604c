//! Risk-aware safety filters for control-affine systems.
//!
//! The crate is organized around a small pipeline:
//!
//! * [`qp`] — a dense primal-dual interior-point solver for the quadratic and
//!   linear programs everything else assembles.
//! * [`diff`] — differentiation through solved programs: full solution
//!   Jacobians via the KKT system and optimal-value gradients via duals.
//! * [`risk`] — empirical VaR/CVaR and worst-case CVaR under a Wasserstein
//!   ambiguity set, reduced to finite linear programs with value
//!   sensitivities.
//! * [`barrier`] — control barrier conditions built from risk estimates and
//!   the controller QPs (CLF-QP, min-norm, tracking) that enforce them.
//! * [`plants`] — the two case-study systems (first-order Dubins car, planar
//!   quadcopter), circular obstacles, and integrators.
//! * [`sim`] — closed-loop scenario execution, Monte-Carlo safety
//!   evaluation, and controller comparison.
//! * [`oracles`] — independent reference implementations used by the test
//!   suites and the CLI self-test.

pub mod barrier;
pub mod diff;
pub mod oracles;
pub mod plants;
pub mod qp;
pub mod risk;
pub mod sim;

pub use barrier::{BarrierEval, ClfSpec, ControlAffineModel, ControllerOutput, KappaFn};
pub use plants::{DubinsCar, Obstacle, PlanarQuadcopter, QuadParams};
pub use qp::{QpProblem, QpSolution, QpStatus};
pub use risk::{AmbiguitySpec, DrCase, RiskEstimate, SampleSet};
pub use sim::{MetricsSummary, ScenarioConfig, TrajectoryLog};
