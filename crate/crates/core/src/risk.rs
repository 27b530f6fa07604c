//! Value-at-risk, CVaR, and worst-case CVaR under a Wasserstein ambiguity
//! set.
//!
//! The stochastic constraint is additive, `h(x, w) = h(x) + w`, with scalar
//! noise `w` drawn from a truncated Gaussian. The empirical CVaR is the
//! classic threshold-plus-mean-excess linear program. The worst case over a
//! Wasserstein ball around the empirical distribution is handled with the
//! ball constraint moved into the objective as a transport penalty
//! `lambda`, which collapses the problem to one of two finite LPs:
//!
//! * Case 1 assumes the shifted constraint stays below the threshold, so the
//!   inner supremum sits at the samples themselves and the value is the
//!   worst shifted sample.
//! * Case 2 assumes it stays above, so the supremum sits at a vertex of the
//!   noise interval; the LP enumerates the candidates `{lower, upper, w^m}`
//!   per sample with two slack families.
//!
//! Each estimate carries the sensitivity of its value to the constraint
//! level `h`, recovered from the LP duals, which is what the barrier
//! condition differentiates through.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::BarrierEval;
use crate::diff::{self, ParamMap};
use crate::qp::{self, QpProblem, QpStatus};

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("sample set is empty")]
    EmptySamples,
    #[error("confidence level must be in (0,1), got {0}")]
    BadAlpha(f64),
    #[error("invalid ambiguity spec: {0}")]
    BadSpec(String),
    #[error("risk program did not solve (status {status:?}): {context}")]
    ProgramFailed { status: QpStatus, context: String },
    #[error(transparent)]
    Qp(#[from] qp::QpError),
    #[error(transparent)]
    Diff(#[from] diff::DiffError),
}

/// Which worst-case reformulation to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DrCase {
    Case1,
    Case2,
}

/// Ambiguity-set parameters. The Wasserstein radius is absorbed into the
/// transport penalty by the reformulation and is retained for diagnostics
/// only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AmbiguitySpec {
    pub alpha: f64,
    pub lambda_penalty: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub case_selector: DrCase,
    pub wasserstein_radius: f64,
}

impl AmbiguitySpec {
    pub fn validate(&self) -> Result<(), RiskError> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(RiskError::BadAlpha(self.alpha));
        }
        if !(self.lambda_penalty > 0.0) {
            return Err(RiskError::BadSpec(format!(
                "lambda_penalty must be positive, got {}",
                self.lambda_penalty
            )));
        }
        if !(self.lower_bound <= self.upper_bound) {
            return Err(RiskError::BadSpec(format!(
                "noise bounds are inverted: [{}, {}]",
                self.lower_bound, self.upper_bound
            )));
        }
        if self.wasserstein_radius < 0.0 {
            return Err(RiskError::BadSpec(format!(
                "wasserstein_radius must be nonnegative, got {}",
                self.wasserstein_radius
            )));
        }
        Ok(())
    }

    /// Bounds scaled by a positive factor; used when the noise channel is
    /// composed with a linear gain.
    pub fn scaled(&self, factor: f64) -> AmbiguitySpec {
        AmbiguitySpec {
            lower_bound: factor * self.lower_bound,
            upper_bound: factor * self.upper_bound,
            ..self.clone()
        }
    }
}

/// A seeded draw of disturbance samples from a Gaussian truncated to three
/// standard deviations around the mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleSet {
    samples: Vec<f64>,
    seed: u64,
    mean: f64,
    std: f64,
}

impl SampleSet {
    /// Draws `count` samples from `N(mean, std^2)` truncated to
    /// `[mean - 3 std, mean + 3 std]` by rejection.
    pub fn draw(count: usize, mean: f64, std: f64, seed: u64) -> Result<SampleSet, RiskError> {
        if count == 0 {
            return Err(RiskError::EmptySamples);
        }
        if std < 0.0 || !std.is_finite() || !mean.is_finite() {
            return Err(RiskError::BadSpec(format!(
                "noise parameters must be finite with std >= 0, got mean {mean}, std {std}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = draw_truncated(&mut rng, count, mean, std);
        Ok(SampleSet {
            samples,
            seed,
            mean,
            std,
        })
    }

    /// Wraps explicit values (tests and fixtures).
    pub fn from_values(samples: Vec<f64>) -> Result<SampleSet, RiskError> {
        if samples.is_empty() {
            return Err(RiskError::EmptySamples);
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(RiskError::BadSpec("samples must be finite".into()));
        }
        Ok(SampleSet {
            samples,
            seed: 0,
            mean: 0.0,
            std: 0.0,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    /// Default noise interval implied by the truncation.
    pub fn truncation_bounds(&self) -> (f64, f64) {
        (self.mean - 3.0 * self.std, self.mean + 3.0 * self.std)
    }

    /// Samples scaled by a positive linear gain.
    pub fn scaled(&self, factor: f64) -> SampleSet {
        SampleSet {
            samples: self.samples.iter().map(|w| factor * w).collect(),
            seed: self.seed,
            mean: factor * self.mean,
            std: factor.abs() * self.std,
        }
    }
}

/// One truncated-Gaussian draw shared by the sample set and the Monte-Carlo
/// evaluator.
pub fn draw_truncated(rng: &mut ChaCha8Rng, count: usize, mean: f64, std: f64) -> Vec<f64> {
    if std == 0.0 {
        return vec![mean; count];
    }
    let normal = Normal::new(mean, std).expect("validated std");
    let (lo, hi) = (mean - 3.0 * std, mean + 3.0 * std);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let w = normal.sample(rng);
        if w >= lo && w <= hi {
            out.push(w);
        }
    }
    out
}

/// Worst-case CVaR estimate with the quantities needed downstream: the
/// optimizing threshold, per-sample slacks, LP duals, and the sensitivity of
/// the value to the constraint level.
#[derive(Debug, Clone)]
pub struct RiskEstimate {
    pub value: f64,
    pub eta_star: f64,
    pub slack_s: Vec<f64>,
    pub slack_l: Vec<f64>,
    pub duals: Vec<f64>,
    pub d_value_d_h: f64,
    /// Set when a Case-2 request fell back to Case 1.
    pub case1_fallback: bool,
}

/// Empirical value-at-risk: the smallest sample value whose empirical CDF
/// reaches `alpha` (ascending order statistic at rank `ceil(alpha n)`).
pub fn empirical_var(values: &[f64], alpha: f64) -> Result<f64, RiskError> {
    if values.is_empty() {
        return Err(RiskError::EmptySamples);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(RiskError::BadAlpha(alpha));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let rank = ((alpha * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

/// Empirical CVaR by the threshold LP: variables `(eta, s^1..s^N)`,
/// objective `eta + sum s^m / ((1-alpha) N)`, constraints
/// `v^m - eta <= s^m`, `s^m >= 0`. Returns `(value, eta_star)`.
pub fn empirical_cvar(values: &[f64], alpha: f64) -> Result<(f64, f64), RiskError> {
    if values.is_empty() {
        return Err(RiskError::EmptySamples);
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(RiskError::BadAlpha(alpha));
    }
    let n = values.len();
    // The program is translation-equivariant in the values; solving around
    // their mean keeps the LP data at spread scale for any level.
    let shift = values.iter().sum::<f64>() / n as f64;
    let scale = 1.0 / ((1.0 - alpha) * n as f64);
    let mut cost = DVector::zeros(n + 1);
    cost[0] = 1.0;
    for m in 0..n {
        cost[1 + m] = scale;
    }
    let mut g = DMatrix::zeros(2 * n, n + 1);
    let mut h = DVector::zeros(2 * n);
    for m in 0..n {
        g[(m, 0)] = -1.0;
        g[(m, 1 + m)] = -1.0;
        h[m] = -(values[m] - shift);
        g[(n + m, 1 + m)] = -1.0;
        h[n + m] = 0.0;
    }
    let problem = QpProblem::linear(cost).with_ineq(g, h)?;
    let sol = qp::solve_lp(&problem, qp::DEFAULT_TOL)?;
    if sol.status != QpStatus::Optimal {
        return Err(RiskError::ProgramFailed {
            status: sol.status,
            context: "empirical CVaR program".into(),
        });
    }
    Ok((sol.objective_value + shift, sol.primal[0] + shift))
}

/// Order-1 Wasserstein distance between two scalar empirical distributions.
/// For equal sizes this is the mean absolute difference of the sorted
/// samples; unequal sizes are replicated to a common size first, which
/// leaves both empirical distributions unchanged.
pub fn wasserstein_1d(p: &[f64], q: &[f64]) -> Result<f64, RiskError> {
    if p.is_empty() || q.is_empty() {
        return Err(RiskError::EmptySamples);
    }
    let common = lcm(p.len(), q.len());
    let expand = |v: &[f64]| -> Vec<f64> {
        let times = common / v.len();
        let mut out = Vec::with_capacity(common);
        for &x in v {
            out.extend(std::iter::repeat(x).take(times));
        }
        out.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
        out
    };
    let ps = expand(p);
    let qs = expand(q);
    let total: f64 = ps.iter().zip(&qs).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / common as f64)
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(mut a: usize, mut b: usize) -> usize {
        while b != 0 {
            (a, b) = (b, a % b);
        }
        a
    }
    a / gcd(a, b) * b
}

fn finish_estimate(
    problem: &QpProblem,
    sol: &qp::QpSolution,
    n: usize,
    has_l: bool,
    h_map: ParamMap,
    shift: f64,
    context: &str,
) -> Result<RiskEstimate, RiskError> {
    if sol.status != QpStatus::Optimal {
        return Err(RiskError::ProgramFailed {
            status: sol.status,
            context: context.into(),
        });
    }
    let grad = diff::value_gradient(problem, sol, &h_map)?;
    let slack_s = (0..n).map(|m| sol.primal[1 + m]).collect();
    let slack_l = if has_l {
        (0..n).map(|m| sol.primal[1 + n + m]).collect()
    } else {
        Vec::new()
    };
    Ok(RiskEstimate {
        value: sol.objective_value + shift,
        eta_star: sol.primal[0] + shift,
        slack_s,
        slack_l,
        duals: sol.ineq_duals.iter().cloned().collect(),
        d_value_d_h: grad.d_value[0],
        case1_fallback: false,
    })
}

/// Case-1 worst-case CVaR. Variables `(eta, s^1..s^N)`; for each sample the
/// shifted constraint is bounded by its slack and capped at the threshold,
/// so the optimum is the worst shifted sample with zero slacks.
pub fn dr_cvar_case1(
    h_val: f64,
    samples: &SampleSet,
    spec: &AmbiguitySpec,
) -> Result<RiskEstimate, RiskError> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(RiskError::EmptySamples);
    }
    let w = samples.samples();
    let n = w.len();
    let scale = 1.0 / ((1.0 - spec.alpha) * n as f64);
    let mut cost = DVector::zeros(n + 1);
    cost[0] = 1.0;
    for m in 0..n {
        cost[1 + m] = scale;
    }
    // Rows per sample: shifted value below slack, shifted value below zero,
    // slack nonnegative. Translation equivariance in `h` lets the LP solve
    // at level zero (data at noise scale whatever the state) with the level
    // added back afterwards.
    let mut g = DMatrix::zeros(3 * n, n + 1);
    let mut h = DVector::zeros(3 * n);
    let mut h_map = ParamMap::new(1);
    for m in 0..n {
        g[(3 * m, 0)] = -1.0;
        g[(3 * m, 1 + m)] = -1.0;
        h[3 * m] = -w[m];
        h_map = h_map.ineq_rhs(0, 3 * m, -1.0);

        g[(3 * m + 1, 0)] = -1.0;
        h[3 * m + 1] = -w[m];
        h_map = h_map.ineq_rhs(0, 3 * m + 1, -1.0);

        g[(3 * m + 2, 1 + m)] = -1.0;
        h[3 * m + 2] = 0.0;
    }
    let problem = QpProblem::linear(cost).with_ineq(g, h)?;
    let sol = qp::solve_lp(&problem, qp::DEFAULT_TOL)?;
    finish_estimate(&problem, &sol, n, false, h_map, h_val, "case-1 worst-case CVaR")
}

/// Case-2 worst-case CVaR, with the candidate noise vertices
/// `{upper, lower, w^m}` each contributing a slack row, a transport-penalty
/// row, and the case-validity row that keeps the shifted constraint
/// nonnegative. Variables `(eta, s^1..s^N, L^1..L^N)`.
pub fn dr_cvar_case2(
    h_val: f64,
    samples: &SampleSet,
    spec: &AmbiguitySpec,
) -> Result<RiskEstimate, RiskError> {
    spec.validate()?;
    if samples.is_empty() {
        return Err(RiskError::EmptySamples);
    }
    if !(spec.lower_bound.is_finite() && spec.upper_bound.is_finite()) {
        return Err(RiskError::BadSpec("case 2 needs finite noise bounds".into()));
    }
    let w = samples.samples();
    if w
        .iter()
        .any(|&x| x < spec.lower_bound - 1e-12 || x > spec.upper_bound + 1e-12)
    {
        return Err(RiskError::BadSpec(
            "samples must lie within the ambiguity bounds".into(),
        ));
    }
    let n = w.len();
    let (lb, ub, lam) = (spec.lower_bound, spec.upper_bound, spec.lambda_penalty);
    let scale = 1.0 / ((1.0 - spec.alpha) * n as f64);
    let mut cost = DVector::zeros(2 * n + 1);
    cost[0] = 1.0;
    for m in 0..n {
        cost[1 + m] = scale;
        cost[1 + n + m] = scale;
    }
    // As in Case 1, solve at level zero and shift afterwards.
    let mut g = DMatrix::zeros(9 * n, 2 * n + 1);
    let mut h = DVector::zeros(9 * n);
    let mut h_map = ParamMap::new(1);
    for m in 0..n {
        let s_col = 1 + m;
        let l_col = 1 + n + m;
        let base = 9 * m;
        // Candidate rows: (noise vertex, transport offset on the L row).
        let candidates = [(ub, -lam * (ub - w[m])), (lb, lam * (lb - w[m])), (w[m], 0.0)];
        for (k, &(vertex, offset)) in candidates.iter().enumerate() {
            let row_s = base + 3 * k;
            let row_l = base + 3 * k + 1;
            let row_pos = base + 3 * k + 2;
            // h + vertex - eta <= s^m
            g[(row_s, 0)] = -1.0;
            g[(row_s, s_col)] = -1.0;
            h[row_s] = -vertex;
            h_map = h_map.ineq_rhs(0, row_s, -1.0);
            // h + vertex - eta + offset <= L^m
            g[(row_l, 0)] = -1.0;
            g[(row_l, l_col)] = -1.0;
            h[row_l] = -vertex - offset;
            h_map = h_map.ineq_rhs(0, row_l, -1.0);
            // h + vertex - eta >= 0
            g[(row_pos, 0)] = 1.0;
            h[row_pos] = vertex;
            h_map = h_map.ineq_rhs(0, row_pos, 1.0);
        }
    }
    let problem = QpProblem::linear(cost).with_ineq(g, h)?;
    let sol = qp::solve_lp(&problem, qp::DEFAULT_TOL)?;
    finish_estimate(&problem, &sol, n, true, h_map, h_val, "case-2 worst-case CVaR")
}

/// Case dispatch with the fallback policy: a Case-2 failure returns the
/// Case-1 estimate flagged so the trajectory log can record it.
pub fn dr_cvar(
    h_val: f64,
    samples: &SampleSet,
    spec: &AmbiguitySpec,
) -> Result<RiskEstimate, RiskError> {
    match spec.case_selector {
        DrCase::Case1 => dr_cvar_case1(h_val, samples, spec),
        DrCase::Case2 => match dr_cvar_case2(h_val, samples, spec) {
            Ok(est) => Ok(est),
            Err(RiskError::ProgramFailed { .. }) => {
                let mut est = dr_cvar_case1(h_val, samples, spec)?;
                est.case1_fallback = true;
                Ok(est)
            }
            Err(other) => Err(other),
        },
    }
}

/// Worst-case CVaR plus its gradient with respect to the state, chained
/// through the additive scalar channel: the value moves with `h` at rate
/// `d_value_d_h`, and `h` moves with the state along the barrier gradient.
pub fn risk_gradient(
    barrier_eval: &BarrierEval,
    samples: &SampleSet,
    spec: &AmbiguitySpec,
) -> Result<(RiskEstimate, DVector<f64>), RiskError> {
    let estimate = dr_cvar(barrier_eval.value, samples, spec)?;
    let gradient = &barrier_eval.gradient * estimate.d_value_d_h;
    Ok((estimate, gradient))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec_case1() -> AmbiguitySpec {
        AmbiguitySpec {
            alpha: 0.95,
            lambda_penalty: 1.0,
            lower_bound: -0.3,
            upper_bound: 0.3,
            case_selector: DrCase::Case1,
            wasserstein_radius: 0.0,
        }
    }

    #[test]
    fn var_is_median_order_statistic() {
        assert_eq!(empirical_var(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 2.0);
    }

    #[test]
    fn var_of_constant_samples() {
        for alpha in [0.1, 0.5, 0.9, 0.99] {
            assert_eq!(empirical_var(&[2.5; 7], alpha).unwrap(), 2.5);
        }
    }

    #[test]
    fn cvar_of_constant_samples() {
        let (value, eta) = empirical_cvar(&[3.0; 5], 0.9).unwrap();
        assert_relative_eq!(value, 3.0, epsilon = 1e-7);
        assert_relative_eq!(eta, 3.0, epsilon = 1e-6);
    }

    #[test]
    fn cvar_at_tiny_alpha_is_the_mean() {
        let values = [0.4, -1.0, 2.0, 0.1, -0.6];
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let (value, _) = empirical_cvar(&values, 1e-9).unwrap();
        assert_relative_eq!(value, mean, epsilon = 1e-6);
    }

    #[test]
    fn wasserstein_identical_is_zero() {
        let p = [0.1, -0.4, 0.9];
        assert_relative_eq!(wasserstein_1d(&p, &p).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn wasserstein_translation() {
        let p = [0.1, -0.4, 0.9, 0.2];
        let q: Vec<f64> = p.iter().map(|v| v + 0.7).collect();
        assert_relative_eq!(wasserstein_1d(&p, &q).unwrap(), 0.7, epsilon = 1e-12);
    }

    #[test]
    fn wasserstein_unequal_sizes_by_replication() {
        // {0} vs {0, 1}: mass 1/2 moves distance 1 -> 0.5.
        assert_relative_eq!(
            wasserstein_1d(&[0.0], &[0.0, 1.0]).unwrap(),
            0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn case1_is_worst_shifted_sample() {
        let samples = SampleSet::from_values(vec![-0.1, 0.0, 0.1]).unwrap();
        let est = dr_cvar_case1(-1.0, &samples, &spec_case1()).unwrap();
        assert_relative_eq!(est.value, -0.9, epsilon = 1e-7);
        assert_relative_eq!(est.eta_star, -0.9, epsilon = 1e-5);
        for s in &est.slack_s {
            assert!(s.abs() < 1e-6);
        }
        assert_relative_eq!(est.d_value_d_h, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn case1_zero_noise_collapses_to_h() {
        let samples = SampleSet::from_values(vec![0.0; 4]).unwrap();
        let est = dr_cvar_case1(-2.5, &samples, &spec_case1()).unwrap();
        assert_relative_eq!(est.value, -2.5, epsilon = 1e-7);
    }

    #[test]
    fn case2_degenerate_noise_collapses_to_h() {
        let samples = SampleSet::from_values(vec![0.0; 3]).unwrap();
        let spec = AmbiguitySpec {
            lower_bound: 0.0,
            upper_bound: 0.0,
            case_selector: DrCase::Case2,
            ..spec_case1()
        };
        let est = dr_cvar_case2(1.25, &samples, &spec).unwrap();
        assert_relative_eq!(est.value, 1.25, epsilon = 1e-6);
        assert_relative_eq!(est.d_value_d_h, 1.0, epsilon = 1e-5);
    }

    #[test]
    fn case2_rejects_samples_outside_bounds() {
        let samples = SampleSet::from_values(vec![0.5]).unwrap();
        let spec = AmbiguitySpec {
            case_selector: DrCase::Case2,
            ..spec_case1()
        };
        assert!(matches!(
            dr_cvar_case2(0.0, &samples, &spec),
            Err(RiskError::BadSpec(_))
        ));
    }

    #[test]
    fn dominance_chain_holds() {
        let samples = SampleSet::draw(25, 0.0, 0.1, 7).unwrap();
        let h_val = -0.4;
        let shifted: Vec<f64> = samples.samples().iter().map(|w| h_val + w).collect();
        let mean = shifted.iter().sum::<f64>() / shifted.len() as f64;
        let (cvar, _) = empirical_cvar(&shifted, 0.95).unwrap();
        let worst = dr_cvar_case1(h_val, &samples, &spec_case1()).unwrap().value;
        assert!(mean <= cvar + 1e-9);
        assert!(cvar <= worst + 1e-9);
    }

    #[test]
    fn truncated_draws_respect_bounds() {
        let set = SampleSet::draw(500, 0.2, 0.1, 11).unwrap();
        let (lo, hi) = set.truncation_bounds();
        assert!(set.samples().iter().all(|&w| w >= lo && w <= hi));
    }

    #[test]
    fn zero_std_draws_are_constant() {
        let set = SampleSet::draw(5, 0.3, 0.0, 1).unwrap();
        assert!(set.samples().iter().all(|&w| w == 0.3));
    }

    #[test]
    fn draws_are_seed_deterministic() {
        let a = SampleSet::draw(50, 0.0, 0.1, 9).unwrap();
        let b = SampleSet::draw(50, 0.0, 0.1, 9).unwrap();
        assert_eq!(a.samples(), b.samples());
    }
}
