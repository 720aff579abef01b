//! Synthetic cohorts for the two simulation scenarios.
//!
//! Biomarker: `Y_ij = beta0 + b0 + (beta1 + b1) s + eps`, `b ~ MVN(0, D)`,
//! on the grid `0, 0.5, ..., 10`. Event times come from a Weibull baseline
//! `lambda v s^(v-1)` with proportional effects `gamma1 w1 + gamma2 w2` and an
//! association `alpha` on the current biomarker mean.
//!
//! Two event-time generators are provided:
//!
//! - [`GeneratorMode::ClosedForm`] uses the closed-form inverse cumulative
//!   hazard of the reference design verbatim ([`closed_form_event_time`]);
//! - [`GeneratorMode::Numeric`] inverts the exact cumulative hazard integral
//!   by root finding ([`invert_numeric_hazard`]).
//!
//! The two do not describe the same hazard for general `v`; both are kept so
//! the difference can be measured.

// Unused when std is linked: its inherent float methods take precedence.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::{Distribution, Normal, Open01, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Cohort, DataError, LongitudinalRecord, SurvivalRecord};
use crate::math::Sym2;
use crate::quadrature::{adaptive_gk15, QuadError};
use crate::seed::SeedKey;

/// Resampling budget for the closed-form generator's domain failures.
pub const MAX_DOMAIN_RESAMPLES: usize = 100;
/// Bracket expansion limit for the numeric inversion.
pub const MAX_BRACKET_TIME: f64 = 1e6;

const W1_HALF_RANGE: f64 = 1.73;
const W2_SD: f64 = 0.7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("closed-form event time undefined: {0}")]
    Domain(&'static str),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error("could not bracket cumulative hazard target {target} below t = {limit}")]
    Bracket { target: f64, limit: f64 },
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalParams {
    pub beta0: f64,
    pub beta1: f64,
    pub tau0: f64,
    pub tau1: f64,
    pub tau01: f64,
    pub sigma: f64,
    #[serde(default = "default_time_grid")]
    pub time_grid: Vec<f64>,
}

pub fn default_time_grid() -> Vec<f64> {
    (0..=20).map(|k| 0.5 * k as f64).collect()
}

impl LongitudinalParams {
    /// Generating values of the longitudinal design.
    pub fn reference() -> Self {
        LongitudinalParams {
            beta0: -1.35,
            beta1: 0.3,
            tau0: 0.27,
            tau1: 0.08,
            tau01: 0.2,
            sigma: 0.25,
            time_grid: default_time_grid(),
        }
    }

    pub fn covariance(&self) -> Sym2 {
        Sym2::new(self.tau0 * self.tau0, self.tau0 * self.tau1 * self.tau01, self.tau1 * self.tau1)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.tau0 >= 0.0 && self.tau1 >= 0.0 && self.sigma >= 0.0) {
            return Err(SimError::Params("tau0, tau1, sigma must be non-negative".into()));
        }
        if !(self.tau01.abs() <= 1.0) {
            return Err(SimError::Params("tau01 must lie in [-1, 1]".into()));
        }
        if self.time_grid.windows(2).any(|w| !(w[0] < w[1])) || self.time_grid.iter().any(|t| !(*t >= 0.0)) {
            return Err(SimError::Params("time grid must be non-negative and strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventParams {
    pub lambda: f64,
    pub v: f64,
    pub alpha: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub censor_upper: f64,
}

impl EventParams {
    pub fn scenario1() -> Self {
        EventParams { lambda: 0.5, v: 1.03, alpha: 4.5, gamma1: 0.5, gamma2: 1.5, censor_upper: 7.0 }
    }

    pub fn scenario2() -> Self {
        EventParams { lambda: 0.5, v: 1.03, alpha: 4.5, gamma1: 3.5, gamma2: 3.5, censor_upper: 4.0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.lambda > 0.0 && self.v > 0.0) {
            return Err(SimError::Params("lambda and v must be positive".into()));
        }
        if !(self.censor_upper > 1.0) {
            return Err(SimError::Params("censor_upper must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMode {
    #[default]
    ClosedForm,
    Numeric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub longitudinal: LongitudinalParams,
    pub event: EventParams,
    pub n: usize,
    pub t_landmark: f64,
    pub u_horizon: f64,
}

impl ScenarioConfig {
    /// Scenario 1: biomarker association dominates (`C = 7`, `t = 1`, `u = 4`).
    pub fn scenario1() -> Self {
        ScenarioConfig {
            longitudinal: LongitudinalParams::reference(),
            event: EventParams::scenario1(),
            n: 2000,
            t_landmark: 1.0,
            u_horizon: 4.0,
        }
    }

    /// Scenario 2: covariate and biomarker effects of similar size
    /// (`C = 4`, `t = 1`, `u = 3`).
    pub fn scenario2() -> Self {
        ScenarioConfig {
            longitudinal: LongitudinalParams::reference(),
            event: EventParams::scenario2(),
            n: 2000,
            t_landmark: 1.0,
            u_horizon: 3.0,
        }
    }

    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.longitudinal.validate()?;
        self.event.validate()?;
        if !(self.t_landmark > 0.0 && self.u_horizon > self.t_landmark) {
            return Err(SimError::Params("need u_horizon > t_landmark > 0".into()));
        }
        Ok(())
    }
}

/// Subject-level inputs of the event-time model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectDraw {
    pub w1: f64,
    pub w2: f64,
    pub b0: f64,
    pub b1: f64,
}

/// `b ~ MVN(0, D)` through the Cholesky factor of `D`.
pub fn draw_subject_effects<R: Rng + ?Sized>(params: &LongitudinalParams, rng: &mut R) -> (f64, f64) {
    let z1: f64 = StandardNormal.sample(rng);
    let z2: f64 = StandardNormal.sample(rng);
    let r = params.tau01.clamp(-1.0, 1.0);
    let b0 = params.tau0 * z1;
    let b1 = params.tau1 * (r * z1 + (1.0 - r * r).max(0.0).sqrt() * z2);
    (b0, b1)
}

/// Noisy biomarker values on the parameter grid.
pub fn generate_longitudinal<R: Rng + ?Sized>(
    params: &LongitudinalParams,
    subject_id: &str,
    effects: (f64, f64),
    rng: &mut R,
) -> Vec<LongitudinalRecord> {
    let (b0, b1) = effects;
    params
        .time_grid
        .iter()
        .map(|&s| {
            let z: f64 = if params.sigma > 0.0 { StandardNormal.sample(rng) } else { 0.0 };
            let eps = params.sigma * z;
            LongitudinalRecord {
                subject_id: subject_id.to_string(),
                time: s,
                value: params.beta0 + b0 + (params.beta1 + b1) * s + eps,
            }
        })
        .collect()
}

fn linear_predictor(d: &SubjectDraw, ev: &EventParams, long: &LongitudinalParams) -> f64 {
    ev.gamma1 * d.w1 + ev.gamma2 * d.w2 + ev.alpha * (long.beta0 + d.b0)
}

/// Closed-form cumulative hazard of the reference design:
/// `exp(g'w + alpha (beta0 + b0)) / (1 + v) * lambda v alpha *
/// (exp((beta1 + b1) t^(1+v)) - 1)`.
pub fn closed_form_cumulative_hazard(t: f64, d: &SubjectDraw, ev: &EventParams, long: &LongitudinalParams) -> f64 {
    let e = linear_predictor(d, ev, long).exp();
    let v = ev.v;
    e / (1.0 + v) * ev.lambda * v * ev.alpha * (((long.beta1 + d.b1) * t.powf(1.0 + v)).exp() - 1.0)
}

/// Closed-form event time for a uniform draw `u` in `(0, 1]`:
/// `T = [log{-log(u)(1+v) / (exp(g'w + alpha(beta0+b0)) lambda v alpha) + 1}
/// / (beta1 + b1)]^(1/(1+v))`.
pub fn closed_form_event_time(u: f64, d: &SubjectDraw, ev: &EventParams, long: &LongitudinalParams) -> Result<f64, SimError> {
    if !(u > 0.0 && u <= 1.0) {
        return Err(SimError::Domain("uniform draw outside (0, 1]"));
    }
    let v = ev.v;
    let denom = linear_predictor(d, ev, long).exp() * ev.lambda * v * ev.alpha;
    let inner = -u.ln() * (1.0 + v) / denom + 1.0;
    if !(inner > 0.0) || !inner.is_finite() {
        return Err(SimError::Domain("log argument is not positive and finite"));
    }
    let bracket = inner.ln() / (long.beta1 + d.b1);
    if !(bracket >= 0.0) || !bracket.is_finite() {
        return Err(SimError::Domain("bracketed quantity is negative or not finite"));
    }
    Ok(bracket.powf(1.0 / (1.0 + v)))
}

/// Hazard of the exact model at time `s`.
pub fn hazard(s: f64, d: &SubjectDraw, ev: &EventParams, long: &LongitudinalParams) -> f64 {
    let m = long.beta0 + d.b0 + (long.beta1 + d.b1) * s;
    (ev.gamma1 * d.w1 + ev.gamma2 * d.w2 + ev.alpha * m).exp() * ev.lambda * ev.v * s.powf(ev.v - 1.0)
}

/// `H(t) = int_0^t hazard(s) ds` by adaptive Gauss-Kronrod, absolute
/// tolerance 1e-10.
pub fn numeric_cumulative_hazard(
    t: f64,
    d: &SubjectDraw,
    ev: &EventParams,
    long: &LongitudinalParams,
) -> Result<f64, SimError> {
    if t <= 0.0 {
        return Ok(0.0);
    }
    Ok(adaptive_gk15(|s| hazard(s, d, ev, long), 0.0, t, 1e-10, 1e-14, 4000)?)
}

/// Solves `H(t) = target` by bracket expansion followed by safeguarded
/// Newton steps (the derivative is the hazard itself).
pub fn invert_numeric_hazard(
    target: f64,
    d: &SubjectDraw,
    ev: &EventParams,
    long: &LongitudinalParams,
) -> Result<f64, SimError> {
    if !(target > 0.0) {
        return Ok(0.0);
    }
    // Relative for small targets so that t, not only H, is accurate.
    let tol = 1e-8 * target.min(1.0);
    // H evaluations that overflow count as "above target".
    let eval = |t: f64| -> Result<f64, SimError> {
        match numeric_cumulative_hazard(t, d, ev, long) {
            Ok(h) => Ok(h),
            Err(SimError::Quadrature(QuadError::NonFinite { .. })) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };
    let mut lo = 0.0;
    let mut h_lo = 0.0;
    let mut hi = 1.0;
    let mut h_hi = eval(hi)?;
    while h_hi < target {
        if hi >= MAX_BRACKET_TIME {
            return Err(SimError::Bracket { target, limit: MAX_BRACKET_TIME });
        }
        lo = hi;
        h_lo = h_hi;
        hi = (hi * 2.0).min(MAX_BRACKET_TIME);
        h_hi = eval(hi)?;
    }
    if (h_hi - target).abs() <= tol {
        return Ok(hi);
    }
    let mut t = if h_hi.is_finite() && h_hi > h_lo {
        lo + (hi - lo) * (target - h_lo) / (h_hi - h_lo)
    } else {
        0.5 * (lo + hi)
    };
    for _ in 0..200 {
        let h = eval(t)?;
        let f = h - target;
        if f.abs() <= tol {
            return Ok(t);
        }
        if f < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let slope = hazard(t, d, ev, long);
        let newton = t - f / slope;
        t = if slope > 0.0 && newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 8.0 * f64::EPSILON * hi {
            return Ok(t);
        }
    }
    Ok(t)
}

/// Counters describing how the generator treated problematic subjects.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationStats {
    /// Uniform draws discarded because the closed-form time was undefined.
    pub domain_resamples: usize,
    /// Subjects whose event time was set to +infinity (always censored).
    pub infinite_event_times: usize,
    pub events: usize,
}

#[derive(Debug, Clone)]
pub struct GeneratedCohort {
    pub cohort: Cohort,
    pub stats: GenerationStats,
}

pub fn subject_id(index: usize, n: usize) -> String {
    let mut width = 4;
    let mut m = n.max(1) - 1;
    let mut digits = 1;
    while m >= 10 {
        m /= 10;
        digits += 1;
    }
    if digits > width {
        width = digits;
    }
    alloc::format!("S{index:0width$}")
}

/// Simulates `config.n` subjects. Each subject uses its own RNG stream keyed
/// by `(seed, index)`, so the result does not depend on evaluation order.
pub fn generate_scenario(config: &ScenarioConfig, seed: u64, mode: GeneratorMode) -> Result<GeneratedCohort, SimError> {
    config.validate()?;
    let long = &config.longitudinal;
    let ev = &config.event;
    let w1_dist = Uniform::new(-W1_HALF_RANGE, W1_HALF_RANGE).expect("valid range");
    let w2_dist = Normal::new(0.0, W2_SD).expect("valid sd");
    let censor_dist = Uniform::new(1.0, ev.censor_upper).map_err(|_| SimError::Params("censor range".into()))?;

    let mut stats = GenerationStats::default();
    let mut survival = Vec::with_capacity(config.n);
    let mut longitudinal = Vec::with_capacity(config.n * long.time_grid.len());
    for i in 0..config.n {
        let id = subject_id(i, config.n);
        let mut rng = SeedKey::new(seed).with_u64(i as u64).rng();
        let (b0, b1) = draw_subject_effects(long, &mut rng);
        let w1 = w1_dist.sample(&mut rng);
        let w2 = w2_dist.sample(&mut rng);
        let draw = SubjectDraw { w1, w2, b0, b1 };
        let censor = censor_dist.sample(&mut rng);

        let event_time = match mode {
            GeneratorMode::ClosedForm => {
                let mut t_star = f64::INFINITY;
                for attempt in 0..=MAX_DOMAIN_RESAMPLES {
                    let u: f64 = rng.sample(Open01);
                    match closed_form_event_time(u, &draw, ev, long) {
                        Ok(t) => {
                            t_star = t;
                            break;
                        }
                        Err(SimError::Domain(_)) if attempt < MAX_DOMAIN_RESAMPLES => stats.domain_resamples += 1,
                        Err(SimError::Domain(_)) => {}
                        Err(e) => return Err(e),
                    }
                }
                t_star
            }
            GeneratorMode::Numeric => {
                let u: f64 = rng.sample(Open01);
                match invert_numeric_hazard(-u.ln(), &draw, ev, long) {
                    Ok(t) => t,
                    // the cumulative hazard never reaches the target
                    Err(SimError::Bracket { .. }) => f64::INFINITY,
                    Err(e) => return Err(e),
                }
            }
        };
        if event_time.is_infinite() {
            stats.infinite_event_times += 1;
        }
        let event = event_time <= censor;
        let observed = if event { event_time } else { censor };
        // An event time of exactly zero (u = 1) cannot be observed.
        let observed = observed.max(f64::MIN_POSITIVE);
        if event {
            stats.events += 1;
        }
        let mut records = generate_longitudinal(long, &id, (b0, b1), &mut rng);
        records.retain(|r| r.time < observed);
        longitudinal.extend(records);
        survival.push(SurvivalRecord { subject_id: id, observed_time: observed, event, covariates: alloc::vec![w1, w2] });
    }
    let cohort = Cohort::new(alloc::vec!["w1".into(), "w2".into()], survival, longitudinal)?;
    if stats.infinite_event_times > 0 {
        log::warn!("{} subjects had no finite event time and were censored", stats.infinite_event_times);
    }
    Ok(GeneratedCohort { cohort, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn zero_draw() -> SubjectDraw {
        SubjectDraw { w1: 0.0, w2: 0.0, b0: 0.0, b1: 0.0 }
    }

    #[test]
    fn degenerate_covariance_gives_zero_effects() {
        let p = LongitudinalParams { tau0: 0.0, tau1: 0.0, ..LongitudinalParams::reference() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(draw_subject_effects(&p, &mut rng), (0.0, 0.0));
        }
    }

    #[test]
    fn effect_correlation_matches_tau01() {
        let p = LongitudinalParams::reference();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let draws: Vec<(f64, f64)> = (0..n).map(|_| draw_subject_effects(&p, &mut rng)).collect();
        let m0 = draws.iter().map(|d| d.0).sum::<f64>() / n as f64;
        let m1 = draws.iter().map(|d| d.1).sum::<f64>() / n as f64;
        let (mut s00, mut s11, mut s01) = (0.0, 0.0, 0.0);
        for (a, b) in &draws {
            s00 += (a - m0) * (a - m0);
            s11 += (b - m1) * (b - m1);
            s01 += (a - m0) * (b - m1);
        }
        let corr = s01 / (s00 * s11).sqrt();
        assert!((corr - 0.2).abs() < 0.01, "corr = {corr}");
    }

    #[test]
    fn noiseless_trajectory_values() {
        let p = LongitudinalParams { sigma: 0.0, ..LongitudinalParams::reference() };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let recs = generate_longitudinal(&p, "A", (0.0, 0.0), &mut rng);
        assert_eq!(recs.len(), 21);
        assert_relative_eq!(recs[2].value, -1.05, epsilon = 1e-12);
        assert_eq!(recs[2].time, 1.0);
        let recs = generate_longitudinal(&p, "A", (0.4, -0.1), &mut rng);
        assert_relative_eq!(recs[0].value, -1.35 + 0.4, epsilon = 1e-15);
    }

    #[test]
    fn closed_form_time_at_u_one_is_zero() {
        let ev = EventParams::scenario1();
        let long = LongitudinalParams::reference();
        assert_eq!(closed_form_event_time(1.0, &zero_draw(), &ev, &long).unwrap(), 0.0);
    }

    #[test]
    fn closed_form_time_regression_pin() {
        // Hand evaluation at u = 0.5, w = b = 0, scenario 1:
        // E = exp(4.5 * -1.35) = exp(-6.075)
        // inner = ln 2 * 2.03 / (E * 0.5 * 1.03 * 4.5) + 1
        // T = (ln(inner) / 0.3)^(1/2.03)
        let e = (-6.075f64).exp();
        let inner = 2f64.ln() * 2.03 / (e * 0.5 * 1.03 * 4.5) + 1.0;
        let expected = (inner.ln() / 0.3).powf(1.0 / 2.03);
        let t = closed_form_event_time(0.5, &zero_draw(), &EventParams::scenario1(), &LongitudinalParams::reference())
            .unwrap();
        assert_relative_eq!(t, expected, max_relative = 1e-14);
        assert_relative_eq!(t, 4.220_546_729_056_927, max_relative = 1e-12);
    }

    #[test]
    fn closed_form_hazard_values() {
        let ev = EventParams::scenario1();
        let long = LongitudinalParams::reference();
        let d = zero_draw();
        assert_eq!(closed_form_cumulative_hazard(0.0, &d, &ev, &long), 0.0);
        assert!(closed_form_cumulative_hazard(2.0, &d, &ev, &long) > closed_form_cumulative_hazard(1.0, &d, &ev, &long));
        // exp(-6.075) / 2.03 * 0.5 * 1.03 * 4.5 * (exp(0.3) - 1)
        assert_relative_eq!(
            closed_form_cumulative_hazard(1.0, &d, &ev, &long),
            9.184_965_702_341_063e-4,
            max_relative = 1e-12
        );
    }

    #[test]
    fn closed_form_domain_error_for_negative_slope() {
        let ev = EventParams::scenario1();
        let long = LongitudinalParams::reference();
        let d = SubjectDraw { b1: -0.5, ..zero_draw() };
        assert!(matches!(closed_form_event_time(0.5, &d, &ev, &long), Err(SimError::Domain(_))));
    }

    #[test]
    fn numeric_hazard_weibull_and_exponential_limits() {
        let long = LongitudinalParams::reference();
        let d = SubjectDraw { w1: 0.3, w2: -0.2, b0: 0.1, b1: 0.05 };
        let ev = EventParams { alpha: 0.0, ..EventParams::scenario1() };
        let t: f64 = 2.7;
        let expected = ev.lambda * (ev.gamma1 * d.w1 + ev.gamma2 * d.w2).exp() * t.powf(ev.v);
        assert_relative_eq!(numeric_cumulative_hazard(t, &d, &ev, &long).unwrap(), expected, epsilon = 1e-10);
        assert_eq!(numeric_cumulative_hazard(0.0, &d, &ev, &long).unwrap(), 0.0);

        let ev = EventParams { v: 1.0, ..EventParams::scenario1() };
        let c = ev.alpha * (long.beta1 + d.b1);
        let lead = ev.lambda * (ev.gamma1 * d.w1 + ev.gamma2 * d.w2 + ev.alpha * (long.beta0 + d.b0)).exp();
        let expected = lead * ((c * t).exp() - 1.0) / c;
        assert_relative_eq!(numeric_cumulative_hazard(t, &d, &ev, &long).unwrap(), expected, max_relative = 1e-10);
    }

    #[test]
    fn numeric_inversion_round_trip() {
        let long = LongitudinalParams::reference();
        let ev = EventParams::scenario1();
        let d = SubjectDraw { w1: 0.5, w2: 0.1, b0: -0.1, b1: 0.02 };
        let target = numeric_cumulative_hazard(2.5, &d, &ev, &long).unwrap();
        let t = invert_numeric_hazard(target, &d, &ev, &long).unwrap();
        assert!((t - 2.5).abs() < 1e-6);

        let ev0 = EventParams { alpha: 0.0, ..ev.clone() };
        let s: f64 = 1.7;
        let target = ev0.lambda * (ev0.gamma1 * d.w1 + ev0.gamma2 * d.w2).exp() * s.powf(ev0.v);
        assert!((invert_numeric_hazard(target, &d, &ev0, &long).unwrap() - s).abs() < 1e-7);

        let tiny = invert_numeric_hazard(1e-12, &d, &ev, &long).unwrap();
        assert!(tiny < 1e-3);
    }

    #[test]
    fn subject_ids_sort_in_index_order() {
        assert_eq!(subject_id(7, 2000), "S0007");
        assert_eq!(subject_id(7, 20000), "S00007");
        assert!(subject_id(99, 200) < subject_id(100, 200));
    }

    #[test]
    fn empty_scenario() {
        let g = generate_scenario(&ScenarioConfig::scenario1().with_n(0), 1, GeneratorMode::ClosedForm).unwrap();
        assert!(g.cohort.is_empty());
    }

    #[test]
    fn generated_cohort_is_deterministic_and_valid() {
        let cfg = ScenarioConfig::scenario1().with_n(200);
        let a = generate_scenario(&cfg, 9, GeneratorMode::ClosedForm).unwrap();
        let b = generate_scenario(&cfg, 9, GeneratorMode::ClosedForm).unwrap();
        assert_eq!(a.cohort, b.cohort);
        for s in a.cohort.subjects() {
            assert!(s.observed_time > 0.0);
            assert!(s.measurements.iter().all(|m| m.time < s.observed_time));
            assert_eq!(s.measurements[0].time, 0.0);
        }
        let n = generate_scenario(&cfg, 9, GeneratorMode::Numeric).unwrap();
        assert_eq!(n.cohort.len(), 200);
    }
}
