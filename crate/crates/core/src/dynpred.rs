//! Dynamic survival probabilities `pi(u | t) = P(T* >= u | T* > t, Y(t))`.
//!
//! Monte-Carlo sample `l` pairs posterior draw `l mod L` with a fresh draw
//! of the subject's random effects from `p(b | T* > t, Y(t); theta)` and
//! evaluates the survival ratio `S(u | b) / S(t | b) = exp(-int_t^u h)`.
//! The estimate is the mean ratio. Horizons evaluated together share every
//! random number, so the estimated curve is non-increasing in `u`.
//!
//! The random effects come from [`MH_STEPS`] random-walk Metropolis steps
//! started at the mean of `b` given the history alone, with a proposal
//! shaped like that conditional covariance.

// Unused when std is linked: its inherent float methods take precedence.
#[allow(unused_imports)]
use num_traits::Float;
use alloc::string::String;
use alloc::vec::Vec;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Measurement;
use crate::jointfit::model::{longitudinal_log_density, random_effect_log_density};
use crate::jointfit::{JointModelFit, NodeSet, Theta};
use crate::lme::{conditional_effects_from_stats, SubjectStats};
use crate::math::{mean, sample_sd};
use crate::seed::SeedKey;

pub const DEFAULT_N_MC: usize = 400;
/// Metropolis steps per random-effect draw.
pub const MH_STEPS: usize = 25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictionError {
    #[error("horizon {u} precedes landmark {t}")]
    InvalidHorizon { t: f64, u: f64 },
    #[error("measurement at {time} is after the landmark {t}")]
    HistoryAfterLandmark { time: f64, t: f64 },
    #[error("expected {expected} covariate value(s), found {found}")]
    CovariateArity { expected: usize, found: usize },
    #[error("the fit has no posterior draws")]
    EmptyFit,
    #[error("n_mc must be at least 1")]
    InvalidMcSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRequest {
    pub subject_id: String,
    /// Measurements with `time <= t`.
    pub history: Vec<Measurement>,
    /// Baseline covariates in the fit's model order.
    pub covariates: Vec<f64>,
    pub t: f64,
    pub u: f64,
    pub n_mc: usize,
    pub seed: u64,
    /// Return the per-sample survival ratios.
    #[serde(default)]
    pub keep_ratios: bool,
}

impl PredictionRequest {
    pub fn new(subject_id: impl Into<String>, history: Vec<Measurement>, covariates: Vec<f64>, t: f64, u: f64, seed: u64) -> Self {
        PredictionRequest { subject_id: subject_id.into(), history, covariates, t, u, n_mc: DEFAULT_N_MC, seed, keep_ratios: false }
    }

    fn validate(&self, fit: &JointModelFit, horizons: &[f64]) -> Result<(), PredictionError> {
        if fit.draws.is_empty() {
            return Err(PredictionError::EmptyFit);
        }
        if self.n_mc == 0 {
            return Err(PredictionError::InvalidMcSize);
        }
        for &u in horizons {
            if !(u >= self.t) || !u.is_finite() {
                return Err(PredictionError::InvalidHorizon { t: self.t, u });
            }
        }
        if let Some(m) = self.history.iter().find(|m| m.time > self.t) {
            return Err(PredictionError::HistoryAfterLandmark { time: m.time, t: self.t });
        }
        let expected = fit.spec.covariates.len();
        if self.covariates.len() != expected {
            return Err(PredictionError::CovariateArity { expected, found: self.covariates.len() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub subject_id: String,
    pub t: f64,
    pub u: f64,
    pub pi_hat: f64,
    pub mc_std_error: f64,
    /// `u` lies beyond the last spline knot, where the log baseline hazard
    /// is held flat.
    pub extrapolated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratios: Option<Vec<f64>>,
}

/// Random-walk Metropolis sampler for `p(b | T* > t, Y(t); theta)`.
#[derive(Debug, Clone)]
pub struct EffectsSampler<'a> {
    theta: &'a Theta,
    stats: &'a SubjectStats,
    grid: &'a NodeSet,
    lh0: Vec<f64>,
    eta_w: f64,
    mode: [f64; 2],
    chol: [f64; 3],
}

impl<'a> EffectsSampler<'a> {
    /// `grid` must cover `[0, t]` for the fit's spline.
    pub fn new(theta: &'a Theta, stats: &'a SubjectStats, grid: &'a NodeSet, covariates: &[f64]) -> Self {
        let (mode, cov) = conditional_effects_from_stats(theta.beta, &theta.d, theta.sigma, stats);
        let scale = 2.38 * 2.38 / 2.0;
        let cov = cov.scale(scale);
        let chol = cov.cholesky().unwrap_or([cov.a.max(0.0).sqrt(), 0.0, cov.c.max(0.0).sqrt()]);
        let mut lh0 = Vec::new();
        grid.log_h0(&theta.h0, &mut lh0);
        let eta_w = theta.gamma.iter().zip(covariates).map(|(g, w)| g * w).sum();
        EffectsSampler { theta, stats, grid, lh0, eta_w, mode, chol }
    }

    /// Mean of `b` given the history alone; the chain's starting point.
    pub fn mode(&self) -> [f64; 2] {
        self.mode
    }

    /// `log p(Y | b) + log S(t | b) + log p(b)`.
    pub fn log_target(&self, b: [f64; 2]) -> f64 {
        let th = self.theta;
        let line = [th.beta[0] + b[0], th.beta[1] + b[1]];
        longitudinal_log_density(self.stats, line, th.sigma) - self.grid.integral(&self.lh0, self.eta_w, th.alpha, line)
            + random_effect_log_density(b, &th.d)
    }

    /// `steps` Metropolis steps from `start`.
    pub fn run<R: Rng + ?Sized>(&self, start: [f64; 2], steps: usize, rng: &mut R) -> [f64; 2] {
        let mut b = start;
        let mut current = self.log_target(b);
        let l = self.chol;
        for _ in 0..steps {
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            let cand = [b[0] + l[0] * z0, b[1] + l[1] * z0 + l[2] * z1];
            let proposed = self.log_target(cand);
            let u: f64 = rng.random();
            if proposed.is_finite() && (u.ln() < proposed - current || !current.is_finite()) {
                b = cand;
                current = proposed;
            }
        }
        b
    }
}

/// One draw of the subject's random effects under `theta`.
pub fn sample_subject_effects<R: Rng + ?Sized>(
    fit: &JointModelFit,
    theta: &Theta,
    request: &PredictionRequest,
    rng: &mut R,
) -> [f64; 2] {
    if !fit.longitudinal {
        return [0.0, 0.0];
    }
    let stats = SubjectStats::from_measurements(&request.history);
    let grid = NodeSet::new(&fit.baseline, 0.0, request.t);
    let sampler = EffectsSampler::new(theta, &stats, &grid, &request.covariates);
    sampler.run(sampler.mode(), MH_STEPS, rng)
}

/// `pi(u | t)` for `request.u`.
pub fn predict_survival(fit: &JointModelFit, request: &PredictionRequest) -> Result<PredictionResult, PredictionError> {
    let mut out = predict_curve(fit, request, &[request.u])?;
    Ok(out.remove(0))
}

/// `pi(u | t)` at every horizon in `horizons` with common random numbers;
/// `request.u` is ignored.
pub fn predict_curve(
    fit: &JointModelFit,
    request: &PredictionRequest,
    horizons: &[f64],
) -> Result<Vec<PredictionResult>, PredictionError> {
    request.validate(fit, horizons)?;
    let t = request.t;
    let n_mc = request.n_mc;
    let stats = SubjectStats::from_measurements(&request.history);
    let grid_t = NodeSet::new(&fit.baseline, 0.0, t);
    let grids: Vec<NodeSet> = horizons.iter().map(|&u| NodeSet::new(&fit.baseline, t, u)).collect();
    let thetas: Vec<Theta> = (0..fit.n_draws().min(n_mc)).map(|l| fit.theta(l)).collect();
    let mut rng = SeedKey::new(request.seed).rng();
    let mut ratios: Vec<Vec<f64>> = horizons.iter().map(|_| Vec::with_capacity(n_mc)).collect();
    let mut lh0 = Vec::new();
    for l in 0..n_mc {
        let th = &thetas[l % thetas.len()];
        let b = if fit.longitudinal {
            let sampler = EffectsSampler::new(th, &stats, &grid_t, &request.covariates);
            sampler.run(sampler.mode(), MH_STEPS, &mut rng)
        } else {
            [0.0, 0.0]
        };
        let line = [th.beta[0] + b[0], th.beta[1] + b[1]];
        let eta_w: f64 = th.gamma.iter().zip(&request.covariates).map(|(g, w)| g * w).sum();
        for (grid, r) in grids.iter().zip(ratios.iter_mut()) {
            grid.log_h0(&th.h0, &mut lh0);
            r.push((-grid.integral(&lh0, eta_w, th.alpha, line)).exp());
        }
    }
    let boundary = fit.baseline.boundary[1];
    Ok(horizons
        .iter()
        .zip(ratios)
        .map(|(&u, r)| {
            let se = if r.len() > 1 { sample_sd(&r) / (r.len() as f64).sqrt() } else { 0.0 };
            PredictionResult {
                subject_id: request.subject_id.clone(),
                t,
                u,
                pi_hat: mean(&r).clamp(0.0, 1.0),
                mc_std_error: se,
                extrapolated: u > boundary,
                ratios: if request.keep_ratios { Some(r) } else { None },
            }
        })
        .collect())
}
