//! Bayesian joint model of a linear biomarker trajectory and a
//! proportional-hazards event time with a B-spline log-baseline hazard.
//!
//! Fitting runs adaptive Metropolis-within-Gibbs; see [`sampler`] for the
//! block structure. Priors:
//!
//! - `beta, gamma, alpha ~ N(0, 10^2)`;
//! - spline coefficients `~ N(0, 10^2)` plus a first-order random-walk
//!   penalty with SD 1 between neighbours;
//! - `sigma, tau0, tau1 ~ Half-Normal(0, 5^2)`, correlation `~ U(-1, 1)`.
//!
//! The spline intercept is held at 0: the clamped basis sums to one, so a
//! free intercept would only duplicate a common shift of the coefficients.

pub mod diagnostics;
pub mod model;
pub mod sampler;
pub mod spline;

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Cohort;
use crate::lme::LmeError;
use crate::math::quantile_sorted;

pub use model::{cumulative_hazard, quadrature_nodes, subject_log_likelihood, NodeSet, SubjectInput, Theta};
pub use spline::{log_baseline_hazard, BaselineHazardSpline, LogHazard};

/// Smallest cohort the joint model is fitted to.
pub const MIN_SUBJECTS: usize = 30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JointFitError {
    #[error("invalid baseline spline: {0}")]
    Spline(&'static str),
    #[error("too few subjects for a joint model: need {needed}, found {found}")]
    TooFewSubjects { needed: usize, found: usize },
    #[error("longitudinal submodel failed: {0}")]
    Lme(#[from] LmeError),
    #[error("covariate `{0}` is not in the cohort")]
    UnknownCovariate(String),
    #[error("invalid MCMC configuration: {0}")]
    Config(&'static str),
    #[error("log posterior is not finite at the starting values")]
    NonFiniteStart,
    #[error("draw has {found} columns, expected {expected}")]
    Shape { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_iterations: usize,
    pub n_burnin: usize,
    pub n_thin: usize,
    pub n_chains: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig { n_iterations: 3500, n_burnin: 1500, n_thin: 2, n_chains: 2, seed: 1 }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<(), JointFitError> {
        if self.n_burnin >= self.n_iterations {
            return Err(JointFitError::Config("n_burnin must be below n_iterations"));
        }
        if self.n_thin == 0 {
            return Err(JointFitError::Config("n_thin must be at least 1"));
        }
        if self.n_chains == 0 {
            return Err(JointFitError::Config("n_chains must be at least 1"));
        }
        Ok(())
    }

    /// Retained draws per chain, `ceil((n_iterations - n_burnin) / n_thin)`.
    pub fn draws_per_chain(&self) -> usize {
        (self.n_iterations - self.n_burnin).div_ceil(self.n_thin)
    }
}

/// Treatment of the association parameter `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Association {
    Estimated,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointModelSpec {
    /// Baseline covariates `w_i`, in model order.
    pub covariates: Vec<String>,
    /// Internal knots of the baseline spline.
    pub n_knots: usize,
    pub degree: usize,
    pub association: Association,
    pub mcmc: McmcConfig,
    /// Keep every retained draw of every subject's random effects.
    pub keep_random_effects: bool,
}

impl JointModelSpec {
    pub fn new(covariates: Vec<String>) -> Self {
        JointModelSpec {
            covariates,
            n_knots: 5,
            degree: 3,
            association: Association::Estimated,
            mcmc: McmcConfig::default(),
            keep_random_effects: false,
        }
    }

    pub fn with_mcmc(mut self, mcmc: McmcConfig) -> Self {
        self.mcmc = mcmc;
        self
    }
}

/// Posterior sample of a fitted joint model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointModelFit {
    pub spec: JointModelSpec,
    /// Knot structure; coefficients hold the posterior mean.
    pub baseline: BaselineHazardSpline,
    /// Names of the draw columns, see [`Theta::columns`].
    pub columns: Vec<String>,
    /// Retained draws, chain by chain.
    pub draws: Vec<Vec<f64>>,
    pub draws_per_chain: usize,
    /// False when the cohort had no biomarker measurements; then `beta`,
    /// `D` and the random effects are fixed at 0 and `sigma` at 1.
    pub longitudinal: bool,
    pub subject_ids: Vec<String>,
    pub random_effect_means: Vec<[f64; 2]>,
    /// `[draw][subject]`, present when requested in the spec.
    pub random_effect_draws: Option<Vec<Vec<[f64; 2]>>>,
    /// Post-burn-in acceptance rate per block; `b` averages over subjects.
    pub acceptance_rates: BTreeMap<String, f64>,
    /// Split-chain potential scale reduction of `alpha`.
    pub rhat_alpha: Option<f64>,
}

impl JointModelFit {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn theta(&self, l: usize) -> Theta {
        Theta::from_row(&self.draws[l], self.spec.covariates.len())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_index(name)?;
        Some(self.draws.iter().map(|r| r[j]).collect())
    }

    pub fn posterior_mean(&self, name: &str) -> Option<f64> {
        let c = self.column(name)?;
        Some(crate::math::mean(&c))
    }

    pub fn posterior_sd(&self, name: &str) -> Option<f64> {
        let c = self.column(name)?;
        Some(crate::math::sample_sd(&c))
    }

    /// Equal-tailed credible interval.
    pub fn credible_interval(&self, name: &str, level: f64) -> Option<(f64, f64)> {
        let mut c = self.column(name)?;
        c.sort_by(|a, b| a.total_cmp(b));
        let tail = 0.5 * (1.0 - level);
        Some((quantile_sorted(&c, tail), quantile_sorted(&c, 1.0 - tail)))
    }

    /// Fit made of the given parameter values, e.g. a known model.
    pub fn from_thetas(spec: JointModelSpec, baseline: BaselineHazardSpline, thetas: &[Theta], longitudinal: bool) -> Self {
        JointModelFit {
            columns: Theta::columns(&spec.covariates, baseline.n_basis()),
            draws: thetas.iter().map(Theta::to_row).collect(),
            draws_per_chain: thetas.len(),
            spec,
            baseline,
            longitudinal,
            subject_ids: Vec::new(),
            random_effect_means: Vec::new(),
            random_effect_draws: None,
            acceptance_rates: BTreeMap::new(),
            rhat_alpha: None,
        }
    }

    /// Baseline spline carrying the coefficients of `theta`.
    pub fn spline_for(&self, theta: &Theta) -> BaselineHazardSpline {
        self.baseline.with_coefficients(theta.h0.clone())
    }

    /// Checks the column layout against the spec and the spline.
    pub fn validate_shape(&self) -> Result<(), JointFitError> {
        let expected = Theta::columns(&self.spec.covariates, self.baseline.n_basis());
        if self.columns != expected {
            return Err(JointFitError::Shape { expected: expected.len(), found: self.columns.len() });
        }
        for r in &self.draws {
            if r.len() != expected.len() {
                return Err(JointFitError::Shape { expected: expected.len(), found: r.len() });
            }
        }
        Ok(())
    }
}

/// Fits the joint model to `cohort`.
pub fn fit_joint(cohort: &Cohort, spec: &JointModelSpec) -> Result<JointModelFit, JointFitError> {
    sampler::run(cohort, spec)
}
